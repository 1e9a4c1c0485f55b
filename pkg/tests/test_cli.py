import io
import json

import numpy as np
import pytest

from echomamba import tensor as T
from echomamba.cli import EXIT_INVALID, EXIT_OK, main
from echomamba.data import write_csv_triples
from echomamba.synthetic import planted_cycle, uniform_random


def _run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


@pytest.fixture
def small_run(tmp_path):
    data = tmp_path / "d.csv"
    write_csv_triples(planted_cycle(n_users=30, n_items=10, walk_len=8, seed=0), data)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"dataset.path = {data}\ndataset.format = csv_triples\ndataset.k_core = 2\n"
        "dataset.max_len = 8\nmodel.dim = 8\nmodel.d_state = 4\n"
        "training.batch_size = 16\ntraining.epochs = 2\n"
        f"output.log_path = {tmp_path / 'log.txt'}\n"
        f"output.checkpoint_path = {tmp_path / 'ck.npz'}\n")
    return tmp_path, cfg


def test_ingest_prints_stats(small_run):
    tmp, cfg = small_run
    code, text = _run(["ingest", "--config", str(cfg)])
    assert code == EXIT_OK
    assert json.loads(text) == {"n_users": 30, "n_items": 10, "n_interactions": 240,
                                "avg_length": 8.0}


def test_missing_data_file_exits_1(tmp_path, capsys):
    code, _ = _run(["ingest", "--set", f"dataset.path={tmp_path / 'absent.dat'}"])
    assert code == EXIT_INVALID
    assert "absent.dat" in capsys.readouterr().err


def test_conflicting_flags_exit_1(capsys):
    code, _ = _run(["train", "--no-filter", "--set", "model.filter_per_layer=true",
                    "--set", "model.filter_dropout=0.1"])
    assert code == EXIT_INVALID
    err = capsys.readouterr().err
    assert "model.filter_per_layer" in err and "model.filter_dropout" in err


def test_bad_set_syntax(capsys):
    assert _run(["ingest", "--set", "model.dim"])[0] == EXIT_INVALID


def test_train_echoes_config_and_resumes(small_run):
    tmp, cfg = small_run
    assert _run(["train", "--config", str(cfg), "--set", "output.log_timing=false"])[0] == EXIT_OK
    lines = (tmp / "log.txt").read_text().splitlines()
    header = [l for l in lines if l.startswith("# ")]
    records = [json.loads(l) for l in lines if not l.startswith("#")]
    assert "# model.dim = 8" in header and "# training.epochs = 2" in header
    assert [r["epoch"] for r in records] == [1, 2]
    assert all("wall_seconds" not in r for r in records)

    code, _ = _run(["train", "--config", str(cfg), "--resume", "--set", "training.epochs=3",
                    "--set", "output.log_timing=false"])
    assert code == EXIT_OK
    records = [json.loads(l) for l in (tmp / "log.txt").read_text().splitlines()
               if not l.startswith("#")]
    assert [r["epoch"] for r in records] == [1, 2, 3]


def test_resume_with_other_model_rejected(small_run, capsys):
    tmp, cfg = small_run
    assert _run(["train", "--config", str(cfg), "--set", "training.epochs=1"])[0] == EXIT_OK
    code, _ = _run(["train", "--config", str(cfg), "--resume", "--set", "model.dim=16"])
    assert code == EXIT_INVALID
    assert "different model configuration" in capsys.readouterr().err


def test_eval_writes_report_and_ranks(small_run):
    tmp, cfg = small_run
    assert _run(["train", "--config", str(cfg), "--set", "training.epochs=1"])[0] == EXIT_OK
    code, text = _run(["eval", "--config", str(cfg), "--set", f"output.ranks_csv={tmp / 'r.csv'}"])
    assert code == EXIT_OK
    report = json.loads(text)
    assert report["n_users"] == 30 and 0.0 <= report["hr"] <= 1.0
    rows = (tmp / "r.csv").read_text().splitlines()
    assert rows[0] == "user_id,rank" and len(rows) == 31


def test_eval_without_checkpoint_exits_1(small_run):
    tmp, cfg = small_run
    assert _run(["eval", "--config", str(cfg)])[0] == EXIT_INVALID


def test_untrained_model_ranks_near_chance(tmp_path):
    data = tmp_path / "u.csv"
    write_csv_triples(uniform_random(n_users=500, n_items=50, walk_len=20, seed=0), data)
    code, text = _run(["eval", "--untrained", "--set", f"dataset.path={data}",
                       "--set", "dataset.format=csv_triples"])
    assert code == EXIT_OK
    # 10 of 50 items make the cutoff, so chance HR@10 is 0.2
    assert abs(json.loads(text)["hr"] - 0.2) <= 0.06
