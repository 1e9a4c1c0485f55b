"""Interaction logs, k-core filtering, leave-one-out splits and batching."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "InteractionLog",
    "SequenceDataset",
    "Batch",
    "DataError",
    "ingest",
    "write_csv_triples",
    "k_core_filter",
    "build_sequences",
    "make_batches",
    "save_cache",
    "load_cache",
    "FORMATS",
    "SPLITS",
]

FORMATS = ("movielens_dat", "csv_triples")
SPLITS = ("train", "validation", "test")
CACHE_MAGIC = "ECHOMAMBA-DATASET"
CACHE_VERSION = 1


class DataError(ValueError):
    pass


@dataclass
class InteractionLog:
    users: list
    items: list
    timestamps: list[int]

    def __len__(self) -> int:
        return len(self.users)

    def __post_init__(self):
        if not len(self.users) == len(self.items) == len(self.timestamps):
            raise DataError("users, items and timestamps must have equal length")

    def n_users(self) -> int:
        return len(set(self.users))

    def n_items(self) -> int:
        return len(set(self.items))

    def subset(self, keep) -> "InteractionLog":
        return InteractionLog([self.users[i] for i in keep], [self.items[i] for i in keep],
                              [self.timestamps[i] for i in keep])


def _dedup(users, items, stamps) -> InteractionLog:
    seen = set()
    out_u, out_i, out_t = [], [], []
    for u, i, t in zip(users, items, stamps):
        key = (u, i, t)
        if key in seen:
            continue
        seen.add(key)
        out_u.append(u)
        out_i.append(i)
        out_t.append(t)
    return InteractionLog(out_u, out_i, out_t)


def _parse_int(text: str, lineno: int, path) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DataError(f"{path}: line {lineno}: timestamp {text!r} is not an integer") from None


def ingest(path, fmt: str = "movielens_dat") -> InteractionLog:
    """Parse a ratings/interactions file.

    ``movielens_dat`` lines are ``user::item::rating::timestamp`` (rating is
    dropped); ``csv_triples`` has a header naming ``user_id,item_id,timestamp``.
    File order is preserved and exact duplicate triples are dropped.
    """
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"interaction file not found: {path}")
    users, items, stamps = [], [], []
    with path.open("r", encoding="utf-8", errors="strict", newline="") as fh:
        if fmt == "movielens_dat":
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("::")
                if len(parts) != 4:
                    raise DataError(f"{path}: line {lineno}: expected 4 '::'-separated fields, "
                                    f"got {len(parts)}")
                users.append(parts[0])
                items.append(parts[1])
                stamps.append(_parse_int(parts[3], lineno, path))
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: file is empty")
            header = [h.strip() for h in header]
            try:
                cols = [header.index(c) for c in ("user_id", "item_id", "timestamp")]
            except ValueError:
                raise DataError(f"{path}: line 1: header must name user_id, item_id, timestamp; "
                                f"got {header}") from None
            for lineno, row in enumerate(reader, 2):
                if not row or not any(f.strip() for f in row):
                    continue
                if len(row) < len(header):
                    raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                    f"got {len(row)}")
                users.append(row[cols[0]].strip())
                items.append(row[cols[1]].strip())
                stamps.append(_parse_int(row[cols[2]], lineno, path))
    if not users:
        raise DataError(f"{path}: file is empty")
    return _dedup(users, items, stamps)


def write_csv_triples(log_: InteractionLog, path) -> None:
    """Write a log in the ``csv_triples`` format that :func:`ingest` reads."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "item_id", "timestamp"])
        writer.writerows(zip(log_.users, log_.items, log_.timestamps))


def k_core_filter(log_: InteractionLog, k: int = 5, mode: str = "iterative") -> InteractionLog:
    """Drop users and items with fewer than ``k`` interactions.

    ``iterative`` repeats user and item passes until nothing changes;
    ``single_pass`` runs one user pass followed by one item pass.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in ("iterative", "single_pass"):
        raise ValueError(f"unknown k-core mode {mode!r}")
    keep = list(range(len(log_)))
    while True:
        ucount = Counter(log_.users[i] for i in keep)
        after_users = [i for i in keep if ucount[log_.users[i]] >= k]
        icount = Counter(log_.items[i] for i in after_users)
        after_items = [i for i in after_users if icount[log_.items[i]] >= k]
        done = len(after_items) == len(keep)
        keep = after_items
        if mode == "single_pass" or done or not keep:
            break
    if not keep:
        raise DataError(f"dataset fully filtered at k={k}")
    return log_.subset(keep)


@dataclass
class SequenceDataset:
    """Chronological per-user item sequences with internal ids.

    Items are numbered from 1 (0 is padding); users from 0.  Split inputs
    follow leave-one-out: the last item is the test target, the one before
    it the validation target, everything earlier is training history.
    """

    user_ids: list
    item_ids: list
    sequences: list[np.ndarray]
    n_excluded: int = 0
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        # position 0 of item_ids is the padding placeholder
        self.item_index = {v: i for i, v in enumerate(self.item_ids) if i > 0}

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_items(self) -> int:
        return len(self.item_ids) - 1

    def stats(self) -> dict:
        total = int(sum(len(s) for s in self.sequences))
        return {"n_users": self.n_users, "n_items": self.n_items, "n_interactions": total,
                "avg_length": total / max(1, self.n_users)}

    def split_rows(self, split: str, all_prefixes: bool = False) -> list[tuple[int, np.ndarray, int]]:
        """(user, input prefix, target) rows for one split."""
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        rows = []
        for u, seq in enumerate(self.sequences):
            n = len(seq)
            if split == "test":
                rows.append((u, seq[: n - 1], int(seq[n - 1])))
            elif split == "validation":
                rows.append((u, seq[: n - 2], int(seq[n - 2])))
            elif all_prefixes:
                rows.extend((u, seq[:i], int(seq[i])) for i in range(1, n - 2))
            elif n > 3:
                rows.append((u, seq[: n - 3], int(seq[n - 3])))
        return rows

    def external_item(self, idx: int):
        return self.item_ids[idx]


def build_sequences(log_: InteractionLog) -> SequenceDataset:
    order = sorted(range(len(log_)), key=lambda i: log_.timestamps[i])  # stable
    per_user: dict = {}
    for i in order:
        per_user.setdefault(log_.users[i], []).append(log_.items[i])
    excluded = [u for u, s in per_user.items() if len(s) < 3]
    if excluded:
        log.warning("excluded %d users with fewer than 3 interactions", len(excluded))
    users = [u for u in per_user if len(per_user[u]) >= 3]
    if not users:
        raise DataError("no user has the 3 interactions needed for train/validation/test")
    item_ids: list = [None]
    item_map: dict = {}
    for u in users:
        for v in per_user[u]:
            if v not in item_map:
                item_map[v] = len(item_ids)
                item_ids.append(v)
    seqs = [np.array([item_map[v] for v in per_user[u]], dtype=np.int64) for u in users]
    return SequenceDataset(users, item_ids, seqs, n_excluded=len(excluded))


@dataclass
class Batch:
    item_ids: np.ndarray   # [B, L] left-padded with 0
    lengths: np.ndarray    # [B]
    targets: np.ndarray    # [B]
    users: np.ndarray      # [B]

    def __len__(self) -> int:
        return len(self.targets)


def pad_left(prefixes, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(prefixes), max_len), dtype=np.int64)
    lengths = np.empty(len(prefixes), dtype=np.int64)
    for r, p in enumerate(prefixes):
        p = p[-max_len:]
        lengths[r] = len(p)
        if len(p):
            ids[r, max_len - len(p):] = p
    return ids, lengths


def make_batches(ds: SequenceDataset, split: str, batch_size: int, max_len: int,
                 rng: np.random.Generator | None = None,
                 all_prefixes: bool = False) -> Iterator[Batch]:
    """Yield left-padded batches; rows are shuffled when ``rng`` is given."""
    if batch_size < 1 or max_len < 1:
        raise ValueError("batch_size and max_len must be positive")
    rows = [r for r in ds.split_rows(split, all_prefixes) if len(r[1])]
    if not rows:
        raise DataError(f"split {split!r} has no rows")
    order = rng.permutation(len(rows)) if rng is not None else np.arange(len(rows))
    for start in range(0, len(rows), batch_size):
        chunk = [rows[i] for i in order[start: start + batch_size]]
        ids, lengths = pad_left([c[1] for c in chunk], max_len)
        yield Batch(ids, lengths, np.array([c[2] for c in chunk], dtype=np.int64),
                    np.array([c[0] for c in chunk], dtype=np.int64))


def save_cache(ds: SequenceDataset, path) -> None:
    """Write index maps, sequences and stats to a versioned ``.npz`` file."""
    offsets = np.cumsum([0] + [len(s) for s in ds.sequences])
    flat = np.concatenate(ds.sequences) if ds.sequences else np.zeros(0, np.int64)
    header = {"magic": CACHE_MAGIC, "version": CACHE_VERSION, "stats": ds.stats(),
              "n_excluded": ds.n_excluded}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)),
                 user_ids=np.array([str(u) for u in ds.user_ids]),
                 item_ids=np.array([""] + [str(v) for v in ds.item_ids[1:]]),
                 flat=flat, offsets=offsets)


def load_cache(path) -> SequenceDataset:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("magic") != CACHE_MAGIC:
            raise DataError(f"{path}: not a dataset cache")
        if header.get("version") != CACHE_VERSION:
            raise DataError(f"{path}: cache version {header.get('version')} unsupported")
        flat, offsets = z["flat"], z["offsets"]
        seqs = [flat[offsets[i]: offsets[i + 1]].copy() for i in range(len(offsets) - 1)]
        items = [None] + [str(v) for v in z["item_ids"][1:]]
        return SequenceDataset([str(u) for u in z["user_ids"]], items, seqs,
                               n_excluded=header.get("n_excluded", 0))
