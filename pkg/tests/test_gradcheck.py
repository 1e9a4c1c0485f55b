import numpy as np

from echomamba import tensor as T
from echomamba.gradcheck import TOLERANCE, check_gradients


def test_detects_a_wrong_backward(rng):
    x = T.parameter(rng.normal(size=4))

    def bad_square():
        # claims d(x^2)/dx = x instead of 2x
        return T.make_op(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square").sum()

    assert check_gradients(bad_square, [x]) > 0.1


def test_accepts_a_correct_backward(rng):
    x = T.parameter(rng.normal(size=4))
    good = lambda: T.make_op(x.data ** 2, (x,), lambda g: (2 * g * x.data,), "square").sum()
    assert check_gradients(good, [x]) < TOLERANCE


def test_unused_parameter_counts_as_zero_gradient(rng):
    x, unused = T.parameter(rng.normal(size=3)), T.parameter(rng.normal(size=2))
    before = x.data.copy()
    assert check_gradients(lambda: (x * x).sum(), [x, unused]) < TOLERANCE
    np.testing.assert_array_equal(x.data, before)  # perturbations are undone
