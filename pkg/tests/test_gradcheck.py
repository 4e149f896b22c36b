import numpy as np
import pytest

from tacoformer import tensor as T
from tacoformer.gradcheck import finite_diff_check
from tacoformer.tensor import Tensor


def test_quadratic_estimate():
    theta = Tensor([3.0], requires_grad=True)
    report = finite_diff_check(lambda: T.sum_all(T.mul(theta, theta)),
                               [("theta", theta)], step=1e-5)
    assert report.passed
    # d(theta^2) = 2*theta = 6 to within central-difference error
    with T.GradTape() as tape:
        loss = T.sum_all(T.mul(theta, theta))
    T.backward(loss, tape)
    assert abs(theta.grad[0] - 6.0) <= 1e-6


def test_constant_function_zero_gradients():
    theta = Tensor([1.0, 2.0], requires_grad=True)
    const = Tensor([5.0])
    report = finite_diff_check(lambda: T.sum_all(const), [("theta", theta)])
    assert report.passed
    assert report.worst == 0.0


def test_sampled_coordinates_cover_at_least_32():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((20, 20)), requires_grad=True)

    def loss():
        return T.mean_all(T.mul(w, w))

    report = finite_diff_check(loss, [("w", w)], sample_limit=32, seed=1)
    assert report.passed
    assert report.entries[0].checked >= 32
    assert report.entries[0].checked < w.size


def test_detects_wrong_gradient():
    # an op with a deliberately broken backward rule must be flagged
    x = Tensor([2.0], requires_grad=True)

    def bad_square(t):
        out = Tensor(t.data ** 2, requires_grad=True)
        tape = T.active_tape()

        def bwd(g):
            T._accum(t, 3.0 * g)  # wrong: true derivative is 2*theta

        if tape is not None:
            tape.record(out, bwd)
        return out

    report = finite_diff_check(lambda: T.sum_all(bad_square(x)), [("x", x)])
    assert not report.passed


def test_step_range_enforced():
    theta = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: T.sum_all(theta), [("theta", theta)], step=1e-2)


def test_report_lines_format():
    theta = Tensor([2.0], requires_grad=True)
    report = finite_diff_check(lambda: T.sum_all(T.mul(theta, theta)),
                               [("theta", theta)])
    lines = list(report.lines())
    assert len(lines) == 1
    assert "theta" in lines[0] and "ok" in lines[0]
