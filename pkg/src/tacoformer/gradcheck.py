"""Central finite-difference verification of tape gradients.

The analytic side comes from one taped backward pass; the estimate side
re-evaluates the loss with single coordinates nudged by +/-step, with no
tape involved, so the two routes share nothing but the forward math.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradTape, backward, zero_grads

REL_FLOOR = 1e-6  # rel-error denominator floor; keeps 0-vs-0 comparisons quiet


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    checked: int
    ok: bool


@dataclass
class GradCheckReport:
    tol: float
    step: float
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def lines(self):
        for e in self.entries:
            status = "ok" if e.ok else "FAIL"
            yield f"{status:4s} {e.name:32s} max_rel_err={e.max_rel_err:.3e} ({e.checked} coords)"


def _named(params):
    if hasattr(params, "named"):
        return list(params.named())
    return list(params)


def finite_diff_check(loss_fn, params, step: float = 1e-5, tol: float = 1e-4,
                      sample_limit: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare d(loss)/d(param) from the tape against central differences.

    loss_fn() must be a deterministic closure over `params` returning a
    scalar Tensor. For tensors larger than sample_limit a seeded subset of
    coordinates (at least 32) is checked instead of every one.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"step {step} outside the supported [1e-6, 1e-4] range")
    named = _named(params)
    tensors = [t for _, t in named]

    zero_grads(tensors)
    with GradTape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad))
                for name, t in named}
    zero_grads(tensors)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, step=step)
    for name, t in named:
        flat = t.data.reshape(-1)
        n = flat.size
        if sample_limit is not None and n > sample_limit:
            coords = rng.choice(n, size=max(32, sample_limit), replace=False)
        else:
            coords = range(n)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        checked = 0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().data)
            flat[i] = orig - step
            down = float(loss_fn().data)
            flat[i] = orig
            estimate = (up - down) / (2.0 * step)
            a = a_flat[i]
            rel = abs(a - estimate) / max(abs(a), abs(estimate), REL_FLOOR)
            worst = max(worst, rel)
            checked += 1
        report.entries.append(TensorCheck(name, worst, checked, worst <= tol))
    return report
