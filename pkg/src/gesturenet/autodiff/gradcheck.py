"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .params import ParamStore
from .tensor import Tensor

DEFAULT_STEP = {np.dtype("float32"): 1e-3, np.dtype("float64"): 1e-6}
DEFAULT_TOLERANCE = {np.dtype("float32"): 1e-3, np.dtype("float64"): 1e-6}


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def failures(self) -> dict[str, float]:
        return {n: e for n, e in self.errors.items() if not e < self.tolerance}

    def summary(self) -> str:
        lines = [f"{'PASS' if e < self.tolerance else 'FAIL'} {n}: max rel err {e:.3e}" for n, e in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise deviation scaled by the larger of the two gradients' peak magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def grad_check(
    loss_fn: Callable[[ParamStore], Tensor],
    store: ParamStore,
    tolerance: Optional[float] = None,
    step: Optional[float] = None,
    max_elements: Optional[int] = None,
    seed: int = 0,
    oracle_dtype=np.float64,
    refinements: int = 3,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn(store)`` with central differences.

    ``loss_fn`` must read parameters from ``store`` on every call. With
    ``max_elements`` set, a seeded random subset of each parameter's entries is
    perturbed; otherwise every entry is.

    The differences are evaluated on a copy of the parameters cast to
    ``oracle_dtype`` (64-bit by default), so 32-bit backprop is checked against
    an oracle whose own rounding noise sits well below the tolerance.

    Entries that disagree are re-differenced with steps ``h/10, h/100, ...``
    (``refinements`` times) and the closest estimate is kept: a step that
    straddles a ReLU or max-pool kink gives a meaningless quotient, while a
    wrong analytic gradient disagrees at every step size.
    """
    dtype = next(iter(store.params.values())).dtype if len(store) else np.dtype("float64")
    tol = DEFAULT_TOLERANCE.get(dtype, 1e-3) if tolerance is None else tolerance
    h = DEFAULT_STEP.get(dtype, 1e-3) if step is None else step

    store.zero_grad()
    loss = loss_fn(store)
    if not np.all(np.isfinite(loss.data)):
        raise ValueError("loss is not finite; gradient check undefined")
    loss.backward()
    analytic = store.grads()

    probe = store.astype(oracle_dtype) if oracle_dtype is not None else store
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tol)
    for name, tensor in probe.items():
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        def central(idx, step):
            original = flat[idx]
            flat[idx] = original + step
            up = float(loss_fn(probe).data)
            flat[idx] = original - step
            down = float(loss_fn(probe).data)
            flat[idx] = original
            return (up - down) / (2 * step)

        numeric = np.array([central(idx, h) for idx in indices])
        exact = analytic[name].reshape(-1)[indices].astype(np.float64)
        scale = max(np.abs(exact).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        for j in np.flatnonzero(np.abs(exact - numeric) > 0.5 * tol * scale):
            step = h
            for _ in range(refinements):
                step /= 10
                estimate = central(indices[j], step)
                if abs(estimate - exact[j]) < abs(numeric[j] - exact[j]):
                    numeric[j] = estimate
        report.errors[name] = relative_error(exact, numeric)
    return report
