from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .tensor import ModelParams, Tensor, branch_trace, no_grad


class EvaluationError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    n_checked: int
    # scalars whose +-eps evaluations left the smooth piece of the base point;
    # only counted with check_branches=True
    n_branch_changes: int = 0


def _value(f, params, base: list | None = None) -> tuple[float, bool]:
    """Objective value and whether its branch trace differs from ``base``."""
    if base is None:
        out, seen = f(params), None
    else:
        with branch_trace() as seen:
            out = f(params)
    v = float(out.data) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(v):
        raise EvaluationError(f"objective evaluated to {v}")
    moved = seen is not None and (len(seen) != len(base)
                                  or any(not np.array_equal(a, b) for a, b in zip(seen, base)))
    return v, moved


def grad_check(
    f: Callable[[ModelParams], Tensor],
    params: ModelParams,
    eps: float = 1e-6,
    names: Iterable[str] | None = None,
    check_branches: bool = False,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    Relative error per scalar is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``check_branches`` also counts scalars whose perturbed evaluations cross
    a relu or max kink, where central differences are not valid; the error
    is still taken over every scalar.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError(f"eps={eps} outside [1e-8, 1e-4]")
    params.zero_grad()
    with branch_trace() as base_trace:
        out = f(params)
    if not np.isfinite(np.asarray(getattr(out, "data", out))).all():
        raise EvaluationError("objective is not finite")
    if not isinstance(out, Tensor):
        raise TypeError("grad_check needs f to return a Tensor")
    out.backward()
    analytic = {k: params[k].grad.copy() for k in params}

    worst, worst_name, worst_idx, count, crossed = 0.0, None, None, 0, 0
    with no_grad():
        for name in names if names is not None else params.names():
            p = params[name]
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                base = base_trace if check_branches else None
                flat[i] = orig + eps
                up, moved_up = _value(f, params, base)
                flat[i] = orig - eps
                down, moved_down = _value(f, params, base)
                flat[i] = orig
                crossed += moved_up or moved_down
                num = (up - down) / (2.0 * eps)
                ana = analytic[name].reshape(-1)[i]
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                count += 1
                if rel > worst:
                    worst, worst_name = rel, name
                    worst_idx = tuple(int(j) for j in np.unravel_index(i, p.shape))
    return GradCheckReport(worst, worst_name, worst_idx, count, crossed)
