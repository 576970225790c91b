"""Stationarity and error decompositions measured on run state.

Everything here reads the diagnostic (uncharged) gradient oracle, so calling
these functions never changes a problem's IFO counter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StationarityReport:
    h: float
    grad_term: float
    consensus_term: float


@dataclass(frozen=True)
class DiagnosticRow:
    tracking_err: float
    estimator_err: float
    potential_H: float
    y_consensus: float
    f_bar: float


def stationarity(problem, x: np.ndarray, grads: np.ndarray | None = None) -> StationarityReport:
    """``||mean_i grad f_i(x_i)||^2 + (1/m) sum_i ||x_i - x_bar||^2``."""
    x = np.asarray(x, dtype=float)
    if grads is None:
        grads = problem.local_gradients(x)
    g_bar = grads.mean(axis=0)
    grad_term = float(g_bar @ g_bar)
    consensus_term = float(np.sum((x - x.mean(axis=0)) ** 2) / x.shape[0])
    return StationarityReport(grad_term + consensus_term, grad_term, consensus_term)


def diagnostic_row(problem, state, alpha: float, grads: np.ndarray | None = None) -> DiagnosticRow:
    """Tracking error, estimator error, ``y`` disagreement and the potential.

    The potential is ``f(x_bar) + ||x - 1 x_bar||^2 / m + alpha ||y - 1 y_bar||^2 / m``.
    """
    m = state.x.shape[0]
    if grads is None:
        grads = problem.local_gradients(state.x)
    x_bar = state.x.mean(axis=0)
    y_bar = state.y.mean(axis=0)
    track = y_bar - grads.mean(axis=0)
    y_cons = float(np.sum((state.y - y_bar) ** 2))
    x_cons = float(np.sum((state.x - x_bar) ** 2))
    f_bar = problem.objective(x_bar)
    return DiagnosticRow(
        tracking_err=float(track @ track),
        estimator_err=float(np.sum((state.v - grads) ** 2)),
        potential_H=f_bar + x_cons / m + alpha * y_cons / m,
        y_consensus=y_cons,
        f_bar=f_bar,
    )


@dataclass
class VarianceReport:
    mean_sq_error: float
    bound: float
    threshold: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.mean_sq_error <= self.threshold


def variance_bound_check(problem, x: np.ndarray, s1: int, trials: int = 10_000, seed: int = 0) -> VarianceReport:
    """Monte-Carlo mean of ``||v - grad f(x)||^2`` over independent refreshes.

    Compared against ``m sigma^2 / s1`` with slack ``1 + 5/sqrt(trials) + 0.05``.
    Each trial draws ``s1`` samples at every node, exactly like an outer
    iteration of online D-GET.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    x = np.asarray(x, dtype=float)
    m, d = x.shape
    exact = problem.local_gradients(x)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        v = np.stack([problem.draw_batch(i, x[i], s1, rng).mean(axis=0) for i in range(m)])
        total += float(np.sum((v - exact) ** 2))
    mean = total / trials
    bound = m * problem.sigma2 / s1
    return VarianceReport(mean, bound, bound * (1.0 + 5.0 / np.sqrt(trials) + 0.05), trials)


@dataclass
class PotentialReport:
    status: str  # "pass", "fail" or "constants invalid"
    first_violation: int | None
    max_excess: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _mean_columns(traces, names):
    if not isinstance(traces, (list, tuple)):
        return traces.m, traces["r"], {k: np.asarray(traces[k]) for k in names}
    r = traces[0]["r"]
    if any(len(t) != len(r) or t.m != traces[0].m for t in traces):
        raise ValueError("traces to average must share shape")
    return traces[0].m, r, {k: np.mean([t[k] for t in traces], axis=0) for k in names}


def potential_descent_check(trace, constants) -> PotentialReport:
    """Check ``H(r+1) - H(0) <= -C1 S_y - C2 S_x - C3 S_yc + slack`` at every row.

    ``S_y``, ``S_x`` and ``S_yc`` are running sums over ``t <= r`` of
    ``||y_bar||^2``, ``||x - 1 x_bar||^2 / m`` and ``||y - 1 y_bar||^2 / m``.
    The trace must carry every iteration (``diag_every = 1``).  Pass a list
    of traces from independent seeds to check the averaged columns instead,
    which is the meaningful test on stochastic instances.
    """
    c1, c2, c3 = constants.C1, constants.C2, constants.C3
    if not (c1 > 0 and c2 > 0 and c3 > 0):
        return PotentialReport("constants invalid", None, float("nan"), 0.0)
    m, r, cols = _mean_columns(trace, ("potential_H", "ybar_sq", "x_consensus_sq", "y_consensus"))
    H = cols["potential_H"]
    slack = 1e-6 * (1.0 + abs(float(H[0]))) if H.size else 0.0
    if H.size < 2:
        return PotentialReport("pass", None, -np.inf, slack)
    if np.any(np.diff(r) != 1):
        raise ValueError("potential check needs a trace recorded at every iteration")
    s_y = np.cumsum(cols["ybar_sq"])[:-1]
    s_x = np.cumsum(cols["x_consensus_sq"] / m)[:-1]
    s_yc = np.cumsum(cols["y_consensus"] / m)[:-1]
    excess = (H[1:] - H[0]) - (-c1 * s_y - c2 * s_x - c3 * s_yc)
    bad = np.nonzero(excess > slack)[0]
    first = int(r[bad[0] + 1]) if bad.size else None
    return PotentialReport("pass" if first is None else "fail", first, float(excess.max()), slack)
