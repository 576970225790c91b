"""D-GET and baseline decentralized methods on stacked per-node iterates.

Iterates are stored as (m, d) arrays, one row per node, so one round of
neighbour averaging is the matrix product ``W @ x``.

D-GET keeps three per-node quantities:

* ``x`` – the local copy of the decision variable,
* ``v`` – a SARAH/SPIDER-style estimate of the local full gradient, refreshed
  from a full (finite-sum) or large (online) batch every ``q`` iterations and
  updated recursively with minibatch gradient differences in between,
* ``y`` – a tracker of the network-average gradient built from ``v``.

Randomness comes from generators keyed by ``(seed, node, iteration)``, so a
run is reproducible bit for bit no matter in which order per-node work is
scheduled.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import diagnostic_row, stationarity
from .graph import MixingMatrix
from .problems import OnlineProblem

ALGORITHMS = ("dget", "gnsd", "dgd", "dsgd")
MODES = ("finite-sum", "online")
DIVERGENCE_LIMIT = 1e12

CSV_COLUMNS = (
    "r", "f_bar", "h", "grad_term", "consensus_term", "tracking_err", "estimator_err",
    "y_consensus", "potential_H", "ifo_total", "comm_rounds", "refresh",
)
# kept in memory alongside the CSV columns
EXTRA_COLUMNS = ("grad_evals", "ybar_sq", "x_consensus_sq", "identity_residual", "xbar_residual")
INT_COLUMNS = {"r", "ifo_total", "comm_rounds", "refresh", "grad_evals"}


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Iterates left the finite range; ``trace`` holds the rows recorded so far."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class AlgorithmConfig:
    alpha: float
    T: int
    q: int = 1
    s2: int = 1
    s1: int | None = None
    mode: str = "finite-sum"
    algorithm: str = "dget"
    seed: int = 0
    replace: bool = True
    x0: np.ndarray | None = field(default=None, repr=False)
    diag_every: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.q < 1 or self.s2 < 1 or self.T < 0 or self.diag_every < 1:
            raise ConfigError("need q >= 1, s2 >= 1, T >= 0 and diag_every >= 1")
        if self.mode == "online":
            if self.algorithm == "dgd":
                raise ConfigError("dgd needs full local gradients; use dsgd in online mode")
            if self.algorithm == "dget":
                if self.s1 is None:
                    raise ConfigError("online D-GET needs an outer batch size s1")
                if self.s1 < self.s2:
                    raise ConfigError(f"online mode needs s1 >= s2, got s1={self.s1}, s2={self.s2}")

    @property
    def comm_per_iter(self) -> int:
        return 2 if self.algorithm in ("dget", "gnsd") else 1


@dataclass
class IterateState:
    r: int
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    v_prev: np.ndarray
    comm_rounds: int = 0

    @property
    def x_bar(self) -> np.ndarray:
        return self.x.mean(axis=0)

    @property
    def y_bar(self) -> np.ndarray:
        return self.y.mean(axis=0)

    @property
    def v_bar(self) -> np.ndarray:
        return self.v.mean(axis=0)


@dataclass
class RunTrace:
    columns: dict[str, np.ndarray]
    config: AlgorithmConfig
    m: int
    final_state: IterateState | None = field(default=None, repr=False)
    # maxima over every iteration, including rows thinned out by diag_every
    max_identity_residual: float = 0.0
    max_xbar_residual: float = 0.0

    def __len__(self):
        return len(self.columns["r"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def rows(self):
        names = list(self.columns)
        for values in zip(*(self.columns[k] for k in names)):
            yield dict(zip(names, values))

    def to_csv(self, fh=None) -> str:
        """Write the fixed-column CSV; returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        cols = [self.columns[k] for k in CSV_COLUMNS]
        for row in zip(*cols):
            writer.writerow(
                int(val) if name in INT_COLUMNS else repr(float(val))
                for name, val in zip(CSV_COLUMNS, row)
            )
        return out.getvalue() if fh is None else ""


class _Recorder:
    def __init__(self, problem, config):
        self.problem = problem
        self.config = config
        self.data = {k: [] for k in CSV_COLUMNS + EXTRA_COLUMNS}
        self.identity = 0.0
        self.xbar = 0.0

    def record(self, state: IterateState, refresh: bool, identity: float, xbar_res: float):
        self.identity = max(self.identity, identity)
        self.xbar = max(self.xbar, xbar_res)
        if state.r % self.config.diag_every:
            return
        p = self.problem
        grads = p.local_gradients(state.x)
        st = stationarity(p, state.x, grads=grads)
        dg = diagnostic_row(p, state, self.config.alpha, grads=grads)
        x_bar = state.x_bar
        row = {
            "r": state.r,
            "f_bar": dg.f_bar,
            "h": st.h,
            "grad_term": st.grad_term,
            "consensus_term": st.consensus_term,
            "tracking_err": dg.tracking_err,
            "estimator_err": dg.estimator_err,
            "y_consensus": dg.y_consensus,
            "potential_H": dg.potential_H,
            "ifo_total": p.ifo.total,
            "comm_rounds": state.comm_rounds,
            "refresh": int(refresh),
            "grad_evals": p.ifo.grad_evals,
            "ybar_sq": float(state.y_bar @ state.y_bar),
            "x_consensus_sq": float(np.sum((state.x - x_bar) ** 2)),
            "identity_residual": identity,
            "xbar_residual": xbar_res,
        }
        for k, val in row.items():
            self.data[k].append(val)

    def trace(self, state=None) -> RunTrace:
        cols = {
            k: np.asarray(v, dtype=np.int64 if k in INT_COLUMNS else float)
            for k, v in self.data.items()
        }
        return RunTrace(cols, self.config, self.problem.m, state, self.identity, self.xbar)


def node_streams(seed: int, r: int, m: int) -> list[np.random.Generator]:
    """One generator per node for iteration ``r``."""
    return [np.random.default_rng([seed, i, r]) for i in range(m)]


def _as_matrix(w) -> np.ndarray:
    return np.asarray(w.w if isinstance(w, MixingMatrix) else w, dtype=float)


def _draw_indices(rngs, n: int, size: int, replace: bool) -> np.ndarray:
    if replace:
        return np.stack([rng.integers(0, n, size=size) for rng in rngs])
    return np.stack([np.sort(rng.choice(n, size=size, replace=False)) for rng in rngs])


# --- single-step operations ---------------------------------------------------

def x_update(state: IterateState, w, alpha: float) -> np.ndarray:
    """``W x - alpha y``; one communication round (broadcast of ``x``)."""
    w = _as_matrix(w)
    if w.shape != (state.x.shape[0],) * 2:
        raise ValueError(f"mixing matrix {w.shape} does not match {state.x.shape[0]} nodes")
    state.comm_rounds += 1
    return w @ state.x - alpha * state.y


def y_update(state: IterateState, w, v_new: np.ndarray, v_old: np.ndarray) -> np.ndarray:
    """``W y + v_new - v_old``; one communication round (broadcast of ``y``)."""
    w = _as_matrix(w)
    if w.shape != (state.y.shape[0],) * 2 or v_new.shape != state.y.shape:
        raise ValueError("dimension mismatch in tracker update")
    state.comm_rounds += 1
    return w @ state.y + (v_new - v_old)


def v_refresh(x: np.ndarray, problem, config: AlgorithmConfig, rngs=None) -> np.ndarray:
    """Outer-loop estimator: exact local gradients or an ``s1``-sample average."""
    if isinstance(problem, OnlineProblem):
        return problem.minibatch_gradient(x, config.s1, rngs)
    return problem.full_gradient(x)


def v_recursive(
    x_new: np.ndarray, x_old: np.ndarray, v_old: np.ndarray, problem, config: AlgorithmConfig, rngs
) -> np.ndarray:
    """Inner-loop estimator: ``v_old`` plus a minibatch gradient difference.

    Every node draws its own ``s2`` samples (with replacement unless
    ``config.replace`` is false).
    """
    if isinstance(problem, OnlineProblem):
        return v_old + problem.minibatch_difference(x_new, x_old, config.s2, rngs)
    idx = _draw_indices(rngs, problem.n, config.s2, config.replace)
    return v_old + problem.minibatch_difference(x_new, x_old, idx)


def _minibatch(x, problem, config, rngs):
    if isinstance(problem, OnlineProblem):
        return problem.minibatch_gradient(x, config.s2, rngs)
    idx = _draw_indices(rngs, problem.n, config.s2, config.replace)
    return problem.minibatch_gradient(x, idx)


# --- drivers --------------------------------------------------------------------

def _check_inputs(problem, w, config):
    w = _as_matrix(w)
    if w.shape != (problem.m, problem.m):
        raise ValueError(f"mixing matrix {w.shape} does not match {problem.m} nodes")
    online = isinstance(problem, OnlineProblem)
    if online != (config.mode == "online"):
        raise ConfigError(f"mode {config.mode!r} does not match a {type(problem).__name__}")
    if config.algorithm == "dgd" and online:
        raise ConfigError("dgd needs full local gradients")
    if not online and not config.replace and config.s2 > problem.n:
        raise ConfigError("s2 > n is impossible without replacement")
    return w


def _initial_x(problem, config):
    if config.x0 is None:
        return np.zeros((problem.m, problem.d))
    x0 = np.asarray(config.x0, dtype=float)
    if x0.shape == (problem.d,):
        return np.tile(x0, (problem.m, 1))
    if x0.shape != (problem.m, problem.d):
        raise ConfigError(f"x0 must have shape ({problem.d},) or ({problem.m}, {problem.d})")
    return x0.copy()


def _finite(x):
    return np.all(np.isfinite(x)) and np.max(np.abs(x)) <= DIVERGENCE_LIMIT


def _residuals(state, x_bar_prev, y_bar_prev, alpha):
    v_bar = state.v_bar
    ident = float(np.linalg.norm(state.y_bar - v_bar) / (1.0 + np.linalg.norm(v_bar)))
    if x_bar_prev is None:
        return ident, 0.0
    x_bar = state.x_bar
    pred = x_bar_prev - alpha * y_bar_prev
    return ident, float(np.linalg.norm(x_bar - pred) / (1.0 + np.linalg.norm(x_bar)))


def _run(problem, w, config: AlgorithmConfig, algorithm: str) -> RunTrace:
    w = _check_inputs(problem, w, config)
    problem.ifo.reset()
    alpha, m = config.alpha, problem.m
    rec = _Recorder(problem, config)

    x = _initial_x(problem, config)
    rngs = node_streams(config.seed, 0, m)
    if algorithm == "dget":
        v = v_refresh(x, problem, config, rngs)
    elif algorithm == "dgd":
        v = problem.full_gradient(x)
    else:
        v = _minibatch(x, problem, config, rngs)
    state = IterateState(0, x, v.copy(), v, v.copy())
    rec.record(state, True, *_residuals(state, None, None, alpha))

    for r in range(1, config.T + 1):
        x_bar_prev, y_bar_prev = state.x_bar, state.y_bar
        x_old, v_old = state.x, state.v
        x_new = x_update(state, w, alpha)
        rngs = node_streams(config.seed, r, m)
        refresh = False
        if algorithm == "dget":
            if r % config.q == 0:
                v_new = v_refresh(x_new, problem, config, rngs)
                refresh = True
            else:
                v_new = v_recursive(x_new, x_old, v_old, problem, config, rngs)
        elif algorithm == "dgd":
            v_new = problem.full_gradient(x_new)
        else:
            v_new = _minibatch(x_new, problem, config, rngs)

        if algorithm in ("dget", "gnsd"):
            y_new = y_update(state, w, v_new, v_old)
        else:
            y_new = v_new
        state.r, state.x, state.v_prev, state.v, state.y = r, x_new, v_old, v_new, y_new

        if not (_finite(x_new) and _finite(y_new)):
            raise DivergenceError(f"iterates diverged at r={r}", rec.trace())
        rec.record(state, refresh, *_residuals(state, x_bar_prev, y_bar_prev, alpha))
    return rec.trace(state)


def run_dget(problem, w, config: AlgorithmConfig) -> RunTrace:
    """D-GET: ``x_update``, then ``v_refresh`` or ``v_recursive``, then ``y_update``.

    Exactly two communication rounds per iteration.  In online mode the
    refresh averages ``config.s1`` fresh draws per node.
    """
    return _run(problem, w, config, "dget")


def run_gnsd(problem, w, config: AlgorithmConfig) -> RunTrace:
    """Gradient tracking fed by fresh minibatch gradients, no refresh loop."""
    return _run(problem, w, config, "gnsd")


def run_dgd(problem, w, config: AlgorithmConfig) -> RunTrace:
    """``x = W x - alpha g``; ``g`` is the full local gradient for ``dgd``,
    an ``s2`` minibatch for ``dsgd``.  One communication round per iteration.
    """
    return _run(problem, w, config, "dsgd" if config.algorithm == "dsgd" else "dgd")


def run(problem, w, config: AlgorithmConfig) -> RunTrace:
    if config.algorithm == "dget":
        return run_dget(problem, w, config)
    if config.algorithm == "gnsd":
        return run_gnsd(problem, w, config)
    return run_dgd(problem, w, config)
