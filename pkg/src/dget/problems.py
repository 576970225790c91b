"""Finite-sum and online test objectives with exact IFO accounting.

Every stochastic-gradient access made on behalf of an algorithm goes through
the charged methods of a problem and increments its :class:`IfoCounter`.
The ``local_gradients``/``global_average_gradient``/``objective`` family is a
diagnostic oracle: exact, and never charged, so measured sample complexity
only reflects what the algorithm itself consumed.

Sample losses
-------------
shifted-quadratic
    ``f_ij(x) = 0.5 * ||x - a_ij||^2``; ``L = 1``.
nonconvex-logistic
    ``f_ij(x) = log(1 + exp(-y_ij <z_ij, x>)) + lam * sum_k x_k^2 / (1 + x_k^2)``;
    ``L = max ||z_ij||^2 / 4 + 2 lam``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

KINDS = ("shifted-quadratic", "nonconvex-logistic")


class ProblemError(ValueError):
    pass


class IfoCounter:
    """Network-wide count of incremental first-order oracle calls.

    ``total`` is the sample-access count used for complexity accounting.
    ``grad_evals`` counts raw gradient evaluations; it differs from ``total``
    only for the recursive estimator, which touches each drawn sample at two
    points.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.grad_evals = 0

    def add(self, accesses: int, evals: int | None = None) -> None:
        if accesses < 0:
            raise ValueError("IFO increments are nonnegative")
        with self._lock:
            self.total += int(accesses)
            self.grad_evals += int(accesses if evals is None else evals)

    def reset(self) -> None:
        with self._lock:
            self.total = 0
            self.grad_evals = 0

    def __repr__(self):
        return f"IfoCounter(total={self.total}, grad_evals={self.grad_evals})"


def _check_sizes(**sizes):
    for name, val in sizes.items():
        if int(val) != val or val < 1:
            raise ProblemError(f"{name} must be a positive integer, got {val}")


# --- sample-level kernels ---------------------------------------------------
# All kernels take per-node points x of shape (m, d) and per-node sample
# blocks of shape (m, b, ...) and return per-sample quantities (m, b, ...).

def _quad_grad(x, a):
    return x[:, None, :] - a


def _quad_value(x, a):
    return 0.5 * np.sum((x[:, None, :] - a) ** 2, axis=-1)


def _reg_grad(x, lam):
    return lam * 2.0 * x / (1.0 + x**2) ** 2


def _logistic_grad(x, z, y, lam):
    margin = y * np.einsum("mbd,md->mb", z, x)
    coef = -y * expit(-margin)
    return coef[..., None] * z + _reg_grad(x, lam)[:, None, :]


def _logistic_value(x, z, y, lam):
    margin = y * np.einsum("mbd,md->mb", z, x)
    reg = lam * np.sum(x**2 / (1.0 + x**2), axis=-1)
    return np.logaddexp(0.0, -margin) + reg[:, None]


@dataclass
class FiniteSumProblem:
    """``f(x) = (1/m) sum_i (1/n) sum_j f_ij(x_i)`` over ``m`` nodes.

    ``data`` holds the per-node, per-sample parameter blocks: ``a`` of shape
    (m, n, d) for the quadratic, ``z`` (m, n, d) and ``y`` (m, n) for the
    logistic loss.
    """

    kind: str
    m: int
    n: int
    d: int
    data: dict[str, np.ndarray] = field(repr=False)
    L: float
    f_lower: float = 0.0
    lam: float = 0.0
    ifo: IfoCounter = field(default_factory=IfoCounter, repr=False)

    def __post_init__(self):
        for arr in self.data.values():
            arr.setflags(write=False)
        self._rows = np.arange(self.m)[:, None]
        self._all = np.broadcast_to(np.arange(self.n), (self.m, self.n))

    # uncharged kernels
    def _grads(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.kind == "shifted-quadratic":
            return _quad_grad(x, self.data["a"][self._rows, idx])
        return _logistic_grad(x, self.data["z"][self._rows, idx], self.data["y"][self._rows, idx], self.lam)

    def _values(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self.kind == "shifted-quadratic":
            return _quad_value(x, self.data["a"][self._rows, idx])
        return _logistic_value(x, self.data["z"][self._rows, idx], self.data["y"][self._rows, idx], self.lam)

    def _node_point(self, i: int, x_i: np.ndarray) -> np.ndarray:
        if not 0 <= i < self.m:
            raise IndexError(f"node {i} out of range [0, {self.m})")
        x_i = np.asarray(x_i, dtype=float)
        if x_i.shape != (self.d,):
            raise ValueError(f"point must have shape ({self.d},), got {x_i.shape}")
        x = np.zeros((self.m, self.d))
        x[i] = x_i
        return x

    def _check_stack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m, self.d):
            raise ValueError(f"stacked iterate must have shape ({self.m}, {self.d}), got {x.shape}")
        return x

    # charged oracle -----------------------------------------------------
    def sample_gradient(self, i: int, j: int, x_i: np.ndarray) -> np.ndarray:
        x = self._node_point(i, x_i)
        if not 0 <= j < self.n:
            raise IndexError(f"sample {j} out of range [0, {self.n})")
        idx = np.zeros((self.m, 1), dtype=int)
        idx[i, 0] = j
        g = self._grads(x, idx)[i, 0]
        self.ifo.add(1)
        return g

    def local_full_gradient(self, i: int, x_i: np.ndarray) -> np.ndarray:
        x = self._node_point(i, x_i)
        g = self._grads(x, self._all).mean(axis=1)[i]
        self.ifo.add(self.n)
        return g

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        """Stacked local full gradients; charges ``m * n``."""
        g = self._grads(self._check_stack(x), self._all).mean(axis=1)
        self.ifo.add(self.m * self.n)
        return g

    def minibatch_gradient(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Per-node mean of sample gradients over ``idx`` (shape (m, b))."""
        g = self._grads(self._check_stack(x), idx).mean(axis=1)
        self.ifo.add(idx.size)
        return g

    def minibatch_difference(self, x_new: np.ndarray, x_old: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Per-node mean of ``grad f_ij(x_new) - grad f_ij(x_old)`` over ``idx``.

        Each drawn sample is one access (charged once) evaluated at two points.
        """
        diff = self._grads(self._check_stack(x_new), idx) - self._grads(self._check_stack(x_old), idx)
        self.ifo.add(idx.size, 2 * idx.size)
        return diff.mean(axis=1)

    # diagnostic oracle (never charged) ---------------------------------------
    def local_gradients(self, x: np.ndarray) -> np.ndarray:
        return self._grads(self._check_stack(x), self._all).mean(axis=1)

    def global_average_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.local_gradients(x).mean(axis=0)

    def sample_value(self, i: int, j: int, x_i: np.ndarray) -> float:
        x = self._node_point(i, x_i)
        idx = np.zeros((self.m, 1), dtype=int)
        idx[i, 0] = j
        return float(self._values(x, idx)[i, 0])

    def sample_gradient_uncharged(self, i: int, j: int, x_i: np.ndarray) -> np.ndarray:
        x = self._node_point(i, x_i)
        idx = np.zeros((self.m, 1), dtype=int)
        idx[i, 0] = j
        return self._grads(x, idx)[i, 0]

    def objective(self, x_bar: np.ndarray) -> float:
        """Global objective ``f`` at a single consensus point."""
        x = np.broadcast_to(np.asarray(x_bar, dtype=float), (self.m, self.d))
        return float(self._values(x, self._all).mean())

    def minimizer(self) -> np.ndarray:
        if self.kind != "shifted-quadratic":
            raise ProblemError("closed-form minimizer only exists for the shifted quadratic")
        return self.data["a"].reshape(-1, self.d).mean(axis=0)


@dataclass
class OnlineProblem:
    """Expectation objective with Gaussian gradient noise.

    The mean field at node ``i`` is the exact local gradient of an underlying
    finite-sum instance.  A draw ``xi ~ N(0, sigma2/d * I)`` defines the sample
    loss ``f_i(x) + <xi, x>``, so drawn gradients are unbiased with variance
    exactly ``sigma2`` and each sample loss keeps the Lipschitz constant ``L``.
    """

    base: FiniteSumProblem = field(repr=False)
    sigma2: float
    ifo: IfoCounter = field(default_factory=IfoCounter, repr=False)

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ProblemError("sigma2 must be nonnegative")

    kind = property(lambda self: self.base.kind)
    m = property(lambda self: self.base.m)
    d = property(lambda self: self.base.d)
    L = property(lambda self: self.base.L)
    f_lower = property(lambda self: self.base.f_lower)

    def _noise(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.normal(0.0, np.sqrt(self.sigma2 / self.d), size=(count, self.d))

    def draw_online_gradient(self, i: int, x_i: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = self.base._node_point(i, x_i)
        g = self.base.local_gradients(x)[i] + self._noise(rng, 1)[0]
        self.ifo.add(1)
        return g

    def draw_batch(self, i: int, x_i: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
        """``size`` i.i.d. gradient draws at one node, shape (size, d)."""
        x = self.base._node_point(i, x_i)
        g = self.base.local_gradients(x)[i] + self._noise(rng, size)
        self.ifo.add(size)
        return g

    def minibatch_gradient(self, x: np.ndarray, size: int, rngs) -> np.ndarray:
        """Per-node mean of ``size`` fresh draws, one generator per node."""
        g = self.base.local_gradients(x)
        noise = np.stack([self._noise(rng, size).mean(axis=0) for rng in rngs])
        self.ifo.add(self.m * size)
        return g + noise

    def minibatch_difference(self, x_new: np.ndarray, x_old: np.ndarray, size: int, rngs) -> np.ndarray:
        # the same draw is used at both points, so the additive noise cancels
        for rng in rngs:
            self._noise(rng, size)
        diff = self.base.local_gradients(x_new) - self.base.local_gradients(x_old)
        self.ifo.add(self.m * size, 2 * self.m * size)
        return diff

    def local_gradients(self, x: np.ndarray) -> np.ndarray:
        return self.base.local_gradients(x)

    def global_average_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.base.global_average_gradient(x)

    def objective(self, x_bar: np.ndarray) -> float:
        return self.base.objective(x_bar)


def _quadratic_data(rng, m, n, d, spread=1.0):
    centers = rng.normal(0.0, spread, size=(m, 1, d))
    return {"a": centers + rng.normal(size=(m, n, d))}


def _logistic_data(rng, m, n, d, flip=0.1):
    w_star = rng.normal(size=d)
    w_node = w_star + 0.5 * rng.normal(size=(m, 1, d))
    z = rng.normal(size=(m, n, d)) / np.sqrt(d)
    score = np.einsum("mnd,mkd->mn", z, w_node)
    y = np.where(score >= 0, 1.0, -1.0)
    y[rng.random((m, n)) < flip] *= -1
    return {"z": z, "y": y}


def make_problem(
    kind: str,
    m: int,
    n: int,
    d: int,
    seed: int = 0,
    lam: float = 0.1,
    online: bool = False,
    sigma2: float = 1.0,
) -> FiniteSumProblem | OnlineProblem:
    """Build a deterministic test problem from ``seed``.

    With ``online=True`` the finite instance of size ``n`` per node only
    defines the mean gradient field and draws come from the Gaussian model
    described in :class:`OnlineProblem`.
    """
    if kind not in KINDS:
        raise ProblemError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    _check_sizes(m=m, n=n, d=d)
    if lam < 0:
        raise ProblemError("regularizer weight must be nonnegative")
    rng = np.random.default_rng(seed)
    if kind == "shifted-quadratic":
        base = FiniteSumProblem(kind, m, n, d, _quadratic_data(rng, m, n, d), L=1.0)
    else:
        data = _logistic_data(rng, m, n, d)
        L = 0.25 * float(np.max(np.sum(data["z"] ** 2, axis=-1))) + 2.0 * lam
        base = FiniteSumProblem(kind, m, n, d, data, L=L, lam=lam)
    if online:
        return OnlineProblem(base, sigma2)
    return base


def quadratic_from_centers(a: np.ndarray) -> FiniteSumProblem:
    """Shifted quadratic with explicit sample centres ``a`` of shape (m, n, d)."""
    a = np.array(a, dtype=float)
    m, n, d = a.shape
    return FiniteSumProblem("shifted-quadratic", m, n, d, {"a": a}, L=1.0)
