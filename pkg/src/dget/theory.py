"""Stepsize, potential-function and batch-size constants for D-GET.

With ``b = 1 + 1/beta`` and ``D = 1 - (1 + beta) eta^2`` the potential
coefficients are

    C1 = (1/2 - a L/2 - 4 a^2 L^2 - 24 b a^2 L^2) a
    C2 = D - (48 b + 9) L^2 a
    C3 = (D - b a - (24 b + 4) a^2 L^2) a

and ``K1``, ``K2``, ``K3`` are the positive roots of ``C1/a``, ``C2`` and
``C3/a``; any stepsize below all three keeps every coefficient positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class TheoryError(ValueError):
    pass


class StepsizeTooLargeError(TheoryError):
    """A potential coefficient is nonpositive at the requested stepsize."""

    def __init__(self, constants: "PotentialConstants"):
        super().__init__(
            "stepsize too large for Theorem 1 guarantees "
            f"(C1={constants.C1:.3g}, C2={constants.C2:.3g}, C3={constants.C3:.3g})"
        )
        self.constants = constants


@dataclass(frozen=True)
class StepsizePlan:
    beta: float
    K1: float
    K2: float
    K3: float
    alpha: float
    safety: float


@dataclass(frozen=True)
class PotentialConstants:
    C0: float
    C1: float
    C2: float
    C3: float

    @property
    def valid(self) -> bool:
        return self.C1 > 0 and self.C2 > 0 and self.C3 > 0


def _contraction_gap(eta: float, beta: float) -> float:
    return 1.0 - (1.0 + beta) * eta**2


def choose_beta(eta: float) -> float:
    """Default ``beta = (1 - eta^2) / (2 eta^2)``, clamped to ``[1e-3, 10]``.

    The lower clamp is skipped when it would push ``(1 + beta) eta^2`` above
    ``(1 + eta^2) / 2``.
    """
    if not 0.0 <= eta < 1.0:
        raise TheoryError(f"eta must lie in [0, 1), got {eta}")
    if eta == 0.0:
        return 1.0
    e2 = eta * eta
    if e2 < 1e-300:
        return 10.0
    beta = min((1.0 - e2) / (2.0 * e2), 10.0)
    if beta < 1e-3 and (1.0 + 1e-3) * e2 <= (1.0 + e2) / 2.0:
        beta = 1e-3
    return beta


def theorem1_stepsize(L: float, eta: float, beta: float | None = None, safety: float = 0.5) -> StepsizePlan:
    """Candidate stepsizes and ``alpha = safety * min(K1, K2, K3)``."""
    if L <= 0:
        raise TheoryError("L must be positive")
    if not 0 < safety <= 1:
        raise TheoryError("safety factor must lie in (0, 1]")
    if beta is None:
        beta = choose_beta(eta)
    if beta <= 0:
        raise TheoryError("beta must be positive")
    gap = _contraction_gap(eta, beta)
    if gap <= 0:
        raise TheoryError(f"(1 + beta) eta^2 = {1 - gap:.6g} must be < 1")
    b = 1.0 + 1.0 / beta
    L2 = L * L
    den = 48.0 * b * L2 + 8.0 * L2
    k1 = (-L / 2.0 + math.sqrt((L / 2.0) ** 2 + den)) / den
    k2 = gap / (48.0 * b * L2 + 9.0 * L2)
    k3 = (-b + math.sqrt(b * b + 4.0 * gap * (24.0 * b + 4.0) * L2)) / den
    return StepsizePlan(beta, k1, k2, k3, safety * min(k1, k2, k3), safety)


def potential_constants(
    alpha: float, L: float, beta: float, eta: float, m: int, strict: bool = True
) -> PotentialConstants:
    """``C1``-``C3`` of the potential and ``C0`` of the rate bound.

    Raises :class:`StepsizeTooLargeError` when a coefficient is nonpositive,
    unless ``strict`` is false, in which case ``C0`` is NaN.
    """
    if alpha <= 0:
        raise TheoryError("alpha must be positive")
    b = 1.0 + 1.0 / beta
    L2 = L * L
    gap = _contraction_gap(eta, beta)
    c1 = (0.5 - alpha * L / 2.0 - 4.0 * alpha**2 * L2 - 24.0 * b * alpha**2 * L2) * alpha
    # written as den * (root - alpha) so alpha == K2 gives exactly zero
    den2 = 48.0 * b * L2 + 9.0 * L2
    c2 = den2 * (gap / den2 - alpha)
    c3 = (gap - b * alpha - 24.0 * b * alpha**2 * L2 - 4.0 * alpha**2 * L2) * alpha
    if c1 > 0 and c2 > 0 and c3 > 0:
        a2L2 = 8.0 * alpha**2 * L2
        c0 = (a2L2 + 2.0) / c1 + (16.0 * L2 + 1.0) / (m * c2) + a2L2 / (m * c3)
    else:
        c0 = math.nan
    consts = PotentialConstants(c0, c1, c2, c3)
    if strict and not consts.valid:
        raise StepsizeTooLargeError(consts)
    return consts


def _ceil(x: float) -> int:
    # guard against round-off such as 48 / 0.1 = 480.00000000000006
    return math.ceil(round(x, 9))


def finite_sum_batch_plan(n: int) -> tuple[int, int]:
    """``q = s2 = ceil(sqrt(n))``."""
    if n < 1:
        raise TheoryError("n must be positive")
    q = math.isqrt(n)
    if q * q < n:
        q += 1
    return q, q


def online_batch_plan(epsilon: float, sigma2: float, C0: float, alpha: float, beta: float) -> tuple[int, int, int]:
    """Outer batch ``s1`` for target accuracy ``epsilon``, then ``q = s2 = ceil(sqrt(s1))``."""
    if epsilon <= 0:
        raise TheoryError("epsilon must be positive")
    raw = (4.0 * C0 * alpha * (7.0 + 6.0 / beta) * sigma2 + 8.0 * sigma2) / epsilon
    s1 = max(1, _ceil(raw))
    s2 = max(1, _ceil(math.sqrt(s1)))
    return s1, s2, s2


@dataclass(frozen=True)
class IfoPrediction:
    predicted: int
    bound: int


def predicted_ifo(T: int, q: int, n_or_s1: int, s2: int, m: int, mode: str = "finite-sum",
                  algorithm: str = "dget") -> IfoPrediction:
    """Exact sample-access total of a run, and the looser textbook bound.

    For D-GET, outer iterations ``r = 0, q, 2q, ...`` each cost ``m * n``
    (or ``m * s1`` online) and the rest cost ``m * s2``.  The bound is
    ``m (ceil(T/q) n + T s2)``, which excludes the initial refresh.
    """
    if mode not in ("finite-sum", "online"):
        raise TheoryError(f"unknown mode {mode!r}")
    if algorithm == "dget":
        outer = T // q + 1
        predicted = outer * m * n_or_s1 + (T - T // q) * m * s2
        bound = m * (-(-T // q) * n_or_s1 + T * s2)
        if predicted > bound + m * n_or_s1:
            raise AssertionError("prediction exceeds bound plus initialization slack")
        return IfoPrediction(predicted, bound)
    per_iter = m * n_or_s1 if algorithm == "dgd" else m * s2
    total = (T + 1) * per_iter
    return IfoPrediction(total, total)


def predicted_comm_rounds(T: int, algorithm: str = "dget") -> int:
    if algorithm in ("dget", "gnsd"):
        return 2 * T
    if algorithm in ("dgd", "dsgd"):
        return T
    raise TheoryError(f"unknown algorithm {algorithm!r}")
