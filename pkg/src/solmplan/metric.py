"""Perturbation-induced observation loss.

The loss measures how sensitive the least-squares pose update is to
perturbations of the observations.  With ``dx*`` the update, ``r`` its
residual and ``sigma1`` the smallest singular value of ``A``::

    xi  = |dx*| + |r| / sigma1
    Phi = xi^2 A A^T + b b^T            (rank <= n + 1)
    q   = sqrt(w1 * lambda + w2) / sigma1

where ``lambda`` is picked from the spectrum of ``Phi``: zero for ``min``,
the n-th largest eigenvalue for ``n`` and the largest for ``max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .observation import ObservationSet

STRATEGIES = ("min", "n", "max")
STATE_DIM = 3
DEGENERATE_LOSS = math.inf


@dataclass(frozen=True)
class MetricConfig:
    w1: float = 0.5
    w2: float = 0.5
    strategy: str = "n"
    sigma_floor: float = 1e-6

    def __post_init__(self) -> None:
        if not (self.w1 > 0 and self.w2 > 0 and abs(self.w1 + self.w2 - 1.0) < 1e-12):
            raise ValueError(f"weights must be positive and sum to 1, got w1={self.w1}, w2={self.w2}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be >= 0")


@dataclass(frozen=True)
class LeastSquaresCore:
    dx_star: np.ndarray
    r: np.ndarray
    sigma1: float
    xi: float
    degenerate: bool


@dataclass(frozen=True)
class MetricResult:
    q: float
    sigma1: float
    xi: float
    lambda_top: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False
    strategy: str = "n"
    m: int = 0

    def losses(self, cfg: MetricConfig) -> dict[str, float]:
        """Loss under every strategy for the same spectrum."""
        if self.degenerate:
            return {s: DEGENERATE_LOSS for s in STRATEGIES}
        return {s: strategy_loss(s, self.sigma1, self.lambda_top, cfg.w1, cfg.w2) for s in STRATEGIES}

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "sigma1": self.sigma1,
            "xi": self.xi,
            "lambda_top": [float(v) for v in self.lambda_top],
            "degenerate": self.degenerate,
            "strategy": self.strategy,
            "m": self.m,
        }


def smallest_singular_value(A: np.ndarray) -> float:
    """sigma_min(A) from the 3x3 (n x n) Gram matrix A^T A."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return 0.0
    ev = np.linalg.eigvalsh(A.T @ A)
    return math.sqrt(max(float(ev[0]), 0.0))


def least_squares_core(A: np.ndarray, b: np.ndarray, sigma_floor: float = 1e-6) -> LeastSquaresCore:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1] if A.ndim == 2 else STATE_DIM
    if A.shape[0] < n:
        return LeastSquaresCore(np.zeros(n), -b.copy(), 0.0, math.inf, True)
    sigma1 = smallest_singular_value(A)
    dx, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = A @ dx - b
    if sigma1 < sigma_floor:
        return LeastSquaresCore(dx, r, sigma1, math.inf, True)
    xi = float(np.linalg.norm(dx) + np.linalg.norm(r) / sigma1)
    return LeastSquaresCore(dx, r, sigma1, xi, False)


def phi_top_eigs(A: np.ndarray, b: np.ndarray, xi: float, n: int | None = None) -> np.ndarray:
    """The n + 1 largest eigenvalues of ``xi^2 A A^T + b b^T``, descending.

    Phi = M M^T with M = [xi A | b], so its nonzero spectrum equals that of the
    small Gram matrix M^T M; the other m - n - 1 eigenvalues are exactly zero.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = A.shape[1] if n is None else n
    m = A.shape[0]
    if m <= n:
        raise ValueError(f"need m > n observations, got m={m}, n={n}")
    M = np.hstack([xi * A, b])
    lam = np.linalg.eigvalsh(M.T @ M)[::-1]
    return np.clip(lam, 0.0, None)


def strategy_loss(strategy: str, sigma1: float, lambda_top: np.ndarray, w1: float, w2: float,
                  n: int = STATE_DIM) -> float:
    if strategy == "min":
        lam = 0.0
    elif strategy == "n":
        lam = float(lambda_top[n - 1])
    elif strategy == "max":
        lam = float(lambda_top[0])
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return math.sqrt(w1 * lam + w2) / sigma1


def evaluate_system(A: np.ndarray, b: np.ndarray, cfg: MetricConfig = MetricConfig()) -> MetricResult:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m = len(b)
    n = A.shape[1] if A.ndim == 2 and A.shape[1] else STATE_DIM
    if m <= n:
        return MetricResult(DEGENERATE_LOSS, 0.0, math.inf, np.zeros(0), True, cfg.strategy, m)
    core = least_squares_core(A, b, cfg.sigma_floor)
    if core.degenerate:
        return MetricResult(DEGENERATE_LOSS, core.sigma1, core.xi, np.zeros(0), True, cfg.strategy, m)
    lam = phi_top_eigs(A, b, core.xi, n)
    q = strategy_loss(cfg.strategy, core.sigma1, lam, cfg.w1, cfg.w2, n)
    return MetricResult(q, core.sigma1, core.xi, lam, False, cfg.strategy, m)


def evaluate(obs: ObservationSet, cfg: MetricConfig = MetricConfig()) -> MetricResult:
    """Observation loss of one linearized scan; degenerate sets get an infinite loss."""
    return evaluate_system(obs.A, obs.b, cfg)


def solution_shift_bound(core: LeastSquaresCore, dA_2: float, dA_F: float, db: float) -> float:
    """Upper bound on |x_hat - x| for perturbations with the given norms.

    Valid for a full-column-rank ``A`` while ``dA_2 < sigma1``; returns inf otherwise.
    """
    gap = core.sigma1 - dA_2
    if gap <= 0:
        return math.inf
    return (core.xi * dA_F + db) / gap


def bound_norm_rates(A: np.ndarray, b: np.ndarray, alpha: np.ndarray) -> tuple[float, float, float]:
    """Derivatives at zero perturbation along unit direction ``alpha`` (row-major dK).

    Returns (d|dA|_F/dr_k, d|db|/dr_k, d|db|/dr_t).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m = len(b)
    dk = np.asarray(alpha, dtype=float).reshape(m, m)
    aat = A @ A.T
    bbt = np.outer(b, b)
    d_a = math.sqrt(max(float(np.einsum("ji,ik,jk->", dk, aat, dk)), 0.0))
    d_b = math.sqrt(max(float(np.einsum("ji,ik,jk->", dk, bbt, dk)), 0.0))
    return d_a, d_b, 1.0


def directional_bound_sensitivity(W: np.ndarray, beta: np.ndarray) -> float:
    """Rate of growth of sqrt(dt^T W dt) at zero along the unit direction ``beta``."""
    W = np.asarray(W, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not np.allclose(W, np.diag(np.diag(W))) or np.any(np.diag(W) <= 0):
        raise ValueError("W must be diagonal with positive entries")
    if abs(np.linalg.norm(beta) - 1.0) > 1e-9:
        raise ValueError("beta must be a unit vector")
    return math.sqrt(float(beta @ W @ beta))
