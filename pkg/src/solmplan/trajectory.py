"""Piecewise-cubic state trajectories and perception-aware optimization.

A trajectory through waypoints P_0..P_N (x, y, theta with theta unwrapped)
with durations T_1..T_N is the cubic spline that interpolates the waypoints,
has continuous velocity and acceleration at interior knots, starts with a
given velocity and ends at rest.  Its 4N x 3 coefficients solve a banded
linear system M(T) c = b(P); the optimizer moves interior waypoints and
log-durations and pulls gradients back through that solve with the adjoint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import nnls

from .sdf import SdfField, sample_sdf_many
from .solm import SolmGrid, interpolate_many

log = logging.getLogger(__name__)

BAND = (3, 1)  # (lower, upper) bandwidth of M(T)
MAX_SEGMENTS = 30
HEADING_MODES = ("path", "tangent", "blend")
TAU_BOUNDS = (math.log(1e-3), math.log(1e4))  # keeps line-search trials from overflowing exp
ARMIJO_C1 = 1e-4
GRADIENT_MET = "gradient below tolerance"
REDUCTION_MET = "relative reduction below tolerance"
ARMIJO_MAX_HALVINGS = 40


class TrajectoryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spline construction


def _banded_system(T: np.ndarray) -> np.ndarray:
    """M(T) in LAPACK band storage, shape (l + u + 1, 4N)."""
    N = len(T)
    n = 4 * N
    l, u = BAND
    ab = np.zeros((l + u + 1, n))

    def put(r, c, v):
        ab[u + r - c, c] = v

    put(0, 0, 1.0)
    put(1, 1, 1.0)
    for i in range(N):
        t = T[i]
        r = 2 + 4 * i
        base = 4 * i
        for m in range(4):
            put(r, base + m, t ** m)
        if i < N - 1:
            put(r + 1, base + 4, 1.0)
            put(r + 2, base + 1, 1.0)
            put(r + 2, base + 2, 2 * t)
            put(r + 2, base + 3, 3 * t * t)
            put(r + 2, base + 5, -1.0)
            put(r + 3, base + 2, 2.0)
            put(r + 3, base + 3, 6 * t)
            put(r + 3, base + 6, -2.0)
        else:
            put(r + 1, base + 1, 1.0)
            put(r + 1, base + 2, 2 * t)
            put(r + 1, base + 3, 3 * t * t)
    return ab


def _dense_from_band(ab: np.ndarray) -> np.ndarray:
    l, u = BAND
    n = ab.shape[1]
    M = np.zeros((n, n))
    for c in range(n):
        for r in range(max(0, c - u), min(n, c + l + 1)):
            M[r, c] = ab[u + r - c, c]
    return M


def _transpose_band(ab: np.ndarray) -> np.ndarray:
    """Band storage of M^T, bandwidths swapped to (u, l)."""
    l, u = BAND
    n = ab.shape[1]
    abt = np.zeros_like(ab)
    for c in range(n):
        for r in range(max(0, c - u), min(n, c + l + 1)):
            # M[r, c] -> M^T[c, r], stored with upper bandwidth l
            abt[l + c - r, r] = ab[u + r - c, c]
    return abt


def _rhs(P: np.ndarray, v0: np.ndarray, v_end: np.ndarray) -> np.ndarray:
    N = len(P) - 1
    b = np.zeros((4 * N, P.shape[1]))
    b[0] = P[0]
    b[1] = v0
    for i in range(N):
        b[2 + 4 * i] = P[i + 1]
        if i < N - 1:
            b[3 + 4 * i] = P[i + 1]
        else:
            b[3 + 4 * i] = v_end
    return b


def solve_coefficients(P: np.ndarray, T: np.ndarray, v0=None, v_end=None) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    T = np.asarray(T, dtype=float)
    if len(P) != len(T) + 1 or len(T) < 1:
        raise TrajectoryError("need N + 1 waypoints for N durations, N >= 1")
    if np.any(T <= 0):
        raise TrajectoryError("durations must be strictly positive")
    d = P.shape[1]
    v0 = np.zeros(d) if v0 is None else np.asarray(v0, dtype=float)
    v_end = np.zeros(d) if v_end is None else np.asarray(v_end, dtype=float)
    return solve_banded(BAND, _banded_system(T), _rhs(P, v0, v_end))


@dataclass
class CubicSplineTraj:
    waypoints: np.ndarray  # (N + 1, 3), theta unwrapped
    durations: np.ndarray  # (N,)
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    coeffs: np.ndarray = field(init=False, repr=False)  # (4N, 3)

    def __post_init__(self) -> None:
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        self.coeffs = solve_coefficients(self.waypoints, self.durations, self.v0)

    @property
    def n_segments(self) -> int:
        return len(self.durations)

    @property
    def total_time(self) -> float:
        return float(self.durations.sum())

    @property
    def knot_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def segment_coeffs(self, i: int) -> np.ndarray:
        return self.coeffs[4 * i:4 * i + 4]

    def locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        knots = self.knot_times
        idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, self.n_segments - 1)
        return idx, t - knots[idx]

    def evaluate_many(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pose, velocity and acceleration at times ``t`` (clamped to [0, T_s])."""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.total_time)
        idx, tau = self.locate(t)
        C = self.coeffs.reshape(self.n_segments, 4, 3)[idx]
        tt = tau[:, None]
        pos = C[:, 0] + tt * (C[:, 1] + tt * (C[:, 2] + tt * C[:, 3]))
        vel = C[:, 1] + tt * (2 * C[:, 2] + 3 * tt * C[:, 3])
        acc = 2 * C[:, 2] + 6 * tt * C[:, 3]
        return pos, vel, acc

    def retimed(self, durations: np.ndarray) -> "CubicSplineTraj":
        return CubicSplineTraj(self.waypoints.copy(), np.asarray(durations, dtype=float), self.v0.copy())


@dataclass(frozen=True)
class TrajectoryState:
    pose: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    clamped: bool


def evaluate(traj: CubicSplineTraj, t: float) -> TrajectoryState:
    clamped = not (0.0 <= t <= traj.total_time)
    pos, vel, acc = traj.evaluate_many([t])
    return TrajectoryState(pos[0], vel[0], acc[0], clamped)


def knot_continuity(traj: CubicSplineTraj) -> np.ndarray:
    """Max |jump| of position, velocity and acceleration over interior knots."""
    C = traj.coeffs.reshape(traj.n_segments, 4, 3)
    out = np.zeros(3)
    for i in range(traj.n_segments - 1):
        t = traj.durations[i]
        c, n = C[i], C[i + 1]
        p = c[0] + t * c[1] + t * t * c[2] + t ** 3 * c[3]
        v = c[1] + 2 * t * c[2] + 3 * t * t * c[3]
        a = 2 * c[2] + 6 * t * c[3]
        out = np.maximum(out, [np.abs(p - n[0]).max(), np.abs(v - n[1]).max(), np.abs(a - 2 * n[2]).max()])
    return out


# ---------------------------------------------------------------------------
# initialization


def downsample_indices(n: int, max_segments: int = MAX_SEGMENTS) -> np.ndarray:
    stride = max(1, math.ceil((n - 1) / max_segments))
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return np.array(idx)


def init_from_path(path_poses: np.ndarray, v_avg: float = 0.5, l_yaw: float = 0.5,
                   heading: str = "path", max_segments: int = MAX_SEGMENTS,
                   start=None, goal=None) -> CubicSplineTraj:
    """Spline through (a thinned copy of) a grid path, timed at ``v_avg``.

    ``start`` and ``goal`` replace the first and last cell centres so the
    trajectory begins and ends at the exact requested poses.  Interior
    headings come from ``heading``: "path" keeps the cell yaw, "tangent"
    follows the direction of travel (for robots that cannot slide sideways)
    and "blend" turns evenly from the start to the goal heading (for
    yaw-agnostic single-channel maps).
    """
    if heading not in HEADING_MODES:
        raise TrajectoryError(f"heading must be one of {HEADING_MODES}")
    poses = np.asarray(path_poses, dtype=float)
    if len(poses) < 2:
        raise TrajectoryError("a trajectory needs a path with at least two cells")
    if v_avg <= 0:
        raise TrajectoryError("v_avg must be positive")
    P = poses[downsample_indices(len(poses), max_segments)].copy()
    if start is not None:
        P[0] = np.asarray(start, dtype=float)
    if goal is not None:
        P[-1] = np.asarray(goal, dtype=float)
    if heading == "tangent" and len(P) > 2:
        d = P[2:, :2] - P[:-2, :2]
        P[1:-1, 2] = np.arctan2(d[:, 1], d[:, 0])
    P[:, 2] = np.unwrap(P[:, 2])
    if heading == "blend":
        arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(P[:, :2], axis=0).T))])
        turn = math.remainder(P[-1, 2] - P[0, 2], 2 * math.pi)
        frac = arc / arc[-1] if arc[-1] > 0 else np.linspace(0, 1, len(P))
        P[:, 2] = P[0, 2] + frac * turn
    step = np.diff(P, axis=0)
    length = np.sqrt(step[:, 0] ** 2 + step[:, 1] ** 2 + (l_yaw * step[:, 2]) ** 2)
    T = np.maximum(length, 1e-3) / v_avg
    return CubicSplineTraj(P, T)


# ---------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class OptParams:
    rho_t: float = 1.0
    v_mlon: float = 1.0
    v_mlat: float = 0.5
    w_max: float = 1.0
    r_safe: float = 0.3
    kappa: int = 8
    w_safety: float = 1e5
    w_dynamics: float = 1e5
    loss_weight: float = 1.0  # 0 drops the loss integral (perception-unaware baseline)
    nonholonomic: bool = False
    alm_lambda0: float = 0.0
    alm_rho0: float = 1.0
    alm_gamma: float = 10.0
    alm_cap: float = 1e4
    alm_tol: float = 1e-4
    alm_max_outer: int = 8
    lbfgs_memory: int = 8
    lbfgs_max_iter: int = 500
    lbfgs_gtol: float = 1e-6
    # Clearance is optimized against r_safe + margin.  The margin keeps samples
    # out of the band where the loss interpolates towards obstacle cells, whose
    # surrogate value makes a cliff the line search cannot cross smoothly.
    safety_margin: float = 0.4
    limit_margin: float = 0.02  # relative headroom kept below the velocity limits when retiming

    def __post_init__(self) -> None:
        if min(self.v_mlon, self.v_mlat, self.w_max) <= 0 or self.r_safe < 0:
            raise TrajectoryError("velocity limits must be positive and r_safe >= 0")
        if self.kappa < 4:
            raise TrajectoryError("kappa must be >= 4")
        if self.rho_t < 0:
            raise TrajectoryError("rho_t must be >= 0")


class Problem:
    """Objective of Problem (20) over interior waypoints and log-durations."""

    def __init__(self, traj: CubicSplineTraj, solm: SolmGrid | None, sdf: SdfField | None,
                 params: OptParams, kappa: int | None = None):
        self.P0 = traj.waypoints[0].copy()
        self.PN = traj.waypoints[-1].copy()
        self.v0 = traj.v0.copy()
        self.N = traj.n_segments
        self.solm = solm
        self.sdf = sdf
        self.params = params
        self.kappa = kappa or params.kappa
        k = self.kappa
        self.s = np.arange(k + 1) / k
        beta = np.ones(k + 1)
        beta[0] = beta[-1] = 0.5
        self.beta = beta
        self.n_samples = self.N * (k + 1)
        self.lam = np.full(self.n_samples, params.alm_lambda0)
        self.rho = params.alm_rho0
        self.use_alm = params.nonholonomic

    # -- packing
    def pack(self, traj: CubicSplineTraj) -> np.ndarray:
        return np.concatenate([traj.waypoints[1:-1].ravel(), np.log(traj.durations)])

    def unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n_int = 3 * (self.N - 1)
        P = np.vstack([self.P0, z[:n_int].reshape(-1, 3), self.PN])
        T = np.exp(z[n_int:])
        return P, T

    def trajectory(self, z: np.ndarray) -> CubicSplineTraj:
        P, T = self.unpack(z)
        return CubicSplineTraj(P, T, self.v0)

    # -- sample-level costs
    def _sample_costs(self, pos, vel, r_safe):
        """Per-sample cost f and its partials wrt position and velocity."""
        p = self.params
        n = len(pos)
        f = np.zeros(n)
        fp = np.zeros((n, 3))
        fv = np.zeros((n, 3))
        comps = {}
        if self.solm is not None:
            q, gq = interpolate_many(self.solm, pos)
            f += p.loss_weight * q
            fp += p.loss_weight * gq
            comps["loss"] = q
        th = pos[:, 2]
        c, s = np.cos(th), np.sin(th)
        vlon = c * vel[:, 0] + s * vel[:, 1]
        vlat = -s * vel[:, 0] + c * vel[:, 1]
        om = vel[:, 2]
        dyn = np.zeros(n)
        for v, vmax, dv_dx, dv_dy, dv_dth, col in (
            (vlon, p.v_mlon, c, s, vlat, None),
            (vlat, p.v_mlat, -s, c, -vlon, None),
            (om, p.w_max, 0.0, 0.0, 0.0, 2),
        ):
            g = v * v - vmax * vmax
            h = np.maximum(g, 0.0)
            dyn += p.w_dynamics * h ** 3
            dpdv = p.w_dynamics * 3 * h * h * 2 * v
            if col is None:
                fv[:, 0] += dpdv * dv_dx
                fv[:, 1] += dpdv * dv_dy
                fp[:, 2] += dpdv * dv_dth
            else:
                fv[:, 2] += dpdv
        f += dyn
        comps["dynamics"] = dyn
        if self.sdf is not None:
            d, gd = sample_sdf_many(self.sdf, pos[:, :2])
            h = np.maximum(r_safe - d, 0.0)
            f += p.w_safety * h ** 3
            fp[:, :2] += (-3 * p.w_safety * h * h)[:, None] * gd
            comps["safety"] = p.w_safety * h ** 3
        return f, fp, fv, comps

    @staticmethod
    def holonomy(pos, vel):
        th = pos[:, 2]
        s, c = np.sin(th), np.cos(th)
        e = vel[:, 0] * s - vel[:, 1] * c
        de_dth = vel[:, 0] * c + vel[:, 1] * s
        return e, de_dth, s, -c

    def _samples(self, C, T):
        """Positions, velocities, accelerations at the quadrature nodes."""
        t = T[:, None] * self.s[None, :]  # (N, k+1)
        Cs = C.reshape(self.N, 4, 3)
        tt = t[..., None]
        pos = Cs[:, None, 0] + tt * (Cs[:, None, 1] + tt * (Cs[:, None, 2] + tt * Cs[:, None, 3]))
        vel = Cs[:, None, 1] + tt * (2 * Cs[:, None, 2] + 3 * tt * Cs[:, None, 3])
        acc = 2 * Cs[:, None, 2] + 6 * tt * Cs[:, None, 3]
        return t, pos.reshape(-1, 3), vel.reshape(-1, 3), acc.reshape(-1, 3)

    def value_and_grad(self, z: np.ndarray, with_grad: bool = True):
        p = self.params
        P, T = self.unpack(z)
        N, k = self.N, self.kappa
        ab = _banded_system(T)
        b = _rhs(P, self.v0, np.zeros(3))
        C = solve_banded(BAND, ab, b)
        t, pos, vel, acc = self._samples(C, T)
        f, fp, fv, _ = self._sample_costs(pos, vel, p.r_safe + p.safety_margin)
        w = (T[:, None] / k * self.beta[None, :]).ravel()
        J = float(np.dot(w, f) + p.rho_t * T.sum())
        gp = w[:, None] * fp
        gv = w[:, None] * fv
        if self.use_alm:
            e, de_dth, de_dx, de_dy = self.holonomy(pos, vel)
            J += float(np.dot(self.lam, e) + 0.5 * self.rho * np.dot(e, e))
            mult = self.lam + self.rho * e
            gp[:, 2] += mult * de_dth
            gv[:, 0] += mult * de_dx
            gv[:, 1] += mult * de_dy
        if not with_grad:
            return J

        # explicit partials wrt coefficients and durations
        tt = t.reshape(-1)
        basis = np.stack([np.ones_like(tt), tt, tt ** 2, tt ** 3], 1)
        dbasis = np.stack([np.zeros_like(tt), np.ones_like(tt), 2 * tt, 3 * tt ** 2], 1)
        dJdC = (np.einsum("nm,nd->nmd", basis, gp) + np.einsum("nm,nd->nmd", dbasis, gv))
        dJdC = dJdC.reshape(N, k + 1, 4, 3).sum(axis=1).reshape(4 * N, 3)
        s_rep = np.tile(self.s, N)
        chain = (np.einsum("nd,nd->n", gp, vel) + np.einsum("nd,nd->n", gv, acc)) * s_rep
        dJdT = chain.reshape(N, k + 1).sum(1)
        dJdT += (f.reshape(N, k + 1) * self.beta[None, :]).sum(1) / k + p.rho_t

        # adjoint through M(T) c = b(P)
        lam = solve_banded(BAND[::-1], _transpose_band(ab), dJdC)
        Cs = C.reshape(N, 4, 3)
        for i in range(N):
            Ti = T[i]
            ci = Cs[i]
            r = 2 + 4 * i
            dJdT[i] -= lam[r] @ (ci[1] + 2 * Ti * ci[2] + 3 * Ti * Ti * ci[3])
            dv = 2 * ci[2] + 6 * Ti * ci[3]
            lam_v = lam[r + 2] if i < N - 1 else lam[r + 1]
            dJdT[i] -= lam_v @ dv
            if i < N - 1:
                dJdT[i] -= lam[r + 3] @ (6 * ci[3])
        dJdP = np.zeros((N + 1, 3))
        for i in range(N):
            dJdP[i + 1] += lam[2 + 4 * i]
            if i < N - 1:
                dJdP[i + 1] += lam[3 + 4 * i]
        grad = np.concatenate([dJdP[1:-1].ravel(), dJdT * T])
        return J, grad

    def holonomy_residual(self, z: np.ndarray) -> np.ndarray:
        P, T = self.unpack(z)
        C = solve_coefficients(P, T, self.v0)
        _, pos, vel, _ = self._samples(C, T)
        return self.holonomy(pos, vel)[0]


@dataclass
class OptResult:
    trajectory: CubicSplineTraj
    objective: float
    history: list[float]
    outer_iterations: int
    inner_iterations: int
    converged: bool
    warning: str | None = None
    infeasible_start: bool = False
    retime_factor: float = 1.0


def objective_breakdown(traj: CubicSplineTraj, solm: SolmGrid | None, sdf: SdfField | None,
                        params: OptParams, kappa: int | None = None) -> dict[str, float]:
    prob = Problem(traj, solm, sdf, params, kappa)
    C = traj.coeffs
    t, pos, vel, _ = prob._samples(C, traj.durations)
    _, _, _, comps = prob._sample_costs(pos, vel, params.r_safe + params.safety_margin)
    w = (traj.durations[:, None] / prob.kappa * prob.beta[None, :]).ravel()
    out = {name: float(np.dot(w, v)) for name, v in comps.items()}
    out["time"] = params.rho_t * traj.total_time
    return out


@dataclass
class InnerResult:
    x: np.ndarray
    fun: float
    nit: int
    stalled: bool
    message: str

    @property
    def converged(self) -> bool:
        return self.message in (GRADIENT_MET, REDUCTION_MET)


def lbfgs(fg, x0: np.ndarray, memory: int = 8, max_iter: int = 500, gtol: float = 1e-6,
          history: list[float] | None = None) -> InnerResult:
    """Limited-memory BFGS with Armijo backtracking.

    Only sufficient decrease is required of a step, so accepted objectives are
    strictly non-increasing even where the interpolated loss has kinks that
    defeat a Wolfe curvature test.  ``fg`` may return inf to reject a point.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    nit = 0
    message = "iteration limit"
    stalled = False
    while nit < max_iter:
        if np.abs(g).max() <= gtol:
            message = GRADIENT_MET
            break
        d = -g
        if S:
            q = g.copy()
            alphas = []
            for s, y in zip(reversed(S), reversed(Y)):
                a = s @ q / (y @ s)
                alphas.append(a)
                q -= a * y
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
            for (s, y), a in zip(zip(S, Y), reversed(alphas)):
                q += (a - y @ q / (y @ s)) * s
            d = -q
        slope = g @ d
        if slope >= 0:
            S.clear(), Y.clear()
            d, slope = -g, -(g @ g)
        step = 1.0 if S else min(1.0, 1.0 / np.linalg.norm(g))
        for _ in range(ARMIJO_MAX_HALVINGS):
            x_new = x + step * d
            f_new = fg(x_new, False)
            if f_new <= f + ARMIJO_C1 * step * slope:
                break
            step *= 0.5
        else:
            if S:  # curvature pairs misled us; retry from steepest descent
                S.clear(), Y.clear()
                continue
            x_new = _kink_step(fg, x, f, nit)
            if x_new is None:
                stalled = True
                message = "line search failed along steepest descent"
                break
        f_new, g_new = fg(x_new)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0), Y.pop(0)
        done = f - f_new <= 1e-12 * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        nit += 1
        if history is not None:
            history.append(float(f))
        if done:
            message = REDUCTION_MET
            break
    return InnerResult(x, float(f), nit, stalled, message)


def _min_norm_hull(G: np.ndarray) -> np.ndarray:
    """Smallest-norm vector in the convex hull of the rows of ``G``."""
    big = 1e3 * max(1.0, np.abs(G).max())
    A = np.vstack([G.T, np.full((1, len(G)), big)])
    b = np.concatenate([np.zeros(G.shape[1]), [big]])
    w, _ = nnls(A, b)
    w /= w.sum()
    return w @ G


def _kink_step(fg, x: np.ndarray, f: float, it: int, samples: int = 12):
    """Gradient-sampling step for a point where the objective has a kink.

    Gradients taken just around ``x`` see both sides of the kink; the
    smallest vector in their hull is a descent direction for the
    nonsmooth function whenever one exists.  Returns None if none is found.
    """
    rng = np.random.default_rng(it)
    _, g0 = fg(x)
    for radius in (1e-7, 1e-5, 1e-3):
        G = [g0]
        for _ in range(samples):
            _, gi = fg(x + radius * rng.standard_normal(x.shape))
            if gi is not None:
                G.append(gi)
        d = _min_norm_hull(np.asarray(G))
        dd = d @ d
        if dd < 1e-24:
            return None
        step = min(1.0, radius / math.sqrt(dd)) * 10.0
        for _ in range(ARMIJO_MAX_HALVINGS):
            x_new = x - step * d
            if fg(x_new, False) <= f - ARMIJO_C1 * step * dd:
                return x_new
            step *= 0.5
    return None


def _objective(prob: Problem):
    lo, hi = TAU_BOUNDS
    n_int = 3 * (prob.N - 1)

    def fg(z, with_grad=True):
        tau = z[n_int:]
        if np.any(tau < lo) or np.any(tau > hi):
            return (math.inf, None) if with_grad else math.inf
        return prob.value_and_grad(z, with_grad)

    return fg


def optimize(traj: CubicSplineTraj, solm: SolmGrid | None, sdf: SdfField | None,
             params: OptParams = OptParams()) -> OptResult:
    """Minimize loss integral + time + penalties; returns the best iterate.

    For nonholonomic robots the sideways-slip equality is handled with PHR
    augmented-Lagrangian outer iterations.  After convergence, durations are
    stretched uniformly if any velocity limit is still exceeded.
    """
    prob = Problem(traj, solm, sdf, params)
    z = prob.pack(traj)
    infeasible = False
    if solm is not None:
        pos, _, _ = traj.evaluate_many(np.linspace(0, traj.total_time, 10 * params.kappa * traj.n_segments))
        infeasible = any(_in_obstacle(solm, p) for p in pos)
    history = [float(prob.value_and_grad(z, with_grad=False))]
    warning = None
    inner = 0
    outer = 0
    converged = False
    for outer in range(1, (params.alm_max_outer if prob.use_alm else 1) + 1):
        res = lbfgs(_objective(prob), z, params.lbfgs_memory, params.lbfgs_max_iter,
                    params.lbfgs_gtol, history)
        inner += int(res.nit)
        z = res.x
        if res.stalled:
            warning = f"line search stalled: {res.message}"
        if not prob.use_alm:
            converged = res.converged
            break
        e = prob.holonomy_residual(z)
        viol = float(np.abs(e).max()) if e.size else 0.0
        log.debug("outer %d: inner %d, J %.6g, slip %.3g, rho %.3g, %s",
                  outer, res.nit, res.fun, viol, prob.rho, res.message)
        if viol <= params.alm_tol:
            converged = True
            break
        prob.lam = np.clip(prob.lam + prob.rho * e, -params.alm_cap, params.alm_cap)
        prob.rho = min(prob.rho * params.alm_gamma, params.alm_cap)
        history.append(float(prob.value_and_grad(z, with_grad=False)))
    best = prob.trajectory(z)
    best, factor = retime_to_limits(best, params)
    return OptResult(best, float(history[-1]), history, outer, inner, converged, warning, infeasible, factor)


def _in_obstacle(solm: SolmGrid, pose: np.ndarray) -> bool:
    a, b, _ = solm.dims
    i = int(math.floor((pose[0] - solm.origin[0]) / solm.resolution[0]))
    j = int(math.floor((pose[1] - solm.origin[1]) / solm.resolution[1]))
    if not (0 <= i < a and 0 <= j < b):
        return True
    return bool(solm.obstacle[:, j, i].any())


def velocity_ratio(traj: CubicSplineTraj, params: OptParams, n: int | None = None) -> float:
    """Largest |v| / v_max over body-frame speeds and yaw rate at dense samples."""
    n = n or 10 * params.kappa * traj.n_segments
    pos, vel, _ = traj.evaluate_many(np.linspace(0, traj.total_time, n + 1))
    c, s = np.cos(pos[:, 2]), np.sin(pos[:, 2])
    vlon = c * vel[:, 0] + s * vel[:, 1]
    vlat = -s * vel[:, 0] + c * vel[:, 1]
    return float(max(np.abs(vlon).max() / params.v_mlon, np.abs(vlat).max() / params.v_mlat,
                     np.abs(vel[:, 2]).max() / params.w_max))


def retime_to_limits(traj: CubicSplineTraj, params: OptParams) -> tuple[CubicSplineTraj, float]:
    """Stretch all durations by one factor so every velocity limit holds.

    Scaling time leaves the path, the clearance and the sign of the slip
    residual unchanged, and divides every velocity by the factor.
    """
    ratio = velocity_ratio(traj, params)
    target = 1.0 - params.limit_margin
    if ratio <= target:
        return traj, 1.0
    factor = ratio / target
    return traj.retimed(traj.durations * factor), factor


# ---------------------------------------------------------------------------
# audit and sampling


@dataclass(frozen=True)
class Audit:
    v_lon: float
    v_lat: float
    omega: float
    min_sdf: float
    holonomy: float

    def ok(self, params: OptParams, tol: float = 1e-3, check_holonomy: bool | None = None) -> bool:
        hol = params.nonholonomic if check_holonomy is None else check_holonomy
        good = (self.v_lon <= params.v_mlon + tol and self.v_lat <= params.v_mlat + tol
                and self.omega <= params.w_max + tol and self.min_sdf >= params.r_safe - tol)
        return good and (not hol or self.holonomy < tol)


def audit(traj: CubicSplineTraj, sdf: SdfField | None, params: OptParams, n: int | None = None) -> Audit:
    """Worst-case constraint values at 10 * kappa * N uniform samples."""
    n = n or 10 * params.kappa * traj.n_segments
    pos, vel, _ = traj.evaluate_many(np.linspace(0, traj.total_time, n + 1))
    c, s = np.cos(pos[:, 2]), np.sin(pos[:, 2])
    vlon = c * vel[:, 0] + s * vel[:, 1]
    vlat = -s * vel[:, 0] + c * vel[:, 1]
    d = sample_sdf_many(sdf, pos[:, :2])[0].min() if sdf is not None else math.inf
    return Audit(float(np.abs(vlon).max()), float(np.abs(vlat).max()), float(np.abs(vel[:, 2]).max()),
                 float(d), float(np.abs(vel[:, 0] * s - vel[:, 1] * c).max()))


def sample_fixed_rate(traj: CubicSplineTraj, hz: float = 50.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, poses (theta wrapped) and velocities at a fixed rate, ending exactly at T_s."""
    n = int(math.floor(traj.total_time * hz + 1e-9))
    t = np.arange(n + 1) / hz
    if t[-1] < traj.total_time - 1e-12:
        t = np.append(t, traj.total_time)
    pos, vel, _ = traj.evaluate_many(t)
    pos = pos.copy()
    pos[:, 2] = (pos[:, 2] + math.pi) % (2 * math.pi) - math.pi
    return t, pos, vel


def single_pose(pose: np.ndarray) -> CubicSplineTraj:
    """Zero-length trajectory that stays at ``pose`` (used when start = goal)."""
    p = np.asarray(pose, dtype=float)
    return CubicSplineTraj(np.vstack([p, p]), np.array([1e-3]))
