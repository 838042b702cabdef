"""Adaptive explicit Runge-Kutta integration of non-autonomous ODE systems.

The integrator is the Dormand-Prince embedded 5(4) pair with PI step-size
control, FSAL, and the standard quartic dense-output interpolant.  States are
numpy arrays of shape ``(..., d)``: any leading axes are treated as a batch of
independent copies integrated on a shared adaptive grid (the step controller
uses the worst error over the batch, so every copy meets the tolerance).
Backward integration (``t1 < t0``) is supported throughout.

The matrix variational equation ``dY/dt = J(t, x(t)) Y``, ``Y(t0) = I`` can be
integrated alongside the state, which is how fundamental matrices are produced
everywhere else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationError, NonFiniteState, StepSizeUnderflow

__all__ = [
    "FieldEval",
    "Trajectory",
    "FundamentalPath",
    "integrate",
    "integrate_with_variational",
]

# Dormand-Prince 5(4) tableau (Hairer-Norsett-Wanner; the ode45 pair).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# Difference between 5th- and 4th-order weights; h * sum(E_i k_i) estimates the
# local error of the accepted (5th-order) solution.
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# Quartic dense-output interpolant built from the pair's stage values
# (Shampine's coefficients): y(t0 + th*h) = y0 + h * K^T P [th, th^2, th^3, th^4].
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_ORDER_EXP = 1.0 / 5.0
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents (Hairer's DOPRI5 stabilization).
_PI_BETA = 0.04
_PI_ALPHA = 0.2 - 0.75 * _PI_BETA
_MAX_STEPS = 2_000_000

TOL_MIN = 1e-14
TOL_MAX = 1e-2


class FieldEval:
    """A time-dependent vector field ``f(t, x)`` with an optional Jacobian.

    ``f`` must be vectorized over leading batch axes: it maps ``(t, x)`` with
    ``x`` of shape ``(..., n)`` to an array of the same shape.  ``jac``, when
    given, maps to ``(..., n, n)`` with entries ``J[..., i, j] = df_i/dx_j``;
    otherwise a central finite-difference fallback with step
    ``h = max(1e-6, 1e-6 * ||x||)`` is used.
    """

    def __init__(self, f: Callable, jac: Callable | None = None, name: str = ""):
        self.f = f
        self.jac = jac
        self.name = name

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.f(t, x)

    def jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.jac is not None:
            return self.jac(t, x)
        return fd_jacobian(self.f, t, x)

    def __repr__(self):  # pragma: no cover
        return f"FieldEval(name={self.name!r}, analytic_jac={self.jac is not None})"


def fd_jacobian(f: Callable, t: float, x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian, step ``max(1e-6, 1e-6*||x||)`` per sample."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = np.maximum(1e-6, 1e-6 * np.linalg.norm(x, axis=-1))
    cols = []
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        cols.append((f(t, xp) - f(t, xm)) / (2.0 * h[..., None]))
    return np.stack(cols, axis=-1)


def jacobian_defect(field: FieldEval, t: float, x: np.ndarray) -> float:
    """Relative disagreement between the supplied Jacobian and finite differences."""
    if field.jac is None:
        return 0.0
    ja = field.jac(t, x)
    jn = fd_jacobian(field.f, t, x)
    scale = 1.0 + np.max(np.abs(ja))
    return float(np.max(np.abs(ja - jn)) / scale)


def _err_norm(e: np.ndarray, scale: np.ndarray) -> float:
    # RMS over state components, worst case over the batch.
    q = (e / scale) ** 2
    rms = np.sqrt(np.mean(q, axis=-1))
    return float(np.max(rms))


def _initial_step(f, t0, y0, f0, direction, t_span, atol, rtol):
    scale = atol + rtol * np.abs(y0)
    d0 = _err_norm(y0, scale)
    d1 = _err_norm(f0, scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = _err_norm(f1 - f0, scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** _ORDER_EXP
    return min(100 * h0, h1, t_span)


@dataclass
class Trajectory:
    """Dense solution of an ODE on a strictly monotone grid.

    ``states`` has shape ``(K+1, ..., d)``; dense-output coefficients per step
    allow evaluation anywhere between grid points.  Immutable after
    construction; evaluation at a grid time returns the stored state exactly.
    """

    grid: np.ndarray
    states: np.ndarray
    abs_tol: float
    rel_tol: float
    _q: np.ndarray = field(repr=False, default=None)  # (K, ..., d, 4)
    _h: np.ndarray = field(repr=False, default=None)  # (K,)

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def t1(self) -> float:
        return float(self.grid[-1])

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def x1(self) -> np.ndarray:
        return self.states[-1]

    def _locate(self, t: float) -> int:
        g = self.grid
        if len(g) == 1:
            if t != g[0]:
                raise ValueError(f"time {t} outside single-point trajectory")
            return -1
        increasing = g[-1] >= g[0]
        lo, hi = (g[0], g[-1]) if increasing else (g[-1], g[0])
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise ValueError(f"time {t} outside trajectory span [{lo}, {hi}]")
        if increasing:
            k = int(np.searchsorted(g, t, side="right") - 1)
        else:
            k = int(np.searchsorted(-g, -t, side="right") - 1)
        return min(max(k, 0), len(g) - 2)

    def sol(self, t: float) -> np.ndarray:
        """Evaluate the dense output at time ``t`` (exact at grid points)."""
        g = self.grid
        hit = np.nonzero(g == t)[0]
        if hit.size:
            return self.states[hit[0]].copy()
        k = self._locate(t)
        th = (t - g[k]) / self._h[k]
        p = np.array([th, th * th, th**3, th**4])
        return self.states[k] + self._h[k] * (self._q[k] @ p)

    def sample(self, ts: np.ndarray) -> np.ndarray:
        """Evaluate at an array of times; returns shape ``(len(ts), ..., d)``."""
        return np.stack([self.sol(float(t)) for t in np.asarray(ts).ravel()])

    def component_view(self, sl: slice) -> "Trajectory":
        """A trajectory restricted to a slice of state components (shares data)."""
        return Trajectory(
            grid=self.grid,
            states=self.states[..., sl],
            abs_tol=self.abs_tol,
            rel_tol=self.rel_tol,
            _q=self._q[..., sl, :] if self._q is not None else None,
            _h=self._h,
        )


@dataclass
class FundamentalPath:
    """Fundamental matrix of the variational equation along a trajectory.

    ``mats`` holds one ``n x n`` matrix per grid point of the owning
    trajectory; the matrix at the initial time is the identity.
    """

    grid: np.ndarray
    mats: np.ndarray  # (K+1, ..., n, n)
    _traj: Trajectory = field(repr=False, default=None)  # matrix components, flat

    @property
    def n(self) -> int:
        return self.mats.shape[-1]

    @property
    def end(self) -> np.ndarray:
        return self.mats[-1]

    def at(self, t: float) -> np.ndarray:
        flat = self._traj.sol(t)
        return flat.reshape(flat.shape[:-1] + (self.n, self.n))


def _validate_tols(abs_tol: float, rel_tol: float) -> None:
    for name, v in (("abs_tol", abs_tol), ("rel_tol", rel_tol)):
        if not (TOL_MIN <= v <= TOL_MAX):
            raise ValueError(f"{name}={v} outside allowed range [{TOL_MIN}, {TOL_MAX}]")


def _check_finite(y: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(y)):
        raise NonFiniteState(f"non-finite values in {what}")


def _rk_core(f: Callable, t0: float, t1: float, y0: np.ndarray, abs_tol: float, rel_tol: float):
    """Driver loop; returns (grid list, state list, stage-stack list, h list)."""
    y = np.asarray(y0, dtype=float)
    _check_finite(y, "initial state")
    if t1 == t0:
        return [t0], [y.copy()], [], []

    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    k1 = np.asarray(f(t0, y), dtype=float)
    _check_finite(k1, f"field at t={t0}")

    h_abs = _initial_step(f, t0, y, k1, direction, span, abs_tol, rel_tol)
    h_abs = min(max(h_abs, 1e-13), span)

    (a21,) = _A[1]
    a31, a32 = _A[2]
    a41, a42, a43 = _A[3]
    a51, a52, a53, a54 = _A[4]
    a61, a62, a63, a64, a65 = _A[5]
    # the 7th-stage A row doubles as the 5th-order weights (FSAL pair)
    a71, _, a73, a74, a75, a76 = _A[6]
    e1, _, e3, e4, e5, e6, e7 = _E
    c2, c3, c4, c5 = _C[1], _C[2], _C[3], _C[4]

    ts = [t0]
    ys = [y.copy()]
    ks = []  # per accepted step: tuple of the 7 stage arrays (never mutated)
    hs = []
    t = t0
    err_prev = 1e-4
    nsteps = 0

    with np.errstate(over="ignore", invalid="ignore"):
        while (t1 - t) * direction > 0:
            nsteps += 1
            if nsteps > _MAX_STEPS:
                raise IntegrationError(f"step budget exhausted after {_MAX_STEPS} steps")
            h_abs = min(h_abs, abs(t1 - t))
            h = h_abs * direction

            k2 = f(t + c2 * h, y + h * (a21 * k1))
            k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2))
            k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3))
            k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4))
            k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5))
            y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6)
            k7 = f(t + h, y_new)
            err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7)

            finite = np.all(np.isfinite(y_new)) and np.all(np.isfinite(err_vec))
            if finite:
                scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
                err = _err_norm(err_vec, scale)
            else:
                err = np.inf

            if np.isfinite(err) and err <= 1.0:
                ks.append((k1, k2, k3, k4, k5, k6, k7))
                hs.append(h)
                t_new = t1 if abs(t + h - t1) <= 1e-14 * max(1.0, abs(t1)) else t + h
                ts.append(t_new)
                ys.append(y_new)
                err_c = max(err, 1e-10)
                factor = _SAFETY * err_c**-_PI_ALPHA * err_prev**_PI_BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                err_prev = err_c
                t = t_new
                y = y_new
                k1 = k7  # FSAL
                h_abs *= factor
            else:
                if np.isfinite(err):
                    factor = _SAFETY * err**-_ORDER_EXP
                    factor = min(1.0, max(_MIN_FACTOR, factor))
                else:
                    factor = _MIN_FACTOR
                h_abs *= factor
                if h_abs < 1e-14 * max(1.0, abs(t)):
                    raise StepSizeUnderflow(
                        f"step size underflow at t={t} (stiffness or blow-up)"
                    )

    return ts, ys, ks, hs


def integrate(
    field: FieldEval,
    t0: float,
    t1: float,
    x0: np.ndarray,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> Trajectory:
    """Integrate ``dx/dt = field(t, x)`` from ``t0`` to ``t1`` (either order).

    Returns a :class:`Trajectory` with dense output valid on every step; the
    local error per step is held below ``abs_tol + rel_tol*||x||`` by the
    embedded 5(4) estimate.

    Raises
    ------
    StepSizeUnderflow
        If adaptive control collapses the step (stiff or blowing-up field).
    NonFiniteState
        If the state or field turns NaN/Inf.
    """
    _validate_tols(abs_tol, rel_tol)
    ts, ys, ks, hs = _rk_core(field, float(t0), float(t1), x0, abs_tol, rel_tol)
    shape = np.shape(ys[0])
    if ks:
        karr = np.empty((len(ks), 7) + shape)
        for i, stages in enumerate(ks):
            for j in range(7):
                karr[i, j] = stages[j]
        # dense coefficients for all steps in one pass: Q[k] = K[k]^T P
        q = np.tensordot(karr, _P, axes=([1], [0]))
    else:
        q = np.empty((0,) + shape + (4,))
    return Trajectory(
        grid=np.array(ts),
        states=np.stack(ys),
        abs_tol=abs_tol,
        rel_tol=rel_tol,
        _q=q,
        _h=np.array(hs),
    )


def variational_rhs(field: FieldEval, n: int) -> Callable:
    """RHS of the state + fundamental-matrix system, state shape ``(..., n + n*n)``."""

    def rhs(t, u):
        x = u[..., :n]
        Y = u[..., n:].reshape(u.shape[:-1] + (n, n))
        du = np.empty_like(u)
        du[..., :n] = field(t, x)
        du[..., n:] = (field.jacobian(t, x) @ Y).reshape(u.shape[:-1] + (n * n,))
        return du

    return rhs


def integrate_with_variational(
    field: FieldEval,
    t0: float,
    t1: float,
    x0: np.ndarray,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> tuple[Trajectory, FundamentalPath]:
    """Integrate the state together with ``dY/dt = J(t,x(t)) Y``, ``Y(t0) = I``.

    The augmented ``n + n^2`` system shares one step controller, so the
    fundamental matrix is resolved at the same tolerance as the state.
    """
    _validate_tols(abs_tol, rel_tol)
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[-1]
    eye = np.broadcast_to(np.eye(n), x0.shape[:-1] + (n, n))
    u0 = np.concatenate([x0, eye.reshape(x0.shape[:-1] + (n * n,))], axis=-1)
    raw = integrate(FieldEval(variational_rhs(field, n)), t0, t1, u0, abs_tol, rel_tol)
    traj = raw.component_view(slice(0, n))
    mat_traj = raw.component_view(slice(n, n + n * n))
    mats = mat_traj.states.reshape(mat_traj.states.shape[:-1] + (n, n))
    return traj, FundamentalPath(grid=raw.grid, mats=mats, _traj=mat_traj)
