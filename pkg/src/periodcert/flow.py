"""The unperturbed flow, its fundamental matrices, and the perturbed-system type.

``PerturbedSystem`` describes ``dx/dt = psi(t,x) + eps^2 phi1(t,x) +
eps^3 phi2(t,x,eps)`` (two-term profile) or ``dx/dt = psi(t,x) +
eps phi(t,x,eps)`` (one-term profile, with the single forcing stored in the
``phi2`` slot).  All fields are T-periodic in time.

The flow ``omega(t, t0, xi)`` of ``dx/dt = psi(t,x)`` and the matrix
``Y(t) = d omega/d xi (t, 0, xi)`` are produced here, together with
``Z(t) = Y(t)^{-1}``, which solves ``dZ/dt = -Z J`` and equals the derivative
of the backward flow evaluated along the trajectory.  The product ``Z Y`` is
monitored against the identity; a defect above tolerance signals a broken
field Jacobian or tolerance.

Repeated sweeps over boundary samples are served from an insert-once cache of
dense "bundles" (state + Y + Z), keyed by rounded initial data and shared by
every system built on the same ``psi`` object.
"""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IdentityDefect
from .ode import FieldEval, Trajectory, integrate

__all__ = [
    "TWO_TERM",
    "ONE_TERM",
    "ParametricField",
    "PerturbedSystem",
    "FlowBundle",
    "flow_point",
    "fundamental_pair",
    "flow_bundle",
]

TWO_TERM = "two_term"
ONE_TERM = "one_term"

IDENTITY_DEFECT_LIMIT = 1e-6

_SPAN_GUARD = 10.0  # |t - t0| <= 10 T


class ParametricField:
    """A forcing term ``phi(t, x, eps)`` with optional Jacobian in ``x``."""

    def __init__(self, f: Callable, jac: Callable | None = None, name: str = ""):
        self.f = f
        self.jac = jac
        self.name = name

    def __call__(self, t: float, x: np.ndarray, eps: float) -> np.ndarray:
        return self.f(t, x, eps)

    def frozen(self, eps: float) -> FieldEval:
        """The field at a fixed parameter value, as a plain ``FieldEval``."""
        jac = None
        if self.jac is not None:
            jac = lambda t, x: self.jac(t, x, eps)  # noqa: E731
        return FieldEval(lambda t, x: self.f(t, x, eps), jac, name=f"{self.name}@eps={eps}")


def zero_field(n: int) -> FieldEval:
    def f(t, x):
        return np.zeros_like(x)

    def jac(t, x):
        return np.zeros(x.shape[:-1] + (n, n))

    return FieldEval(f, jac, name="zero")


@dataclass(eq=False)
class PerturbedSystem:
    """A T-periodic system with one or two small-parameter forcing terms."""

    n: int
    psi: FieldEval
    phi2: ParametricField
    T: float
    phi1: FieldEval | None = None
    profile: str = TWO_TERM
    name: str = ""

    def __post_init__(self):
        if self.profile not in (TWO_TERM, ONE_TERM):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.T <= 0:
            raise ValueError("period T must be positive")
        if self.profile == ONE_TERM and self.phi1 is not None:
            raise ValueError("one-term profile stores its single forcing in phi2")
        if self.profile == TWO_TERM and self.phi1 is None:
            raise ValueError("two-term profile requires phi1 (use zero_field for none)")

    def forcing(self, which: int, eps: float = 0.0) -> FieldEval:
        """The forcing field of the linearized problem: phi1, or phi2 at fixed eps."""
        if which == 1:
            return self.phi1 if self.phi1 is not None else zero_field(self.n)
        if which == 2:
            return self.phi2.frozen(eps)
        raise ValueError("which must be 1 or 2")

    def full_field(self, eps: float) -> FieldEval:
        """The complete perturbed right-hand side at parameter ``eps``."""
        if self.profile == TWO_TERM:
            w1, w2 = eps * eps, eps**3
        else:
            w1, w2 = 0.0, eps
        psi, phi1, phi2 = self.psi, self.phi1, self.phi2

        def f(t, x):
            out = psi(t, x)
            if w1 != 0.0 and phi1 is not None:
                out = out + w1 * phi1(t, x)
            if w2 != 0.0:
                out = out + w2 * phi2(t, x, eps)
            return out

        jac = None
        if psi.jac is not None:
            def jac(t, x):  # noqa: F811
                J = psi.jac(t, x)
                if w1 != 0.0 and phi1 is not None:
                    J = J + w1 * phi1.jacobian(t, x)
                if w2 != 0.0:
                    Jp = self.phi2.jac
                    J2 = Jp(t, x, eps) if Jp is not None else self.phi2.frozen(eps).jacobian(t, x)
                    J = J + w2 * J2
                return J

        return FieldEval(f, jac, name=f"{self.name or 'system'}@eps={eps}")

    def periodicity_defect(self, samples: int = 16, box: float = 3.0) -> float:
        """Max relative defect ``||g(t+T,x) - g(t,x)||`` over a fixed probe set."""
        rng = np.random.default_rng(1234)
        ts = rng.uniform(0.0, self.T, samples)
        xs = rng.uniform(-box, box, (samples, self.n))
        worst = 0.0
        fields = [lambda t, x: self.psi(t, x), lambda t, x: self.phi2(t, x, 0.0)]
        if self.phi1 is not None:
            fields.append(lambda t, x: self.phi1(t, x))
        for g in fields:
            for t, x in zip(ts, xs):
                a = g(t, x)
                b = g(t + self.T, x)
                rel = np.linalg.norm(b - a) / (1.0 + np.linalg.norm(a))
                worst = max(worst, float(rel))
        return worst


# --- cached flow bundles -----------------------------------------------------

_BUNDLE_CACHES: "weakref.WeakKeyDictionary[FieldEval, dict]" = weakref.WeakKeyDictionary()
_CACHE_LOCK = threading.Lock()


def _cache_for(psi: FieldEval) -> dict:
    with _CACHE_LOCK:
        cache = _BUNDLE_CACHES.get(psi)
        if cache is None:
            cache = {}
            _BUNDLE_CACHES[psi] = cache
        return cache


def _round_key(x: np.ndarray) -> bytes:
    return np.round(np.asarray(x, dtype=float), 12).tobytes()


class FlowBundle:
    """Dense flow data for a batch of initial points: x(t), Y(t), Z(t) on [0, t_end].

    ``Y(t)`` is the fundamental matrix of the variational equation along each
    trajectory (identity at 0); ``Z(t)`` solves ``dZ/dt = -Z J`` and is its
    inverse.  Immutable after construction.
    """

    def __init__(self, traj: Trajectory, n: int, batched: bool):
        self.traj = traj
        self.n = n
        self.batched = batched

    def _split(self, u: np.ndarray):
        n = self.n
        x = u[..., :n]
        Y = u[..., n : n + n * n].reshape(u.shape[:-1] + (n, n))
        Z = u[..., n + n * n :].reshape(u.shape[:-1] + (n, n))
        return x, Y, Z

    def at(self, t: float):
        return self._split(self.traj.sol(t))

    def x(self, t: float) -> np.ndarray:
        return self.traj.sol(t)[..., : self.n]

    def Y(self, t: float) -> np.ndarray:
        return self.at(t)[1]

    def Z(self, t: float) -> np.ndarray:
        return self.at(t)[2]

    @property
    def t_end(self) -> float:
        return self.traj.t1

    @property
    def ends(self):
        return self._split(self.traj.x1)


def _bundle_rhs(psi: FieldEval, n: int) -> Callable:
    nn = n * n

    def rhs(t, u):
        x = u[..., :n]
        Y = u[..., n : n + nn].reshape(u.shape[:-1] + (n, n))
        Z = u[..., n + nn :].reshape(u.shape[:-1] + (n, n))
        J = psi.jacobian(t, x)
        du = np.empty_like(u)
        du[..., :n] = psi(t, x)
        du[..., n : n + nn] = (J @ Y).reshape(u.shape[:-1] + (nn,))
        du[..., n + nn :] = (-(Z @ J)).reshape(u.shape[:-1] + (nn,))
        return du

    return rhs


def flow_bundle(
    system: PerturbedSystem,
    xis: np.ndarray,
    t_end: float | None = None,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> FlowBundle:
    """Integrate (x, Y, Z) from 0 to ``t_end`` (default one period) for a batch.

    Results are cached per ``psi`` object, keyed by the rounded initial points
    and span; concurrent callers insert once and share the stored bundle.
    """
    xis = np.asarray(xis, dtype=float)
    batched = xis.ndim == 2
    if t_end is None:
        t_end = system.T
    n = system.n
    cache = _cache_for(system.psi)
    key = (round(float(t_end), 12), abs_tol, rel_tol, _round_key(xis))
    hit = cache.get(key)
    if hit is not None:
        return hit

    eye = np.broadcast_to(np.eye(n), xis.shape[:-1] + (n, n))
    flat_eye = eye.reshape(xis.shape[:-1] + (n * n,))
    u0 = np.concatenate([xis, flat_eye, flat_eye], axis=-1)
    traj = integrate(FieldEval(_bundle_rhs(system.psi, n)), 0.0, t_end, u0, abs_tol, rel_tol)
    bundle = FlowBundle(traj, n, batched)

    _, Y_end, Z_end = bundle.ends
    defect = float(np.max(np.abs(Z_end @ Y_end - np.eye(n))))
    if defect > IDENTITY_DEFECT_LIMIT:
        raise IdentityDefect(
            f"inverse-identity defect {defect:.3e} exceeds {IDENTITY_DEFECT_LIMIT:.0e}"
        )

    with _CACHE_LOCK:
        stored = cache.get(key)
        if stored is None:
            cache[key] = bundle
            stored = bundle
    return stored


# --- public flow operations ---------------------------------------------------


def _check_span(system: PerturbedSystem, t: float, t0: float) -> None:
    if abs(t - t0) > _SPAN_GUARD * system.T + 1e-9:
        raise ValueError(
            f"|t - t0| = {abs(t - t0):.3g} exceeds the {_SPAN_GUARD:.0f}-period guard"
        )


def flow_point(
    system: PerturbedSystem,
    t: float,
    t0: float,
    xi: np.ndarray,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """The unperturbed flow ``omega(t, t0, xi)`` at integrator tolerance."""
    _check_span(system, t, t0)
    xi = np.asarray(xi, dtype=float)
    if t == t0:
        return xi.copy()
    if t0 == 0.0 and 0.0 <= t <= system.T and abs_tol == rel_tol == 1e-10:
        return flow_bundle(system, xi).x(t)
    return integrate(system.psi, t0, t, xi, abs_tol, rel_tol).x1


def fundamental_pair(
    system: PerturbedSystem,
    t: float,
    xi: np.ndarray,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward and inverse fundamental matrices at time ``t`` along ``xi``.

    ``Y`` is the derivative of the time-``t`` flow map at ``xi``; ``Yinv`` is
    obtained by a second variational integration backward along the endpoint
    rather than by matrix inversion, and the product ``Yinv Y`` is checked
    against the identity.
    """
    from .ode import integrate_with_variational

    _check_span(system, t, 0.0)
    xi = np.asarray(xi, dtype=float)
    n = system.n
    traj, path = integrate_with_variational(system.psi, 0.0, t, xi, abs_tol, rel_tol)
    Y = path.end
    if t == 0.0:
        return Y.copy(), Y.copy()
    _, path_back = integrate_with_variational(system.psi, t, 0.0, traj.x1, abs_tol, rel_tol)
    Yinv = path_back.end
    defect = float(np.max(np.abs(Yinv @ Y - np.eye(n))))
    if defect > IDENTITY_DEFECT_LIMIT:
        raise IdentityDefect(
            f"inverse-identity defect {defect:.3e} exceeds {IDENTITY_DEFECT_LIMIT:.0e}"
        )
    return Y, Yinv
