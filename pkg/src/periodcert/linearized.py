"""Linearized responses of the perturbed system and their period gaps.

``eta_i(t, s, xi)`` solves the variational equation along the unperturbed
trajectory through ``xi``, forced by the i-th perturbation term and vanishing
at the anchor time ``s``:

    dy/dt = J_psi(t, omega(t,0,xi)) y + phi_i(t, omega(t,0,xi)),   y(s) = 0,

with ``phi_2`` evaluated at parameter 0.  Two independent routes are provided:

* :func:`eta_direct` integrates the inhomogeneous linear ODE itself;
* :func:`eta_lemma1` evaluates ``Y(t) * integral_s^t Z(tau) phi_i(tau, x(tau)) dtau``
  by adaptive quadrature over the dense flow bundle (no re-integration per
  node), where ``Y`` and ``Z = Y^{-1}`` come from the variational equations.

The period gap ``eta_i(T,s,xi) - eta_i(0,s,xi)`` that the boundary conditions
interrogate is computed in the algebraic form

    gap(s) = integral_0^T Phi  -  (I - Y(T)) integral_s^T Phi,

which needs a single bundle instead of two full eta evaluations.  Batched
sweep variants evaluate gaps and end maps over many boundary points at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec

from .errors import QuadratureFailure
from .flow import FlowBundle, PerturbedSystem, flow_bundle, flow_point
from .ode import FieldEval, integrate

__all__ = [
    "EtaQuery",
    "eta_direct",
    "eta_lemma1",
    "eta_period_gap",
    "eta_gap_sweep",
    "eta_end_sweep",
]

QUAD_TOL = 1e-10
_QUAD_ERR_LIMIT = 1e-6


@dataclass(frozen=True)
class EtaQuery:
    """One linearized-response evaluation: which term, anchor s, time t, base point."""

    which: int
    s: float
    t: float
    xi: tuple | np.ndarray

    def __post_init__(self):
        if self.which not in (1, 2):
            raise ValueError("which must be 1 (first forcing) or 2 (second forcing)")

    def check_times(self, T: float) -> None:
        slack = 1e-9 * (1.0 + T)
        for name, v in (("s", self.s), ("t", self.t)):
            if not (-slack <= v <= T + slack):
                raise ValueError(f"{name}={v} outside [0, T={T}]")


def eta_direct(
    system: PerturbedSystem,
    q: EtaQuery,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """Integrate the forced variational equation from ``y(s)=0`` to time ``t``.

    The base trajectory is co-integrated with the response, so no dense
    interpolation enters this route; it serves as the independent check of
    :func:`eta_lemma1`.
    """
    q.check_times(system.T)
    xi = np.asarray(q.xi, dtype=float)
    n = system.n
    if q.t == q.s:
        return np.zeros_like(xi)

    phi = system.forcing(q.which, eps=0.0)
    xs = flow_point(system, q.s, 0.0, xi, abs_tol, rel_tol)
    psi = system.psi

    def rhs(t, u):
        x = u[..., :n]
        y = u[..., n:]
        du = np.empty_like(u)
        du[..., :n] = psi(t, x)
        J = psi.jacobian(t, x)
        du[..., n:] = (J @ y[..., None])[..., 0] + phi(t, x)
        return du

    u0 = np.concatenate([xs, np.zeros_like(xs)], axis=-1)
    traj = integrate(FieldEval(rhs), q.s, q.t, u0, abs_tol, rel_tol)
    return traj.x1[..., n:]


def _phi_segment_integral(
    bundle: FlowBundle,
    phi: FieldEval,
    a: float,
    b: float,
    tol: float = QUAD_TOL,
) -> np.ndarray:
    """``integral_a^b Z(tau) phi(tau, x(tau)) dtau`` over the bundle (batched)."""
    if a == b:
        x = bundle.x(a)
        return np.zeros_like(x)
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    shape = bundle.x(a).shape

    def integrand(tau):
        x, _, Z = bundle.at(tau)
        v = phi(tau, x)
        return (Z @ v[..., None])[..., 0].ravel()

    res, err = quad_vec(integrand, a, b, epsabs=tol, epsrel=tol)
    if not np.isfinite(err) or err > _QUAD_ERR_LIMIT:
        raise QuadratureFailure(f"quadrature error estimate {err:.3e} over [{a}, {b}]")
    return sign * res.reshape(shape)


def eta_lemma1(
    system: PerturbedSystem,
    q: EtaQuery,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """Evaluate ``eta_i`` through the fundamental-matrix representation."""
    q.check_times(system.T)
    xi = np.asarray(q.xi, dtype=float)
    if q.t == q.s:
        return np.zeros_like(xi)
    span = max(system.T, q.s, q.t)
    bundle = flow_bundle(system, xi, t_end=span, abs_tol=abs_tol, rel_tol=rel_tol)
    phi = system.forcing(q.which, eps=0.0)
    integral = _phi_segment_integral(bundle, phi, q.s, q.t)
    return (bundle.Y(q.t) @ integral[..., None])[..., 0]


def _gap_from_integrals(Y_end, I_full, I_tail):
    # gap(s) = I_full - (I - Y(T)) I_tail, with I_tail = integral_s^T Phi
    eye = np.eye(Y_end.shape[-1])
    corr = ((eye - Y_end) @ I_tail[..., None])[..., 0]
    return I_full - corr


def eta_period_gap(
    system: PerturbedSystem,
    which: int,
    s: float,
    xi: np.ndarray,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """``eta_which(T, s, xi) - eta_which(0, s, xi)`` in one bundle pass."""
    if not (-1e-12 <= s <= system.T + 1e-9 * (1 + system.T)):
        raise ValueError(f"anchor s={s} outside [0, T]")
    xi = np.asarray(xi, dtype=float)
    bundle = flow_bundle(system, xi, abs_tol=abs_tol, rel_tol=rel_tol)
    phi = system.forcing(which, eps=0.0)
    T = system.T
    I_full = _phi_segment_integral(bundle, phi, 0.0, T)
    I_tail = I_full - _phi_segment_integral(bundle, phi, 0.0, s)
    return _gap_from_integrals(bundle.Y(T), I_full, I_tail)


# --- batched sweeps over boundary samples --------------------------------------


def _cumulative_integrals(bundle: FlowBundle, phi: FieldEval, nodes: np.ndarray):
    """Prefix integrals ``I(0 -> node)`` of ``Z phi`` at each node (sorted, from 0)."""
    out = {}
    acc = np.zeros_like(bundle.x(0.0))
    prev = 0.0
    out[0.0] = acc
    for node in nodes:
        node = float(node)
        if node == prev:
            out[node] = acc
            continue
        acc = acc + _phi_segment_integral(bundle, phi, prev, node)
        out[node] = acc
        prev = node
    return out


def eta_gap_sweep(
    system: PerturbedSystem,
    which: int,
    xis: np.ndarray,
    s_values: np.ndarray,
    eps: float = 0.0,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """Period gaps for a batch of base points and a grid of anchors.

    Returns shape ``(B, S, n)`` for ``xis`` of shape ``(B, n)``.  ``eps``
    selects the parameter at which the second forcing is evaluated (0 in the
    boundary conditions; finite values probe the margins at finite parameter).
    """
    xis = np.asarray(xis, dtype=float)
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    T = system.T
    bundle = flow_bundle(system, xis, abs_tol=abs_tol, rel_tol=rel_tol)
    phi = system.forcing(which, eps=eps)
    nodes = np.unique(np.concatenate([s_values, [0.0, T]]))
    cum = _cumulative_integrals(bundle, phi, nodes)
    I_full = cum[float(T)]
    Y_end = bundle.Y(T)
    gaps = []
    for s in s_values:
        I_tail = I_full - cum[float(s)]
        gaps.append(_gap_from_integrals(Y_end, I_full, I_tail))
    return np.stack(gaps, axis=-2)  # (B, S, n)


def eta_end_sweep(
    system: PerturbedSystem,
    which: int,
    xis: np.ndarray,
    eps: float = 0.0,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> np.ndarray:
    """``eta_which(T, 0, xi)`` for a batch of points (the degree map)."""
    xis = np.asarray(xis, dtype=float)
    bundle = flow_bundle(system, xis, abs_tol=abs_tol, rel_tol=rel_tol)
    phi = system.forcing(which, eps=eps)
    I_full = _phi_segment_integral(bundle, phi, 0.0, system.T)
    return (bundle.Y(system.T) @ I_full[..., None])[..., 0]
