"""Built-in benchmark systems.

The forced van der Pol oscillator

    x'' - eps (1 - x^2) x' + x + eps sqrt(eps) sin(t / (1 + eps sqrt(eps) mu)) = 0

is carried in first-order form with the engine parameter ``e = sqrt(eps)``, so
that ``e^2 = eps`` multiplies the self-excitation and ``e^3 = eps^(3/2)`` the
sinusoidal forcing.  The unperturbed part is the unit rotation
``x1' = x2, x2' = -x1`` with period ``2 pi``.
"""

from __future__ import annotations

import numpy as np

from .flow import ONE_TERM, TWO_TERM, ParametricField, PerturbedSystem, zero_field
from .ode import FieldEval

__all__ = [
    "rotation_field",
    "linear_field",
    "cubic_field",
    "vdp_phi1_field",
    "vdp_forcing",
    "make_vdp_two_term",
    "make_vdp_one_term",
    "make_rotation_system",
    "engine_epsilon",
]

TWO_PI = 2.0 * np.pi


def rotation_field() -> FieldEval:
    """Unit rotation: x1' = x2, x2' = -x1."""

    def f(t, x):
        out = np.empty_like(x)
        out[..., 0] = x[..., 1]
        out[..., 1] = -x[..., 0]
        return out

    def jac(t, x):
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -1.0
        return J

    return FieldEval(f, jac, name="rotation")


def linear_field(A: np.ndarray) -> FieldEval:
    A = np.asarray(A, dtype=float)

    def f(t, x):
        return (A @ x[..., None])[..., 0]

    def jac(t, x):
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    return FieldEval(f, jac, name="linear")


def cubic_field() -> FieldEval:
    """x1' = x2, x2' = -x1 + x1^3 (smooth nonlinear test field)."""

    def f(t, x):
        out = np.empty_like(x)
        x1 = x[..., 0]
        out[..., 0] = x[..., 1]
        out[..., 1] = -x1 + x1 * x1 * x1
        return out

    def jac(t, x):
        J = np.zeros(x.shape[:-1] + (2, 2))
        x1 = x[..., 0]
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -1.0 + 3.0 * x1 * x1
        return J

    return FieldEval(f, jac, name="cubic")


def vdp_phi1_field() -> FieldEval:
    """Self-excitation term (0, (1 - x1^2) x2)."""

    def f(t, x):
        out = np.zeros_like(x)
        x1 = x[..., 0]
        out[..., 1] = (1.0 - x1 * x1) * x[..., 1]
        return out

    def jac(t, x):
        J = np.zeros(x.shape[:-1] + (2, 2))
        x1 = x[..., 0]
        J[..., 1, 0] = -2.0 * x1 * x[..., 1]
        J[..., 1, 1] = 1.0 - x1 * x1
        return J

    return FieldEval(f, jac, name="vdp-phi1")


def vdp_forcing() -> ParametricField:
    """Sinusoidal forcing (0, -sin t); independent of the parameter."""

    def f(t, x, eps):
        out = np.zeros_like(x)
        out[..., 1] = -np.sin(t)
        return out

    def jac(t, x, eps):
        return np.zeros(x.shape[:-1] + (2, 2))

    return ParametricField(f, jac, name="vdp-forcing")


# One shared rotation field so every van der Pol variant hits the same flow cache.
_ROTATION = rotation_field()


def make_vdp_two_term() -> PerturbedSystem:
    """Forced van der Pol in the two-term normal form (engine eps = sqrt(physical))."""
    return PerturbedSystem(
        n=2,
        psi=_ROTATION,
        phi1=vdp_phi1_field(),
        phi2=vdp_forcing(),
        T=TWO_PI,
        profile=TWO_TERM,
        name="vdp",
    )


def make_vdp_one_term() -> PerturbedSystem:
    """Unforced van der Pol as a one-term perturbation of the rotation."""
    phi1 = vdp_phi1_field()

    def f(t, x, eps):
        return phi1(t, x)

    def jac(t, x, eps):
        return phi1.jac(t, x)

    return PerturbedSystem(
        n=2,
        psi=_ROTATION,
        phi2=ParametricField(f, jac, name="vdp-self-excitation"),
        T=TWO_PI,
        profile=ONE_TERM,
        name="vdp-one-term",
    )


def make_rotation_system() -> PerturbedSystem:
    """Pure rotation with zero forcing terms (degenerate reference system)."""
    zero = zero_field(2)

    def f(t, x, eps):
        return np.zeros_like(x)

    def jac(t, x, eps):
        return np.zeros(x.shape[:-1] + (2, 2))

    return PerturbedSystem(
        n=2,
        psi=_ROTATION,
        phi1=zero,
        phi2=ParametricField(f, jac, name="zero"),
        T=TWO_PI,
        profile=TWO_TERM,
        name="rotation",
    )


def engine_epsilon(eps_physical: float) -> float:
    """Engine parameter for the van der Pol scenarios: e = sqrt(eps_physical)."""
    if eps_physical <= 0:
        raise ValueError("physical epsilon must be positive")
    return float(np.sqrt(eps_physical))
