"""Exception types shared across the package."""

from __future__ import annotations


class PeriodCertError(RuntimeError):
    """Base class for all package-specific failures."""


class IntegrationError(PeriodCertError):
    """Base class for ODE integration failures."""


class StepSizeUnderflow(IntegrationError):
    """Adaptive step size collapsed below the resolvable floor (stiffness or blow-up)."""


class NonFiniteState(IntegrationError):
    """NaN or Inf encountered in the state or the vector field."""


class IdentityDefect(PeriodCertError):
    """Forward/backward fundamental matrices fail the inverse identity beyond tolerance."""


class QuadratureFailure(PeriodCertError):
    """Adaptive quadrature did not reach the requested tolerance."""


class ZeroOnBoundary(PeriodCertError):
    """Map vanishes (below margin floor) on a boundary sample; degree undefined."""


class RefinementExhausted(PeriodCertError):
    """Winding refinement hit the maximum depth with unresolved angle steps."""


class ConditionsFailed(PeriodCertError):
    """Boundary conditions of a theorem do not hold at the requested tolerances.

    Carries the offending certificate draft (with its condition reports) in
    ``self.certificate``.
    """

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class SpectrumMismatch(PeriodCertError):
    """Linear part is not of the required purely-imaginary-pair form."""


class NewtonDiverged(PeriodCertError):
    """Shooting Newton iteration failed to converge."""


class SingularJacobian(PeriodCertError):
    """Return-map Jacobian is singular (a monodromy eigenvalue sits at 1)."""


class BaseCaseInvalid(PeriodCertError):
    """Frequency-pulling scan requires a valid certificate at zero detuning."""


class ExpressionError(PeriodCertError):
    """Malformed field expression."""


class ConfigError(PeriodCertError):
    """Malformed scenario configuration."""
