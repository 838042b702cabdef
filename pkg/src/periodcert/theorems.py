"""Boundary-condition checks and degree certificates.

A certificate records, for one of the four existence results, the numeric
margins of its boundary hypotheses over sampled boundaries together with the
predicted Brouwer degree (or degree difference).  Equality hypotheses are
tested as ``<= tol_eq`` and non-vanishing hypotheses as ``>= floor_neq``; raw
margins are always reported so the caller owns the interpretation.

The certified statements, for the two-term system:

* full problem over a region U (conditions: boundary points are fixed by the
  period map; the first-order gap vanishes; the second-order gap does not):
  predicted degree = degree of the second linearized end map over U;
* one-term variant: single non-vanishing gap; degree of its end map;
* planar autonomous linear part with purely imaginary spectrum: degree
  difference between the first end map over the scaled region and the second
  end map over the base region;
* frequency pulling: the same certificate for the time-rescaled system over a
  grid of detuning values, reporting the empirical symmetric detuning range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .degree import DegreeResult, PlanarRegion, region_degree
from .errors import BaseCaseInvalid, ConditionsFailed, PeriodCertError, SpectrumMismatch
from .flow import ONE_TERM, TWO_TERM, ParametricField, PerturbedSystem, flow_bundle
from .linearized import eta_end_sweep, eta_gap_sweep

__all__ = [
    "ConditionReport",
    "Certificate",
    "ScanRow",
    "ScanResult",
    "check_conditions",
    "theorem1_certificate",
    "theorem2_certificate",
    "theorem3_certificate",
    "theorem4_scan",
    "frequency_pulled_system",
    "extract_linear_part",
]

DEFAULT_TOL_EQ = 1e-7
DEFAULT_FLOOR_NEQ = 1e-4
DEFAULT_BOUNDARY_SAMPLES = 256
DEFAULT_S_GRID = 16
_MIN_BOUNDARY = 64
_MIN_S_GRID = 8
_PERIOD_MAP_IDENTITY_TOL = 1e-9  # Y(T) ~ I detection for s-grid collapse


@dataclass
class ConditionReport:
    """Numeric margins of the boundary hypotheses over one sampled boundary.

    ``a1_max_defect`` is the worst period-map defect; ``a2_max_gap`` the worst
    equality-gap norm (None when the report carries no equality condition);
    ``a3_min_gap`` the smallest non-vanishing-gap norm.  ``neq_which`` records
    which linearized response the non-vanishing condition interrogates.
    """

    a1_max_defect: float
    a2_max_gap: float | None
    a3_min_gap: float
    boundary_samples: int
    s_grid_size: int
    s_collapsed: bool
    tol_eq: float
    floor_neq: float
    eq_which: int | None = 1
    neq_which: int = 2
    per_sample: dict = field(default_factory=dict, repr=False)

    @property
    def pass_a1(self) -> bool:
        return self.a1_max_defect <= self.tol_eq

    @property
    def pass_a2(self) -> bool:
        return True if self.a2_max_gap is None else self.a2_max_gap <= self.tol_eq

    @property
    def pass_a3(self) -> bool:
        return self.a3_min_gap >= self.floor_neq

    @property
    def all_pass(self) -> bool:
        return self.pass_a1 and self.pass_a2 and self.pass_a3

    def to_dict(self) -> dict:
        return {
            "a1_max_defect": self.a1_max_defect,
            "a2_max_gap": self.a2_max_gap,
            "a3_min_gap": self.a3_min_gap,
            "boundary_samples": self.boundary_samples,
            "s_grid_size": self.s_grid_size,
            "s_collapsed": self.s_collapsed,
            "tol_eq": self.tol_eq,
            "floor_neq": self.floor_neq,
            "eq_which": self.eq_which,
            "neq_which": self.neq_which,
            "pass_a1": self.pass_a1,
            "pass_a2": self.pass_a2,
            "pass_a3": self.pass_a3,
            "all_pass": self.all_pass,
        }


@dataclass
class Certificate:
    """Condition reports plus the resulting degree prediction."""

    theorem: str
    regions: dict
    reports: dict
    degrees: dict
    predicted_degree: int | None
    valid: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
            "degrees": {
                k: {
                    "degree": d.degree,
                    "boundary_margin": d.boundary_margin,
                    "samples_used": d.samples_used,
                    "refinements": d.refinements,
                }
                for k, d in self.degrees.items()
            },
            "predicted_degree": self.predicted_degree,
            "valid": self.valid,
            "detail": self.detail,
        }


def check_conditions(
    system: PerturbedSystem,
    region: PlanarRegion,
    T: float | None = None,
    s_grid_size: int = DEFAULT_S_GRID,
    tol_eq: float = DEFAULT_TOL_EQ,
    floor_neq: float = DEFAULT_FLOOR_NEQ,
    boundary_samples: int = DEFAULT_BOUNDARY_SAMPLES,
    eq_which: int | None | str = "auto",
    neq_which: int | None = None,
    eps: float = 0.0,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> ConditionReport:
    """Evaluate the boundary hypotheses exhaustively over the product grid.

    Defaults follow the system profile: two-term systems check the fixed-point
    condition, the vanishing first gap, and the non-vanishing second gap;
    one-term systems skip the equality gap.  ``eq_which``/``neq_which``
    override which response each gap condition uses (the scaled-region
    non-vanishing check of the planar certificate uses ``neq_which=1``).
    """
    if boundary_samples < _MIN_BOUNDARY:
        raise ValueError(f"need at least {_MIN_BOUNDARY} boundary samples per curve")
    if s_grid_size < _MIN_S_GRID:
        raise ValueError(f"need an s-grid of at least {_MIN_S_GRID}")
    if T is None:
        T = system.T
    if neq_which is None:
        neq_which = 2
    if eq_which == "auto":
        eq_which = 1 if (system.profile == TWO_TERM and neq_which == 2) else None

    pts = region.boundary_points(boundary_samples)
    theta_one = np.arange(boundary_samples) / boundary_samples
    thetas = np.concatenate([theta_one for _ in region.curves])
    bundle = flow_bundle(system, pts, t_end=T, abs_tol=abs_tol, rel_tol=rel_tol)
    x_end, Y_end, _ = bundle.ends
    a1_defects = np.linalg.norm(x_end - pts, axis=-1)

    collapse = float(np.max(np.abs(Y_end - np.eye(system.n)))) <= _PERIOD_MAP_IDENTITY_TOL
    s_values = np.linspace(0.0, T, s_grid_size)

    a2_max = None
    a2_per = None
    if eq_which is not None:
        gaps_eq = eta_gap_sweep(system, eq_which, pts, s_values, abs_tol=abs_tol, rel_tol=rel_tol)
        a2_per = np.linalg.norm(gaps_eq, axis=-1).max(axis=-1)
        a2_max = float(a2_per.max())

    s_neq = np.array([0.0]) if collapse else s_values
    gaps_neq = eta_gap_sweep(system, neq_which, pts, s_neq, eps=eps, abs_tol=abs_tol, rel_tol=rel_tol)
    a3_per = np.linalg.norm(gaps_neq, axis=-1).min(axis=-1)
    a3_min = float(a3_per.min())

    return ConditionReport(
        a1_max_defect=float(a1_defects.max()),
        a2_max_gap=a2_max,
        a3_min_gap=a3_min,
        boundary_samples=len(pts),
        s_grid_size=s_grid_size,
        s_collapsed=collapse,
        tol_eq=tol_eq,
        floor_neq=floor_neq,
        eq_which=eq_which,
        neq_which=neq_which,
        per_sample={
            "theta": thetas,
            "points": pts,
            "a1_defect": a1_defects,
            "a2_max_gap": a2_per,
            "a3_min_gap": a3_per,
        },
    )


def _eta_map(system: PerturbedSystem, which: int, abs_tol: float, rel_tol: float):
    def fn(points: np.ndarray) -> np.ndarray:
        return eta_end_sweep(system, which, points, abs_tol=abs_tol, rel_tol=rel_tol)

    return fn


def _certify_single_region(
    system: PerturbedSystem,
    region: PlanarRegion,
    theorem: str,
    which_deg: int,
    T: float | None,
    **kw,
) -> Certificate:
    report = check_conditions(system, region, T=T, **kw)
    degrees: dict = {}
    predicted = None
    valid = report.all_pass
    detail = ""
    if valid:
        try:
            dr = region_degree(
                _eta_map(system, which_deg, kw.get("abs_tol", 1e-10), kw.get("rel_tol", 1e-10)),
                region,
            )
            degrees["eta_end_map"] = dr
            predicted = dr.degree
        except PeriodCertError as exc:
            valid = False
            detail = f"degree computation failed: {exc}"
    else:
        detail = "boundary conditions failed"
    return Certificate(
        theorem=theorem,
        regions={"U": region},
        reports={"U": report},
        degrees=degrees,
        predicted_degree=predicted,
        valid=valid,
        detail=detail,
    )


def theorem1_certificate(
    system: PerturbedSystem,
    region: PlanarRegion,
    T: float | None = None,
    **kw,
) -> Certificate:
    """Certificate for the two-term result over a single region.

    Raises :class:`ConditionsFailed` (carrying the draft certificate) when a
    hypothesis margin fails.
    """
    if system.profile != TWO_TERM:
        raise ValueError("theorem 1 applies to two-term systems")
    cert = _certify_single_region(system, region, "T1", which_deg=2, T=T, **kw)
    if not cert.valid:
        raise ConditionsFailed(cert.detail, certificate=cert)
    return cert


def theorem2_certificate(
    system: PerturbedSystem,
    region: PlanarRegion,
    T: float | None = None,
    **kw,
) -> Certificate:
    """Certificate for the one-term result over a single region."""
    if system.profile != ONE_TERM:
        raise ValueError("theorem 2 applies to one-term systems")
    cert = _certify_single_region(system, region, "T2", which_deg=2, T=T, **kw)
    if not cert.valid:
        raise ConditionsFailed(cert.detail, certificate=cert)
    return cert


def extract_linear_part(system: PerturbedSystem) -> tuple[np.ndarray, float]:
    """The matrix of an autonomous linear planar ``psi`` and its frequency.

    Raises :class:`SpectrumMismatch` unless ``psi(t, x) = A x`` with A having
    purely imaginary eigenvalues ``+- i lam``, ``lam > 0``.
    """
    if system.n != 2:
        raise SpectrumMismatch("planar certificates require n = 2")
    psi = system.psi
    A = np.column_stack([psi(0.0, np.eye(2)[j]) for j in range(2)])
    rng = np.random.default_rng(7)
    scale = 1.0 + float(np.max(np.abs(A)))
    for t in (0.0, 0.37 * system.T, 0.91 * system.T):
        xs = rng.uniform(-3.0, 3.0, (4, 2))
        defect = np.max(np.abs(psi(t, xs) - xs @ A.T))
        if defect > 1e-9 * scale * 3.0:
            raise SpectrumMismatch("psi is not an autonomous linear field")
    w = np.linalg.eigvals(A)
    if np.max(np.abs(w.real)) > 1e-10 * scale:
        raise SpectrumMismatch(f"eigenvalues {w} are not purely imaginary")
    lam = float(np.max(w.imag))
    if lam <= 0 or abs(w.imag[0] + w.imag[1]) > 1e-10 * scale:
        raise SpectrumMismatch(f"eigenvalues {w} are not a conjugate pair +-i*lam")
    return A, lam


def _theorem3_result(
    system: PerturbedSystem,
    U0: PlanarRegion,
    delta: float,
    tol_eq: float = DEFAULT_TOL_EQ,
    floor_neq: float = DEFAULT_FLOOR_NEQ,
    boundary_samples: int = DEFAULT_BOUNDARY_SAMPLES,
    s_grid_size: int = DEFAULT_S_GRID,
    eps: float = 0.0,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-10,
) -> Certificate:
    if system.profile != TWO_TERM:
        raise ValueError("the planar certificate applies to two-term systems")
    if not 0.0 < delta < 2.0:
        raise ValueError("delta must lie in (0, 2)")
    A, lam = extract_linear_part(system)
    T = 2.0 * np.pi / lam
    if abs(T - system.T) > 1e-9 * (1.0 + T):
        raise ValueError(
            f"system period {system.T} does not match the rotation period {T}"
        )
    U_delta = U0.scaled(1.0 + delta)

    common = dict(
        tol_eq=tol_eq,
        floor_neq=floor_neq,
        boundary_samples=boundary_samples,
        s_grid_size=s_grid_size,
        abs_tol=abs_tol,
        rel_tol=rel_tol,
    )
    inner = check_conditions(system, U0, T=T, eq_which=1, neq_which=2, eps=eps, **common)
    outer = check_conditions(system, U_delta, T=T, eq_which=None, neq_which=1, **common)

    reports = {"U0": inner, "U_delta": outer}
    degrees: dict = {}
    predicted = None
    valid = inner.all_pass and outer.all_pass
    detail = "" if valid else "boundary conditions failed"
    if valid:
        try:
            d1 = region_degree(_eta_map(system, 1, abs_tol, rel_tol), U_delta)
            d2 = region_degree(_eta_map(system, 2, abs_tol, rel_tol), U0)
            degrees = {"eta1_U_delta": d1, "eta2_U0": d2}
            predicted = d1.degree - d2.degree
        except PeriodCertError as exc:
            valid = False
            detail = f"degree computation failed: {exc}"
    return Certificate(
        theorem="T3",
        regions={"U0": U0, "U_delta": U_delta},
        reports=reports,
        degrees=degrees,
        predicted_degree=predicted,
        valid=valid,
        detail=detail,
    )


def theorem3_certificate(
    system: PerturbedSystem,
    U0: PlanarRegion,
    delta: float,
    **kw,
) -> Certificate:
    """Planar autonomous certificate: degree difference over nested regions."""
    cert = _theorem3_result(system, U0, delta, **kw)
    if not cert.valid:
        raise ConditionsFailed(cert.detail, certificate=cert)
    return cert


def frequency_pulled_system(
    system: PerturbedSystem,
    mu: float,
    A: np.ndarray | None = None,
) -> PerturbedSystem:
    """The time-rescaled system absorbing a detuned forcing period.

    The rescaled second forcing is ``phi2 + mu A x + e^2 mu phi1 +
    e^3 mu phi2`` so that periodic orbits of the rescaled system over the
    nominal period correspond to orbits of the detuned system.
    """
    if system.profile != TWO_TERM:
        raise ValueError("frequency pulling applies to two-term systems")
    if A is None:
        A, _ = extract_linear_part(system)
    A = np.asarray(A, dtype=float)
    phi1 = system.phi1
    phi2 = system.phi2

    def f(t, x, e):
        base = phi2(t, x, e)
        out = base + mu * (A @ x[..., None])[..., 0]
        if e != 0.0:
            out = out + (e * e * mu) * phi1(t, x) + (e**3 * mu) * base
        return out

    def jac(t, x, e):
        J2 = phi2.jac(t, x, e) if phi2.jac is not None else phi2.frozen(e).jacobian(t, x)
        J = J2 + mu * np.broadcast_to(A, x.shape[:-1] + A.shape)
        if e != 0.0:
            J = J + (e * e * mu) * phi1.jacobian(t, x) + (e**3 * mu) * J2
        return J

    return PerturbedSystem(
        n=system.n,
        psi=system.psi,
        phi1=phi1,
        phi2=ParametricField(f, jac, name=f"{phi2.name}|mu={mu:g}"),
        T=system.T,
        profile=TWO_TERM,
        name=f"{system.name}|mu={mu:g}",
    )


@dataclass
class ScanRow:
    mu: float
    certificate: Certificate
    a3_min_gap: float
    degree_difference: int | None
    a3_min_gap_probe: float | None
    valid: bool

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "a3_min_gap": self.a3_min_gap,
            "degree_difference": self.degree_difference,
            "a3_min_gap_probe": self.a3_min_gap_probe,
            "valid": self.valid,
        }


@dataclass
class ScanResult:
    rows: list
    mu_hat: float | None
    base: Certificate

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "mu_hat": self.mu_hat,
            "base_degree_difference": self.base.predicted_degree,
        }


def theorem4_scan(
    system: PerturbedSystem,
    U0: PlanarRegion,
    delta: float,
    mu_grid,
    epsilon_probe: float | None = None,
    **kw,
) -> ScanResult:
    """Re-certify the planar result across a grid of detuning values.

    For each ``mu`` the rescaled system is rebuilt and the full certificate is
    re-evaluated; a row is valid when the margins pass and the degree
    difference matches the ``mu = 0`` base case.  ``mu_hat`` is the largest
    grid magnitude such that every grid point within it is valid (the
    empirical symmetric frequency-pulling range).  When ``epsilon_probe`` is
    given, the non-vanishing margin is additionally evaluated with the second
    forcing taken at that finite parameter value.
    """
    base = _theorem3_result(system, U0, delta, **kw)
    if not base.valid:
        raise BaseCaseInvalid("certificate invalid at zero detuning")
    A, _ = extract_linear_part(system)

    rows: list[ScanRow] = []
    for mu in np.asarray(mu_grid, dtype=float):
        mu = float(mu)
        sys_mu = frequency_pulled_system(system, mu, A=A) if mu != 0.0 else system
        cert = _theorem3_result(sys_mu, U0, delta, **kw)
        a3 = cert.reports["U0"].a3_min_gap
        probe = None
        if epsilon_probe is not None:
            probe_kw = {k: v for k, v in kw.items() if k != "eps"}
            probe_report = check_conditions(
                sys_mu, U0, eq_which=None, neq_which=2, eps=epsilon_probe, **probe_kw
            )
            probe = probe_report.a3_min_gap
        ok = cert.valid and cert.predicted_degree == base.predicted_degree
        rows.append(
            ScanRow(
                mu=mu,
                certificate=cert,
                a3_min_gap=a3,
                degree_difference=cert.predicted_degree,
                a3_min_gap_probe=probe,
                valid=ok,
            )
        )

    mu_hat = None
    mags = sorted({abs(r.mu) for r in rows})
    for m in mags:
        if all(r.valid for r in rows if abs(r.mu) <= m + 1e-15):
            mu_hat = m
        else:
            break
    return ScanResult(rows=rows, mu_hat=mu_hat, base=base)
