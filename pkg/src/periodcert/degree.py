"""Brouwer degree of continuous planar maps via adaptive boundary winding.

The degree of a map over a region with oriented boundary curves is the sum of
the winding numbers of the map's image of each curve around the origin; inner
(hole) curves are traversed clockwise and therefore contribute with opposite
sign automatically.  Argument increments between consecutive samples are
accumulated with the two-argument arctangent; any segment whose increment
exceeds pi/2 is bisected (up to 20 levels), so a true crossing of the origin
forces refinement before it can be miscounted.

Only planar maps are supported; the winding-based point membership test used
elsewhere in the package lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import RefinementExhausted, ZeroOnBoundary

__all__ = [
    "BoundaryCurve",
    "PlanarRegion",
    "DegreeResult",
    "boundary_winding",
    "region_degree",
    "winding_number",
]

ZERO_MARGIN = 1e-12
MAX_REFINEMENT = 20
DEFAULT_SAMPLES = 256
_ANGLE_LIMIT = np.pi / 2


def _as_batched_map(map_fn: Callable) -> Callable:
    """Ensure the map accepts an (M, 2) array; fall back to a python loop."""

    def call(points: np.ndarray) -> np.ndarray:
        out = np.asarray(map_fn(points), dtype=float)
        if out.shape == points.shape:
            return out
        raise ValueError("map returned wrong shape")

    def rowwise(points: np.ndarray) -> np.ndarray:
        return np.stack([np.asarray(map_fn(p), dtype=float) for p in points])

    probe = np.array([[0.1, 0.2], [0.3, -0.4]])
    try:
        call(probe)
        return call
    except Exception:
        return rowwise


@dataclass(eq=False)
class BoundaryCurve:
    """A closed oriented planar curve ``theta in [0,1) -> R^2``.

    ``param`` must be vectorized over a 1-d theta array.  ``orientation`` is
    +1 for counterclockwise (outer boundaries) and -1 for clockwise (holes);
    it must match the actual traversal direction of ``param``.
    """

    param: Callable[[np.ndarray], np.ndarray]
    orientation: int = 1
    samples: int = DEFAULT_SAMPLES
    name: str = ""

    def points(self, m: int | None = None) -> np.ndarray:
        m = m or self.samples
        return self.param(np.arange(m) / m)

    def validate(self, m: int | None = None) -> None:
        """Check closure, orientation flag, and sampled simplicity."""
        m = m or self.samples
        pts = self.points(m)
        gap = np.linalg.norm(self.param(np.array([1.0 - 1e-9]))[0] - self.param(np.array([0.0]))[0])
        scale = 1.0 + float(np.max(np.abs(pts)))
        if gap > 1e-6 * scale:
            raise ValueError(f"curve {self.name!r} is not closed: endpoint gap {gap:.3e}")
        area2 = _signed_area2(pts)
        if area2 * self.orientation <= 0:
            raise ValueError(
                f"curve {self.name!r}: sampled orientation disagrees with flag {self.orientation}"
            )
        if _has_self_intersection(pts):
            raise ValueError(f"curve {self.name!r} self-intersects at sample resolution")

    def scaled(self, factor: float) -> "BoundaryCurve":
        """Pointwise scaling about the origin (keeps orientation)."""
        base = self.param
        return BoundaryCurve(
            param=lambda th: factor * base(th),
            orientation=self.orientation,
            samples=self.samples,
            name=f"{self.name}*{factor:g}" if self.name else "",
        )


def circle(center, r: float, orientation: int = 1, samples: int = DEFAULT_SAMPLES, name: str = "") -> BoundaryCurve:
    cx, cy = float(center[0]), float(center[1])

    def param(th):
        ang = 2.0 * np.pi * np.asarray(th) * orientation
        return np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=-1)

    return BoundaryCurve(param, orientation=orientation, samples=samples, name=name or f"circle(r={r:g})")


def _signed_area2(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(np.sum(x * yn - xn * y))


def _has_self_intersection(pts: np.ndarray) -> bool:
    """Any two non-adjacent sampled segments crossing (O(m^2), vectorized)."""
    m = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)
    d = b - a
    # cross products for the standard segment-intersection predicate
    idx_i, idx_j = np.triu_indices(m, k=2)
    keep = ~((idx_i == 0) & (idx_j == m - 1))  # first/last segments are adjacent
    idx_i, idx_j = idx_i[keep], idx_j[keep]
    ai, di = a[idx_i], d[idx_i]
    aj, dj = a[idx_j], d[idx_j]
    r = aj - ai
    denom = di[:, 0] * dj[:, 1] - di[:, 1] * dj[:, 0]
    t_num = r[:, 0] * dj[:, 1] - r[:, 1] * dj[:, 0]
    u_num = r[:, 0] * di[:, 1] - r[:, 1] * di[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    proper = (np.abs(denom) > 1e-15) & (t > 1e-12) & (t < 1 - 1e-12) & (u > 1e-12) & (u < 1 - 1e-12)
    return bool(np.any(proper))


@dataclass(eq=False)
class PlanarRegion:
    """An open planar region: one outer CCW curve minus zero or more CW holes."""

    outer: BoundaryCurve
    holes: tuple = ()

    @property
    def curves(self) -> tuple:
        return (self.outer, *self.holes)

    @classmethod
    def disc(cls, center=(0.0, 0.0), r: float = 1.0, samples: int = DEFAULT_SAMPLES) -> "PlanarRegion":
        return cls(outer=circle(center, r, +1, samples, name=f"disc(r={r:g})"))

    @classmethod
    def annulus(
        cls,
        center=(0.0, 0.0),
        r_in: float = 1.0,
        r_out: float = 2.0,
        samples: int = DEFAULT_SAMPLES,
    ) -> "PlanarRegion":
        if not 0 < r_in < r_out:
            raise ValueError("annulus requires 0 < r_in < r_out")
        return cls(
            outer=circle(center, r_out, +1, samples, name=f"annulus-outer(r={r_out:g})"),
            holes=(circle(center, r_in, -1, samples, name=f"annulus-inner(r={r_in:g})"),),
        )

    def validate(self) -> None:
        self.outer.validate()
        if self.outer.orientation != 1:
            raise ValueError("outer curve must be counterclockwise")
        for h in self.holes:
            h.validate()
            if h.orientation != -1:
                raise ValueError("hole curves must be clockwise")
            w = winding_number(h.points(), self.outer)
            if not np.all(w == 1):
                raise ValueError("hole curve is not strictly inside the outer curve")

    def scaled(self, factor: float) -> "PlanarRegion":
        return PlanarRegion(
            outer=self.outer.scaled(factor),
            holes=tuple(h.scaled(factor) for h in self.holes),
        )

    def boundary_points(self, m: int | None = None) -> np.ndarray:
        return np.concatenate([c.points(m) for c in self.curves], axis=0)

    def contains(self, points: np.ndarray, m: int | None = None) -> np.ndarray:
        """Winding-based membership of points in the open region."""
        total = sum(winding_number(points, c, m) for c in self.curves)
        return total == 1


def winding_number(points: np.ndarray, curve: BoundaryCurve, m: int | None = None) -> np.ndarray:
    """Winding of the curve around each query point (sampled polygon)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pts = curve.points(m or max(curve.samples, 512))
    v = pts[None, :, :] - points[:, None, :]  # (P, M, 2)
    vn = np.roll(v, -1, axis=1)
    cross = v[:, :, 0] * vn[:, :, 1] - v[:, :, 1] * vn[:, :, 0]
    dot = v[:, :, 0] * vn[:, :, 0] + v[:, :, 1] * vn[:, :, 1]
    ang = np.arctan2(cross, dot)
    total = ang.sum(axis=1) / (2.0 * np.pi)
    return np.rint(total).astype(int)


@dataclass(frozen=True)
class DegreeResult:
    """Degree with the evidence that defined it."""

    degree: int
    boundary_margin: float
    samples_used: int
    refinements: int

    def __post_init__(self):
        if self.boundary_margin <= 0:
            raise ValueError("degree undefined: boundary margin must be positive")


def boundary_winding(
    map_fn: Callable,
    curve: BoundaryCurve,
    m: int | None = None,
) -> tuple[int, float, int, int]:
    """Winding of ``map o param`` around the origin with adaptive bisection.

    Returns ``(winding, margin, samples_used, refinement_levels)``.  The
    margin is the smallest ``||map(point)||`` seen; a margin below 1e-12
    raises :class:`ZeroOnBoundary`, and unresolved angle steps after 20
    bisection levels raise :class:`RefinementExhausted`.
    """
    fn = _as_batched_map(map_fn)
    m = m or curve.samples
    thetas = np.arange(m) / m
    vals = fn(curve.param(thetas))

    levels = 0
    while True:
        norms = np.linalg.norm(vals, axis=1)
        margin = float(norms.min())
        if margin < ZERO_MARGIN:
            raise ZeroOnBoundary(
                f"map magnitude {margin:.3e} on boundary sample of {curve.name or 'curve'}"
            )
        nxt = np.roll(vals, -1, axis=0)
        cross = vals[:, 0] * nxt[:, 1] - vals[:, 1] * nxt[:, 0]
        dot = vals[:, 0] * nxt[:, 0] + vals[:, 1] * nxt[:, 1]
        ang = np.arctan2(cross, dot)
        bad = np.abs(ang) > _ANGLE_LIMIT
        if not bad.any():
            total = float(ang.sum()) / (2.0 * np.pi)
            winding = int(np.rint(total))
            return winding, margin, len(thetas), levels

        levels += 1
        if levels > MAX_REFINEMENT:
            raise RefinementExhausted(
                f"angle step above pi/2 after {MAX_REFINEMENT} bisection levels"
            )
        left = thetas[bad]
        right = np.where(bad, np.roll(thetas, -1), 0.0)[bad]
        right = np.where(right <= left, right + 1.0, right)  # wrap segment
        mids = ((left + right) / 2.0) % 1.0
        new_vals = fn(curve.param(mids))
        thetas = np.concatenate([thetas, mids])
        vals = np.concatenate([vals, new_vals], axis=0)
        order = np.argsort(thetas, kind="stable")
        thetas = thetas[order]
        vals = vals[order]


def region_degree(map_fn: Callable, region: PlanarRegion, m: int | None = None) -> DegreeResult:
    """Brouwer degree of the map over the region (sum of oriented windings)."""
    degree = 0
    margin = np.inf
    samples = 0
    refinements = 0
    for c in region.curves:
        w, mg, ns, lv = boundary_winding(map_fn, c, m)
        degree += w
        margin = min(margin, mg)
        samples += ns
        refinements += lv
    return DegreeResult(
        degree=degree,
        boundary_margin=float(margin),
        samples_used=samples,
        refinements=refinements,
    )
