"""Adaptive open-interval Romberg integration.

The base rule is the midpoint rule. Each refinement triples the number of
points (step shrinks to a third), so every previous abscissa is reused, and
the error expansion in ``h**2`` is removed by Richardson extrapolation with
ratio 9. The routine stops as soon as some column of the tableau agrees with
the previous row to within ``max(abs_tol, rel_tol * |value|)``.

Because the stopping level is discrete, the returned value jumps slightly
whenever a smooth change of the integrand makes the routine stop one level
earlier or later. :class:`JumpRecorder` exists to expose that effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

MAX_LEVELS = 20


@dataclass(frozen=True)
class QuadConfig:
    rel_tol: float = 1e-5
    abs_tol: float = 1e-8
    max_refinements: int = 14
    min_refinements: int = 3
    tail_cutoff_sigmas: float = 8.0
    record_jumps: bool = False

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 2 <= self.max_refinements <= MAX_LEVELS:
            raise ValueError(f"max_refinements must be in [2, {MAX_LEVELS}]")
        if not 2 <= self.min_refinements <= self.max_refinements:
            raise ValueError("min_refinements must be in [2, max_refinements]")
        if self.tail_cutoff_sigmas < 4:
            raise ValueError("tail_cutoff_sigmas must be >= 4")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class QuadResult:
    value: float
    est_error: float
    refinements_used: int
    converged: bool = True


def romberg(f: Callable[[float], float], lo: float, hi: float, rel_tol: float, abs_tol: float,
            min_levels: int, max_levels: int) -> tuple[float, float, int, bool]:
    """Scalar Romberg loop behind :func:`integrate`.

    Returns ``(value, est_error, levels, converged)``.
    """
    width = hi - lo
    s = width * f(lo + 0.5 * width)
    prev = [s]
    value, err = s, math.inf
    step = width
    for k in range(1, max_levels):
        new_step = step / 3.0
        x = lo + 0.5 * new_step
        acc = 0.0
        # old midpoints sit at the centre of each triple; new ones either side
        for _ in range(3 ** (k - 1)):
            acc += f(x)
            acc += f(x + 2.0 * new_step)
            x += 3.0 * new_step
        s = s / 3.0 + new_step * acc
        step = new_step
        row = [s]
        fac = 1.0
        for j in range(1, k + 1):
            fac *= 9.0
            row.append(row[j - 1] + (row[j - 1] - prev[j - 1]) / (fac - 1.0))
        # best column: smallest change against the previous level
        best_j, err = 0, abs(row[0] - prev[0])
        for j in range(1, k):
            e = abs(row[j] - prev[j])
            if e < err:
                best_j, err = j, e
        value = row[best_j]
        prev = row
        if k + 1 >= min_levels and err <= max(abs_tol, rel_tol * abs(value)):
            return value, err, k + 1, True
    return value, err, max_levels, False


def integrate(f: Callable[[float], float], lo: float, hi: float,
              cfg: QuadConfig | None = None) -> QuadResult:
    """Integrate ``f`` over the open interval ``(lo, hi)``.

    Non-convergence is reported through ``converged=False`` rather than an
    exception; the best available value is still returned.
    """
    cfg = cfg or QuadConfig()
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("limits must be finite; use integrate_semi_infinite")
    if not lo < hi:
        raise ValueError("need lo < hi")
    v, e, lev, ok = romberg(f, lo, hi, cfg.rel_tol, cfg.abs_tol, cfg.min_refinements,
                            cfg.max_refinements)
    return QuadResult(v, e, lev, ok)


def gaussian_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def integrate_semi_infinite(f: Callable[[float], float], lo: float, hi: float, center: float,
                            scale: float, cfg: QuadConfig | None = None) -> QuadResult:
    """Integrate over a possibly infinite interval by truncating at ``center +- L*scale``.

    ``f`` is assumed to be bounded by a Gaussian density with this centre and
    scale outside the window; the mass discarded on each infinite side is
    added to ``est_error``.
    """
    cfg = cfg or QuadConfig()
    if scale <= 0:
        raise ValueError("scale must be positive")
    cut = cfg.tail_cutoff_sigmas
    tail = gaussian_tail(cut)
    extra = 0.0
    a, b = lo, hi
    if math.isinf(lo):
        a = center - cut * scale
        extra += tail
    if math.isinf(hi):
        b = center + cut * scale
        extra += tail
    if not a < b:
        return QuadResult(0.0, extra, 0, True)
    r = integrate(f, a, b, cfg)
    return QuadResult(r.value, r.est_error + extra, r.refinements_used, r.converged)


@dataclass
class JumpRecorder:
    """Collects (position, refinement signature, value) along a parameter sweep.

    The recorder belongs to the caller; nothing global is touched.
    """

    enabled: bool = True
    points: list[tuple[float, tuple[int, ...], float]] = field(default_factory=list)

    def record(self, position: float, refinements, value: float) -> None:
        if not self.enabled:
            return
        if isinstance(refinements, int):
            refinements = (refinements,)
        self.points.append((float(position), tuple(int(r) for r in refinements), float(value)))

    def jump_report(self) -> list[dict]:
        """Locations where the refinement signature changed between adjacent points.

        ``discontinuity`` is the step ``v1 - v0`` minus the smooth trend of
        the sweep, with the slope taken from the two preceding points (or the
        two following points at the start of the sweep).
        """
        if not self.enabled:
            return []
        out = []
        pts = self.points
        for k in range(1, len(pts)):
            x0, r0, v0 = pts[k - 1]
            x1, r1, v1 = pts[k]
            if r0 == r1:
                continue
            if k >= 2:
                xa, _, va = pts[k - 2]
                xb, vb = x0, v0
            elif k + 1 < len(pts):
                xa, va = x1, v1
                xb, _, vb = pts[k + 1]
            else:
                xa = xb = va = vb = 0.0
            slope = (vb - va) / (xb - xa) if xb != xa else 0.0
            pred = v0 + slope * (x1 - x0)
            out.append({
                "position": x1,
                "previous_position": x0,
                "refinements_before": r0,
                "refinements_after": r1,
                "value": v1,
                "discontinuity": v1 - pred,
            })
        return out
