"""Exact weighted measures of holes and self-similar cells.

``math.inf`` is returned whenever the weighted measure diverges.
"""
import math
from typing import Tuple


def carpet_hole_constant(alpha: float) -> float:
    """c_alpha = 8 / ((alpha+1)(alpha+2)) * 2^-(alpha+2)"""
    if alpha <= -1:
        return math.inf
    return 8.0 / ((alpha + 1) * (alpha + 2)) * 2.0 ** (-(alpha + 2))


def carpet_hole_by_side(side: float, alpha: float) -> float:
    """Integral of dist(., boundary)^alpha over an open square of the given side"""
    c = carpet_hole_constant(alpha)
    return c if math.isinf(c) else c * side ** (alpha + 2)


def hole_measure_carpet(k: int, alpha: float) -> float:
    if k < 1:
        raise ValueError("hole generation must be at least 1")
    return carpet_hole_by_side(3.0 ** (-k), alpha)


def carpet_cell_by_side(side: float, alpha: float) -> float:
    """Weighted measure of a scaled copy of the carpet's unit square"""
    ratio = 3.0 ** (alpha + 2)
    if ratio <= 8.0 or alpha <= -1:
        return math.inf
    return carpet_hole_constant(alpha) * side ** (alpha + 2) / (ratio - 8.0)


def carpet_series(alpha: float, terms: int = 40) -> Tuple[float, float]:
    """Truncated hole series for the unit carpet square and its geometric tail bound"""
    c = carpet_hole_constant(alpha)
    q = 8.0 * 3.0 ** (-(alpha + 2))
    partial = sum(8.0 ** j * c * 3.0 ** (-(j + 1) * (alpha + 2)) for j in range(terms))
    if q >= 1.0 or math.isinf(c):
        return partial, math.inf
    tail = c * 3.0 ** (-(alpha + 2)) * q ** terms / (1.0 - q)
    return partial, tail


def gasket_hole_constant(alpha: float) -> float:
    """Unit-side hole constant: hole measure of side s equals constant * s^(alpha+2)"""
    if alpha <= -1:
        return math.inf
    return 6.0 / ((alpha + 1) * (alpha + 2)) * 3.0 ** (-(alpha + 1) / 2) * 2.0 ** (-(alpha + 2))


def hole_measure_gasket(s: float, alpha: float) -> float:
    if s <= 0:
        raise ValueError("side must be positive")
    c = gasket_hole_constant(alpha)
    return c if math.isinf(c) else c * s ** (alpha + 2)


def gasket_cell_by_side(side: float, alpha: float) -> float:
    """Weighted measure of a gasket cell (its triangular footprint) of the given side"""
    q = 3.0 * 2.0 ** (-(alpha + 2))
    if q >= 1.0 or alpha <= -1:
        return math.inf
    return gasket_hole_constant(alpha) * (side / 2) ** (alpha + 2) / (1.0 - q)


def gasket_triangle_measure(k: int, alpha: float) -> float:
    if k < 0:
        raise ValueError("level must be non-negative")
    return gasket_cell_by_side(2.0 ** (-k), alpha)


def koch_cap_bounds(segment: float, alpha: float) -> Tuple[float, float]:
    """Bounds of the weighted measure of the snowflake domain beyond one polygon segment.

    That part is a union of bumps, 4^(j-1) equilateral triangles of side
    segment * 3^-j for j >= 1, whose vertices lie on the curve. Below zero the
    weight on a bump is bounded by the distance to the bump's own boundary;
    above zero, by its circumradius.
    """
    if segment <= 0:
        raise ValueError("segment must be positive")
    area = math.sqrt(3) / 20 * segment ** 2
    reach = segment / (3 * math.sqrt(3))
    if alpha == 0:
        return area, area
    q = 4.0 * 3.0 ** (-(alpha + 2))
    if alpha < 0:
        lower = area * reach ** alpha
        c = gasket_hole_constant(alpha)
        if q >= 1.0 or math.isinf(c):
            return lower, math.inf
        return lower, c * (segment / 3) ** (alpha + 2) / (1.0 - q)
    series = math.sqrt(3) / 4 * (segment / 3) ** 2 * reach ** alpha / (1.0 - q)
    return 0.0, min(series, area * reach ** alpha)
