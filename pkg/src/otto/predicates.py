"""Exact-sign geometric predicates for weighted (power) triangulations.

Both predicates first evaluate in floating point with a conservative error
bound and fall back to exact rational arithmetic when the sign is uncertain.
Degenerate power tests are resolved by a symbolic perturbation of the weights
indexed by global point numbers, which makes the outcome independent of the
order in which the arguments were produced.
"""
from __future__ import annotations

from fractions import Fraction

_ORIENT_BOUND = 8.0e-16
_POWER_BOUND = 1.0e-13


class DegeneracyError(ValueError):
    """Raised when a predicate cannot be resolved by symbolic perturbation."""


def _orient_exact(ax, ay, bx, by, cx, cy) -> int:
    ax, ay, bx, by, cx, cy = map(Fraction, (ax, ay, bx, by, cx, cy))
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (det > 0) - (det < 0)


def orient(a, b, c) -> int:
    """Sign of the signed area of triangle (a, b, c); +1 means counterclockwise."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    cx, cy = float(c[0]), float(c[1])
    left = (bx - ax) * (cy - ay)
    right = (by - ay) * (cx - ax)
    det = left - right
    bound = _ORIENT_BOUND * (abs(left) + abs(right))
    if det > bound:
        return 1
    if det < -bound:
        return -1
    return _orient_exact(ax, ay, bx, by, cx, cy)


def _power_det_exact(pts, wts) -> int:
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = [(Fraction(p[0]), Fraction(p[1])) for p in pts]
    wa, wb, wc, wd = (Fraction(w) for w in wts)
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady - (wa - wd)
    blift = bdx * bdx + bdy * bdy - (wb - wd)
    clift = cdx * cdx + cdy * cdy - (wc - wd)
    det = (alift * (bdx * cdy - cdx * bdy)
           + blift * (cdx * ady - adx * cdy)
           + clift * (adx * bdy - bdx * ady))
    return (det > 0) - (det < 0)


def power_det_sign(pts, wts) -> int:
    """Unperturbed sign of det[x, y, x^2 + y^2 - w, 1] over the four rows."""
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = [(float(p[0]), float(p[1])) for p in pts]
    wa, wb, wc, wd = (float(w) for w in wts)
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady - (wa - wd)
    blift = bdx * bdx + bdy * bdy - (wb - wd)
    clift = cdx * cdx + cdy * cdy - (wc - wd)
    m_a = bdx * cdy - cdx * bdy
    m_b = cdx * ady - adx * cdy
    m_c = adx * bdy - bdx * ady
    det = alift * m_a + blift * m_b + clift * m_c
    perm = ((adx * adx + ady * ady + abs(wa - wd)) * (abs(bdx * cdy) + abs(cdx * bdy))
            + (bdx * bdx + bdy * bdy + abs(wb - wd)) * (abs(cdx * ady) + abs(adx * cdy))
            + (cdx * cdx + cdy * cdy + abs(wc - wd)) * (abs(adx * bdy) + abs(bdx * ady)))
    bound = _POWER_BOUND * perm
    if det > bound:
        return 1
    if det < -bound:
        return -1
    return _power_det_exact(((ax, ay), (bx, by), (cx, cy), (dx, dy)), (wa, wb, wc, wd))


def power_conflict(s_i, s_j, s_k, s_n, psi_i, psi_j, psi_k, psi_n,
                   indices=(0, 1, 2, 3)) -> int:
    """Sign telling whether weighted point n conflicts with triangle (i, j, k).

    The triangle is first reordered to counterclockwise orientation.  The
    returned value is +1 when n lies strictly inside the orthogonal circle of
    the triangle (so the triangle must be removed when n is inserted) and -1
    otherwise.  An exactly zero determinant is resolved by perturbing each
    weight psi_m by eps**m, with m the global index from ``indices``; the
    smallest index with a nonzero cofactor decides.
    """
    pts = [s_i, s_j, s_k, s_n]
    wts = [psi_i, psi_j, psi_k, psi_n]
    idx = list(indices)
    o = orient(s_i, s_j, s_k)
    if o < 0:
        pts[1], pts[2] = pts[2], pts[1]
        wts[1], wts[2] = wts[2], wts[1]
        idx[1], idx[2] = idx[2], idx[1]
    sign = power_det_sign(pts, wts)
    if sign != 0:
        return sign
    if o == 0:
        raise DegeneracyError("unresolvable degeneracy: collinear triangle with zero power determinant")
    a, b, c, d = pts
    # Cofactors of the lifted column for rows a, b, c, d; perturbing w_m by
    # eps**m adds -eps**m * cofactor_m to the determinant.
    terms = [
        (idx[0], -orient(b, c, d)),
        (idx[1], orient(a, c, d)),
        (idx[2], -orient(a, b, d)),
        (idx[3], orient(a, b, c)),
    ]
    for _, coef in sorted(terms, key=lambda t: t[0]):
        if coef != 0:
            return coef
    raise DegeneracyError("unresolvable degeneracy: all perturbation terms vanish")
