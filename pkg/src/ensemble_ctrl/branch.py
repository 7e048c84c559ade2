"""Injective branches of a scalar drift and preimages of drift values.

A drift sampled on a grid is split wherever its finite differences change
sign.  Each piece is monotone, so a value ``eta`` has at most one preimage
per branch; the preimage count over all branches is ``kappa(eta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .field import CompactInterval, SampledField

__all__ = [
    "BranchDecomposition", "Preimage", "DegenerateDriftError", "OutOfRangeError",
    "decompose", "preimage", "guard_bands", "eta_strata", "stratified_samples",
    "max_overlap", "critical_images", "split_range",
]


class DegenerateDriftError(ValueError):
    """The drift is constant on a set of positive length."""


class OutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class BranchDecomposition:
    interval: CompactInterval
    branches: tuple[CompactInterval, ...]
    index_ranges: tuple[tuple[int, int], ...]   # inclusive grid indices
    signs: tuple[int, ...]                       # +1 increasing, -1 decreasing, 0 constant
    range: tuple[CompactInterval, ...]           # a(K); one piece for continuous a
    degenerate: bool
    flat_runs: tuple[CompactInterval, ...] = ()  # where a is constant
    scale: float = 0.0                           # max(a) - min(a) on the grid

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def boundary_indices(self) -> list[int]:
        """Grid indices of every branch endpoint, including the ends of K."""
        idx = {0}
        for i0, i1 in self.index_ranges:
            idx.update((i0, i1))
        return sorted(idx)

    def in_range(self, eta: float, tol: float = 0.0) -> bool:
        return any(s.contains(eta, tol) for s in self.range)


@dataclass(frozen=True)
class Preimage:
    eta: float
    points: tuple[float, ...]

    @property
    def kappa(self) -> int:
        return len(self.points)


def decompose(a: SampledField, tol_mono: float = 1e-9) -> BranchDecomposition:
    """Split the grid into maximal monotone runs of ``a``.

    Steps with ``|diff| <= tol_mono * (max a - min a)`` count as flat.  A
    single flat step (a fold that falls between grid points) is absorbed
    into its neighbours; two or more consecutive flat steps mark the drift
    as degenerate.
    """
    v = a.scalar_values
    g = a.grid
    n = len(v)
    K = a.interval
    lo, hi = float(v.min()), float(v.max())
    scale = hi - lo
    S = (CompactInterval(lo, hi),)
    d = np.diff(v)
    flat = np.abs(d) <= tol_mono * scale
    if scale == 0.0 or flat.all():
        return BranchDecomposition(K, (K,), ((0, n - 1),), (0,), S, True, (K,), scale)

    # runs of flat steps longer than one step
    runs = []
    k = 0
    while k < len(flat):
        if flat[k]:
            k0 = k
            while k < len(flat) and flat[k]:
                k += 1
            if k - k0 > 1:
                runs.append(CompactInterval(g[k0], g[k]))
        else:
            k += 1

    sign = np.where(flat, 0, np.sign(d)).astype(int)
    # flat steps take the sign of the preceding strict step (or the next one)
    last = 0
    for k in range(len(sign)):
        if sign[k] == 0:
            sign[k] = last
        else:
            last = sign[k]
    first = next(s for s in sign if s != 0)
    sign[sign == 0] = first

    ranges = []
    start = 0
    for k in range(1, len(sign)):
        if sign[k] != sign[k - 1]:
            ranges.append((start, k))
            start = k
    ranges.append((start, n - 1))
    signs = tuple(int(sign[i0]) for i0, _ in ranges)
    branches = tuple(CompactInterval(g[i0], g[i1]) for i0, i1 in ranges)
    return BranchDecomposition(K, branches, tuple(ranges), signs, S, bool(runs), tuple(runs), scale)


def _locate(vals: np.ndarray, grid: np.ndarray, sign: int, eta: float) -> tuple[float, int]:
    """Position of ``eta`` on a monotone run; returns (beta, segment index)."""
    w = vals if sign > 0 else -vals
    target = eta if sign > 0 else -eta
    target = min(max(target, w[0]), w[-1])
    k = int(np.searchsorted(w, target, side="left"))
    if k == 0:
        return float(grid[0]), -1
    if w[k] == target:
        return float(grid[k]), -1
    w0, w1 = w[k - 1], w[k]
    t = (target - w0) / (w1 - w0)
    return float(grid[k - 1] + t * (grid[k] - grid[k - 1])), k - 1


def preimage(d: BranchDecomposition, a: SampledField, eta: float,
             tol_val: float = 1e-8, tol_merge: float | None = None) -> Preimage:
    """All ``beta`` with ``a(beta) = eta``, one per branch whose image holds ``eta``.

    Points closer than ``tol_merge`` (default two grid spacings) collapse
    onto the lowest of them.  When ``a`` carries an exact source the point
    is refined by root finding inside the bracketing grid segment.

    Raises
    ------
    DegenerateDriftError
        If the decomposition is degenerate.
    OutOfRangeError
        If ``eta`` lies outside ``a(K)`` by more than ``tol_val`` (relative).
    """
    if d.degenerate:
        raise DegenerateDriftError("drift is constant on a subinterval; preimages are not finite")
    tol = tol_val * max(d.scale, 1.0)
    if not d.in_range(eta, tol):
        raise OutOfRangeError(f"eta={eta} outside the drift range {[s.as_list() for s in d.range]}")
    if tol_merge is None:
        tol_merge = 2.0 * a.spacing
    v = a.scalar_values
    g = a.grid
    found = []
    for (i0, i1), s in zip(d.index_ranges, d.signs):
        vals = v[i0:i1 + 1]
        lo, hi = min(vals[0], vals[-1]), max(vals[0], vals[-1])
        if not (lo - tol <= eta <= hi + tol):
            continue
        beta, seg = _locate(vals, g[i0:i1 + 1], s, eta)
        if seg >= 0 and a.source is not None:
            b0, b1 = g[i0 + seg], g[i0 + seg + 1]
            f = lambda b: float(np.asarray(a.source(b)).reshape(-1)[0]) - eta
            f0, f1 = f(b0), f(b1)
            if f0 == 0.0:
                beta = float(b0)
            elif f1 == 0.0:
                beta = float(b1)
            elif f0 * f1 < 0:
                beta = brentq(f, b0, b1, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        found.append(beta)
    found.sort()
    merged = []
    for b in found:
        if merged and b - merged[-1][-1] < tol_merge:
            merged[-1].append(b)
        else:
            merged.append([b])
    return Preimage(float(eta), tuple(float(c[0]) for c in merged))


# ----------------------------------------------------------------------------
# Sampling the drift range
# ----------------------------------------------------------------------------

def critical_images(d: BranchDecomposition, a: SampledField) -> list[float]:
    v = a.scalar_values
    return sorted({float(v[i]) for i in d.boundary_indices()})


def guard_bands(d: BranchDecomposition, a: SampledField, tol_merge: float) -> list[CompactInterval]:
    """Image of the ``tol_merge``-ball around every branch endpoint."""
    v = a.scalar_values
    g = a.grid
    K = a.interval
    bands = []
    for i in d.boundary_indices():
        lo_b, hi_b = max(K.lower, g[i] - tol_merge), min(K.upper, g[i] + tol_merge)
        inside = v[(g >= lo_b) & (g <= hi_b)]
        ends = [a.eval_at(lo_b)[0, 0], a.eval_at(hi_b)[0, 0]]
        vals = np.concatenate([inside, ends])
        bands.append(CompactInterval(float(vals.min()), float(vals.max())))
    return bands


def _subtract(intervals: list[tuple[float, float]], band: CompactInterval) -> list[tuple[float, float]]:
    out = []
    for lo, hi in intervals:
        if band.upper <= lo or band.lower >= hi:
            out.append((lo, hi))
            continue
        if band.lower > lo:
            out.append((lo, band.lower))
        if band.upper < hi:
            out.append((band.upper, hi))
    return out


def eta_strata(d: BranchDecomposition, a: SampledField, tol_merge: float) -> list[CompactInterval]:
    """Open pieces of ``a(K)`` between critical images, minus guard bands.

    ``kappa`` is constant on each returned piece.
    """
    return split_range(critical_images(d, a), guard_bands(d, a, tol_merge))


def split_range(cuts: list[float], bands: list[CompactInterval]) -> list[CompactInterval]:
    """Pieces between consecutive ``cuts`` with every band removed."""
    cuts = sorted(set(cuts))
    pieces = [(lo, hi) for lo, hi in zip(cuts, cuts[1:]) if hi > lo]
    for band in bands:
        pieces = _subtract(pieces, band)
    return [CompactInterval(lo, hi) for lo, hi in pieces if hi > lo]


def stratified_samples(strata: list[CompactInterval], n: int) -> np.ndarray:
    """``n`` (at least one per stratum) bin midpoints allotted by length."""
    if not strata or n <= 0:
        return np.empty(0)
    lengths = np.array([s.length for s in strata])
    total = lengths.sum()
    if total == 0:
        return np.array([s.lower for s in strata])
    counts = np.maximum(1, np.floor(n * lengths / total).astype(int))
    # hand out the remainder to the largest fractional parts
    short = n - counts.sum()
    if short > 0:
        frac = n * lengths / total - np.floor(n * lengths / total)
        for k in np.argsort(-frac)[:short]:
            counts[k] += 1
    pts = []
    for s, c in zip(strata, counts):
        pts.extend(s.lower + (np.arange(c) + 0.5) * (s.length / c))
    return np.sort(np.array(pts))


def max_overlap(d: BranchDecomposition, a: SampledField) -> tuple[int, float]:
    """Largest number of branch images sharing an open set, and a witness eta."""
    v = a.scalar_values
    imgs = []
    for i0, i1 in d.index_ranges:
        lo, hi = sorted((float(v[i0]), float(v[i1])))
        if hi > lo:
            imgs.append((lo, hi))
    if not imgs:
        return 0, float(v[0])
    cuts = sorted({x for iv in imgs for x in iv})
    best, witness = 1, 0.5 * (imgs[0][0] + imgs[0][1])
    for lo, hi in zip(cuts, cuts[1:]):
        mid = 0.5 * (lo + hi)
        depth = sum(1 for a0, a1 in imgs if a0 < mid < a1)
        if depth > best:
            best, witness = depth, mid
    return best, witness
