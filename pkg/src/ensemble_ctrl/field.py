"""Functions on a compact parameter interval, sampled on a uniform grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import Expr, ExprDomainError, evaluate

__all__ = [
    "CompactInterval", "SampledField", "FieldDomainError", "OutOfIntervalError",
    "sample", "uniform_norm", "eval_at", "DEFAULT_GRID", "ExprSource",
]

DEFAULT_GRID = 201


class OutOfIntervalError(ValueError):
    pass


class FieldDomainError(ExprDomainError):
    """An expression failed at a grid point; ``beta`` names the point."""

    def __init__(self, err: ExprDomainError, beta: float, entry: tuple[int, int]):
        self.beta = beta
        self.entry = entry
        ValueError.__init__(self, f"{err} at beta={beta!r} (entry {entry})")
        self.node = err.node
        self.index = err.index


@dataclass(frozen=True)
class CompactInterval:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("interval endpoints must be finite")
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= x <= self.upper + tol

    def grid(self, n: int) -> np.ndarray:
        j = np.arange(n)
        # endpoints exact; interior points per the uniform formula
        g = self.lower + j * (self.length / (n - 1))
        g[-1] = self.upper
        return g

    def intersect(self, other: "CompactInterval") -> Optional["CompactInterval"]:
        lo, hi = max(self.lower, other.lower), min(self.upper, other.upper)
        return CompactInterval(lo, hi) if lo <= hi else None

    def as_list(self) -> list[float]:
        return [self.lower, self.upper]


Source = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class SampledField:
    """Values of a (rows x cols)-matrix valued function on a uniform grid.

    ``source`` optionally evaluates the exact function off the grid; it is
    used for root refinement and for re-sampling on finer grids.  Between
    grid points the field is the piecewise-linear interpolant.
    """

    interval: CompactInterval
    values: np.ndarray
    source: Optional[Source] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3:
            raise ValueError(f"values must have shape (n_grid, rows, cols), got {vals.shape}")
        if vals.shape[0] < 2:
            raise ValueError("a sampled field needs at least 2 grid points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sampled values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_grid(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @property
    def grid(self) -> np.ndarray:
        return self.interval.grid(self.n_grid)

    @property
    def spacing(self) -> float:
        return self.interval.length / (self.n_grid - 1)

    @property
    def scalar_values(self) -> np.ndarray:
        if self.shape != (1, 1):
            raise ValueError(f"field is {self.shape}, not scalar")
        return self.values[:, 0, 0]

    def eval_at(self, beta: float) -> np.ndarray:
        return eval_at(self, beta)

    def evaluate(self, beta: float) -> np.ndarray:
        """Exact value at ``beta`` when a source is known, else interpolated."""
        if self.source is not None:
            if not self.interval.contains(beta, 1e-12 * max(1.0, self.interval.length)):
                raise OutOfIntervalError(f"beta={beta} outside {self.interval.as_list()}")
            return np.asarray(self.source(beta), dtype=float).reshape(self.shape)
        return eval_at(self, beta)

    def block(self, rows: slice, cols: slice) -> "SampledField":
        src = None
        parent = self.source
        if isinstance(parent, ExprSource):
            src = parent.select(rows, cols)
        elif parent is not None:
            src = lambda b: np.asarray(parent(b))[rows, cols]
        return SampledField(self.interval, self.values[:, rows, cols], src)

    def entry(self, i: int, j: int) -> "SampledField":
        return self.block(slice(i, i + 1), slice(j, j + 1))

    def row(self, i: int) -> "SampledField":
        return self.block(slice(i, i + 1), slice(None))

    def resample(self, n_grid: int) -> "SampledField":
        """Re-evaluate the source on a grid of ``n_grid`` points."""
        if self.source is None:
            raise ValueError("field has no source to resample from")
        g = self.interval.grid(n_grid)
        vals = np.stack([np.asarray(self.source(b), dtype=float).reshape(self.shape) for b in g])
        return SampledField(self.interval, vals, self.source)

    def _combine(self, other: "SampledField", sign: float) -> "SampledField":
        if self.interval != other.interval or self.values.shape != other.values.shape:
            raise ValueError("fields live on different grids")
        src = None
        if self.source is not None and other.source is not None:
            f, g = self.source, other.source
            src = lambda b: np.asarray(f(b)) + sign * np.asarray(g(b))
        return SampledField(self.interval, self.values + sign * other.values, src)

    def __add__(self, other: "SampledField") -> "SampledField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "SampledField") -> "SampledField":
        return self._combine(other, -1.0)


def _as_matrix(exprs) -> list[list[Expr]]:
    if isinstance(exprs, (list, tuple)):
        if exprs and all(isinstance(r, (list, tuple)) for r in exprs):
            return [list(r) for r in exprs]
        return [[e] for e in exprs]
    return [[exprs]]


def sample(exprs, interval: CompactInterval, n_grid: int = DEFAULT_GRID) -> SampledField:
    """Evaluate an expression, vector (column) or matrix entrywise on the grid.

    Raises
    ------
    FieldDomainError
        If any entry fails to evaluate; the failing grid point is named.
    """
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    mat = _as_matrix(exprs)
    rows, cols = len(mat), len(mat[0])
    if any(len(r) != cols for r in mat):
        raise ValueError("ragged expression matrix")
    g = interval.grid(n_grid)
    vals = np.empty((n_grid, rows, cols))
    for i, row in enumerate(mat):
        for j, e in enumerate(row):
            try:
                vals[:, i, j] = evaluate(e, g)
            except ExprDomainError as err:
                beta = float(g[err.index]) if err.index is not None else float(g[0])
                raise FieldDomainError(err, beta, (i, j)) from None

    return SampledField(interval, vals, ExprSource(mat))


class ExprSource:
    """Exact evaluator of an expression matrix; sub-blocks evaluate only their entries."""

    def __init__(self, mat: list[list[Expr]]):
        self.mat = mat

    def __call__(self, b: float) -> np.ndarray:
        return np.array([[evaluate(e, b) for e in row] for row in self.mat])

    def select(self, rows: slice, cols: slice) -> "ExprSource":
        return ExprSource([r[cols] for r in self.mat[rows]])


def uniform_norm(f: SampledField) -> float:
    """Sup over the grid of the max-abs entry."""
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def eval_at(f: SampledField, beta: float) -> np.ndarray:
    """Piecewise-linear interpolation of ``f`` at ``beta``."""
    K = f.interval
    tol = 1e-12 * max(1.0, K.length)
    if not K.contains(beta, tol):
        raise OutOfIntervalError(f"beta={beta} outside {K.as_list()}")
    if K.length == 0:
        return f.values[0].copy()
    beta = min(max(beta, K.lower), K.upper)
    g = f.grid
    j = int(np.searchsorted(g, beta, side="right")) - 1
    j = min(max(j, 0), f.n_grid - 2)
    if g[j] == beta:
        return f.values[j].copy()
    if g[j + 1] == beta:
        return f.values[j + 1].copy()
    t = (beta - g[j]) / (g[j + 1] - g[j])
    return (1.0 - t) * f.values[j] + t * f.values[j + 1]


def constant_field(value: Sequence, interval: CompactInterval, n_grid: int) -> SampledField:
    v = np.atleast_2d(np.asarray(value, dtype=float))
    return SampledField(interval, np.broadcast_to(v, (n_grid,) + v.shape), lambda b: v)
