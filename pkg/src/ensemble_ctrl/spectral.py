"""Eigenvalue curves of a matrix field and the input matrix in eigen-coordinates.

``classify`` tags the drift as Diagonal, Triangular (upper), JordanBlock
(``lambda I`` plus ones on the superdiagonal), DiagonalizableTracked, or
Unsupported.  The first three read the eigenvalue curves off the diagonal.
A triangular drift with distinct diagonal entries also gets its unit upper
triangular eigenvector matrix by back-substitution.  Otherwise the matrix
is eigendecomposed at every grid point and the eigenvalues are linked into
continuous curves by minimal-cost assignment between neighbouring grid
points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import VerdictConfig
from .field import CompactInterval, SampledField

__all__ = [
    "Structure", "SpectralProfile", "SingularTransformError", "classify",
    "transformed_inputs", "matrix_inf_norm", "triangular_eigvecs",
]

log = logging.getLogger(__name__)


class Structure(str, Enum):
    DIAGONAL = "Diagonal"
    TRIANGULAR = "Triangular"
    TRACKED = "DiagonalizableTracked"
    JORDAN = "JordanBlock"
    UNSUPPORTED = "Unsupported"


class SingularTransformError(ValueError):
    def __init__(self, beta: float, cond: float):
        self.beta = beta
        super().__init__(f"eigenvector matrix is singular at beta={beta!r} (cond={cond:.3g})")


@dataclass
class SpectralProfile:
    """Eigenvalue curves, eigenvector matrices and structure of ``A``.

    ``P`` and ``cond`` are filled for DiagonalizableTracked, and for
    Triangular when the diagonal entries never meet.  ``A`` is kept so that
    eigenvectors can be recomputed off the grid.
    """

    structure: Structure
    curves: list[SampledField] = field(default_factory=list)
    P: Optional[np.ndarray] = None          # (n_grid, n, n), columns are eigenvectors
    cond: Optional[np.ndarray] = None       # (n_grid,)
    reason: str = ""
    recon_error: float = 0.0
    A: Optional[SampledField] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.curves)

    @property
    def ranges(self) -> list[CompactInterval]:
        """``K_i = lambda_i(K)``; one interval per curve since curves are continuous."""
        return [CompactInterval(float(c.scalar_values.min()), float(c.scalar_values.max()))
                for c in self.curves]

    @property
    def supported(self) -> bool:
        return self.structure != Structure.UNSUPPORTED

    @property
    def has_eigenbasis(self) -> bool:
        return self.P is not None

    def summary(self) -> dict:
        out = {"structure": self.structure.value, "n": self.n,
               "ranges": [r.as_list() for r in self.ranges]}
        if self.reason:
            out["reason"] = self.reason
        if self.cond is not None:
            out["max_cond"] = float(self.cond.max())
            out["recon_error"] = self.recon_error
        return out


def matrix_inf_norm(A: SampledField) -> float:
    """Largest induced infinity norm over the grid."""
    return float(np.max(np.sum(np.abs(A.values), axis=2)))


def _scale(A: SampledField) -> float:
    return max(matrix_inf_norm(A), 1.0)


def _diag_curves(A: SampledField) -> list[SampledField]:
    return [A.entry(i, i) for i in range(A.shape[0])]


def _is_jordan(A: SampledField, tol: float) -> bool:
    n = A.shape[0]
    if n < 2:
        return False
    V = A.values
    d = np.diagonal(V, axis1=1, axis2=2)
    if np.max(np.abs(d - d[:, :1])) > tol:
        return False
    pattern = np.eye(n, k=1)
    off = V - d[:, :, None] * np.eye(n)
    return bool(np.max(np.abs(off - pattern)) <= tol)


def classify(A: SampledField, config: Optional[VerdictConfig] = None) -> SpectralProfile:
    """Structure tag and eigenvalue curves of a square matrix field."""
    cfg = config or VerdictConfig()
    n, n2 = A.shape
    if n != n2:
        raise ValueError(f"drift must be square, got {A.shape}")
    scale = _scale(A)
    tol = cfg.tol_recon * scale
    V = A.values
    lower = np.tril(np.ones((n, n), bool), -1)
    upper = lower.T
    if np.all(np.abs(V[:, lower]) <= tol) and np.all(np.abs(V[:, upper]) <= tol):
        return SpectralProfile(Structure.DIAGONAL, _diag_curves(A), A=A)
    if _is_jordan(A, tol):
        return SpectralProfile(Structure.JORDAN, _diag_curves(A), A=A)
    if np.all(np.abs(V[:, lower]) <= tol):
        return _triangular(A, cfg)
    return _track(A, cfg, scale)


def triangular_eigvecs(T: np.ndarray) -> np.ndarray:
    """Unit upper triangular eigenvector matrices of upper triangular ``T`` (..., n, n).

    Column ``i`` solves ``(T - T_ii I) v = 0`` with ``v_i = 1`` by
    back-substitution.  Entries are non-finite where ``T_kk = T_ii``.
    """
    T = np.asarray(T, dtype=float)
    n = T.shape[-1]
    d = np.diagonal(T, axis1=-2, axis2=-1)
    P = np.broadcast_to(np.eye(n), T.shape).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            for k in range(i - 1, -1, -1):
                acc = np.einsum("...j,...j->...", T[..., k, k + 1:i + 1], P[..., k + 1:i + 1, i])
                P[..., k, i] = -acc / (d[..., k] - d[..., i])
    return P


def _triangular(A: SampledField, cfg: VerdictConfig) -> SpectralProfile:
    P = triangular_eigvecs(A.values)
    with np.errstate(invalid="ignore"):
        cond = np.where(np.all(np.isfinite(P), axis=(1, 2)),
                        np.linalg.cond(np.nan_to_num(P)), np.inf)
    if cond.max() > cfg.cond_max:
        k = int(np.argmax(cond))
        reason = (f"diagonal entries meet at beta={float(A.grid[k])!r}; "
                  "no eigenbasis, input rows are used directly")
        return SpectralProfile(Structure.TRIANGULAR, _diag_curves(A), reason=reason, A=A)
    return SpectralProfile(Structure.TRIANGULAR, _diag_curves(A), P, cond, A=A)


def _unsupported(reason: str, A: SampledField) -> SpectralProfile:
    log.info("unsupported spectrum: %s", reason)
    return SpectralProfile(Structure.UNSUPPORTED, reason=reason, A=A)


def _min_gap(w: np.ndarray) -> float:
    if len(w) < 2:
        return np.inf
    return float(np.min(np.diff(np.sort(w))))


def _match(prev: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` minimising ``sum |prev[i] - new[perm[i]]|``."""
    cost = np.abs(prev[:, None] - new[None, :])
    _, cols = linear_sum_assignment(cost)
    return cols


def _track(A: SampledField, cfg: VerdictConfig, scale: float) -> SpectralProfile:
    V = A.values
    g = A.grid
    n_grid, n, _ = V.shape
    w, vecs = np.linalg.eig(V)
    if np.max(np.abs(w.imag)) > cfg.tol_recon * scale:
        k = int(np.argmax(np.max(np.abs(w.imag), axis=1)))
        return _unsupported(f"complex eigenvalues at beta={float(g[k])!r}", A)
    w = w.real
    vecs = vecs.real
    jump_tol = 0.1 * scale
    cluster_tol = 1e-6 * scale

    lam = np.empty((n_grid, n))
    P = np.empty((n_grid, n, n))
    order = np.argsort(w[0])
    lam[0] = w[0, order]
    P[0] = vecs[0][:, order]
    for k in range(1, n_grid):
        guess = lam[k - 1] if k == 1 else 2.0 * lam[k - 1] - lam[k - 2]
        perm = _match(guess, w[k])
        lam[k] = w[k, perm]
        if np.max(np.abs(lam[k] - lam[k - 1])) > jump_tol:
            return _unsupported(f"eigenvalue curve jumps near beta={float(g[k])!r}", A)
        Pk = vecs[k][:, perm]
        if _min_gap(lam[k]) <= cluster_tol:
            # repeated eigenvalue: the eigenbasis is not unique, keep the previous one
            Pk = P[k - 1].copy()
        else:
            dots = np.einsum("ij,ij->j", Pk, P[k - 1])
            Pk = Pk * np.where(dots < 0, -1.0, 1.0)
            cos = np.abs(dots) / (np.linalg.norm(Pk, axis=0) * np.linalg.norm(P[k - 1], axis=0))
            if np.min(cos) < 0.5:
                return _unsupported(f"eigenvectors turn abruptly near beta={float(g[k])!r}", A)
        P[k] = Pk

    cond = np.linalg.cond(P)
    if not np.all(np.isfinite(cond)) or cond.max() > cfg.cond_max:
        k = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        return _unsupported(
            f"eigenvector matrix condition {cond[k]:.3g} exceeds {cfg.cond_max:.3g} at "
            f"beta={float(g[k])!r}; an upper triangular form of A avoids the eigenbasis", A)
    recon = P @ (lam[:, :, None] * np.linalg.inv(P)) - V
    err = float(np.max(np.sum(np.abs(recon), axis=2)))
    if err > cfg.tol_recon * scale:
        k = int(np.argmax(np.max(np.sum(np.abs(recon), axis=2), axis=1)))
        return _unsupported(f"eigen-reconstruction error {err:.3g} at beta={float(g[k])!r}", A)

    curves = [SampledField(A.interval, lam[:, i], _curve_source(A, lam[:, i]))
              for i in range(n)]
    return SpectralProfile(Structure.TRACKED, curves, P, cond, recon_error=err, A=A)


def _curve_source(A: SampledField, values: np.ndarray):
    """Exact eigenvalue nearest the tracked curve at ``beta``."""
    if A.source is None:
        return None
    ref = SampledField(A.interval, values)
    src = A.source

    def curve(b: float) -> np.ndarray:
        w = np.linalg.eigvals(np.asarray(src(b), dtype=float)).real
        target = ref.eval_at(b)[0, 0]
        return np.array([[w[np.argmin(np.abs(w - target))]]])

    return curve


def _eigvecs_at(p: SpectralProfile, b: float) -> np.ndarray:
    """Eigenvector matrix at an off-grid ``beta``, ordered and signed like the grid."""
    A = p.A
    P_ref = SampledField(A.interval, p.P).eval_at(b)
    lam_ref = np.array([c.eval_at(b)[0, 0] for c in p.curves])
    w, vecs = np.linalg.eig(np.asarray(A.source(b), dtype=float))
    w, vecs = w.real, vecs.real
    if _min_gap(w) <= 1e-6 * _scale(A):
        return P_ref
    Pb = vecs[:, _match(lam_ref, w)]
    dots = np.einsum("ij,ij->j", Pb, P_ref)
    return Pb * np.where(dots < 0, -1.0, 1.0)


def transformed_inputs(p: SpectralProfile, B: SampledField) -> SampledField:
    """``P^{-1} B`` at every grid point; ``B`` itself when there is no eigenbasis.

    Raises
    ------
    SingularTransformError
        If an eigenvector matrix is numerically singular; ``beta`` names the point.
    """
    if p.structure == Structure.UNSUPPORTED:
        raise ValueError(f"no eigen-coordinates for an unsupported spectrum: {p.reason}")
    if not p.has_eigenbasis:
        return B
    if B.values.shape[0] != p.P.shape[0] or B.shape[0] != p.n:
        raise ValueError("B does not match the drift grid or dimension")
    eps = np.finfo(float).eps
    bad = np.flatnonzero(~(p.cond * eps < 1e-2))
    if bad.size:
        k = int(bad[0])
        raise SingularTransformError(float(B.grid[k]), float(p.cond[k]))
    vals = np.linalg.solve(p.P, B.values)
    src = None
    if p.A is not None and p.A.source is not None and B.source is not None:
        Bsrc = B.source
        if p.structure == Structure.TRIANGULAR:
            eigvecs = lambda b: triangular_eigvecs(np.asarray(p.A.source(b), dtype=float))
        else:
            eigvecs = lambda b: _eigvecs_at(p, b)
        src = lambda b: np.linalg.solve(eigvecs(b), np.asarray(Bsrc(b), dtype=float))
    return SampledField(B.interval, vals, src)
