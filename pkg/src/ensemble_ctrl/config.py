"""Numerical settings shared by the verdict engines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

__all__ = ["VerdictConfig"]


@dataclass(frozen=True)
class VerdictConfig:
    n_grid: int = 201
    n_eta: int = 128               # eta samples for scalar drifts
    n_eta_channel: int = 32        # per-channel samples for the product grid
    n_tuples: int = 4096           # Latin hypercube size when n > 3
    tol_mono: float = 1e-9         # relative to the drift's value range
    tol_merge: Optional[float] = None  # beta distance; None -> 2 grid spacings
    tol_val: float = 1e-8          # relative to the drift's value range
    tol_rank: float = 1e-8         # relative to the largest singular value
    tol_vanish: float = 1e-8       # relative to the input's uniform norm
    cond_max: float = 1e8
    tol_recon: float = 1e-8        # relative to ||A||_inf
    seed: int = 0
    check_refinement: bool = True  # repeat on the doubled grid
    max_dim: int = 8

    def merge_tol(self, spacing: float) -> float:
        return self.tol_merge if self.tol_merge is not None else 2.0 * spacing

    def refined(self) -> "VerdictConfig":
        """Settings for the grid-doubling rerun: 201 -> 401 points."""
        return replace(self, n_grid=2 * (self.n_grid - 1) + 1, check_refinement=False)

    def with_overrides(self, **kw) -> "VerdictConfig":
        known = {f.name for f in fields(self)}
        bad = set(kw) - known
        if bad:
            raise KeyError(f"unknown settings: {sorted(bad)}")
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def as_dict(self) -> dict:
        return asdict(self)
