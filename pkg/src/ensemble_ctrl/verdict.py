"""Verdicts and the evidence attached to them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

__all__ = [
    "Status", "Reason", "Evidence", "GramianSummary", "Verdict",
    "numerical_rank", "FAILURE_REASONS",
]


class Status(str, Enum):
    CONTROLLABLE = "Controllable"
    NOT_CONTROLLABLE = "NotControllable"
    INCONCLUSIVE = "Inconclusive"


class Reason(str, Enum):
    NON_INJECTIVE_SINGLE_INPUT = "NonInjectiveSingleInput"
    VANISHING_INPUT = "VanishingInput"
    GRAMIAN_RANK_DEFICIENT = "GramianRankDeficient"
    DEGENERATE_DRIFT = "DegenerateDrift"
    GRID_UNSTABLE = "GridUnstable"
    KALMAN_RANK_DEFICIENT = "KalmanRankDeficient"
    UNSUPPORTED_SPECTRUM = "UnsupportedSpectrum"


FAILURE_REASONS = frozenset({
    Reason.NON_INJECTIVE_SINGLE_INPUT, Reason.VANISHING_INPUT,
    Reason.GRAMIAN_RANK_DEFICIENT, Reason.DEGENERATE_DRIFT,
    Reason.KALMAN_RANK_DEFICIENT,
})


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, list):
        return [_plain(v) for v in x]
    return x


@dataclass
class Evidence:
    reason: Reason
    detail: str = ""
    eta: Any = None          # float, or list of floats for tuples / intervals
    kappa: Any = None        # int, or list per channel
    rank: Optional[int] = None
    required: Optional[int] = None
    beta: Any = None         # parameter point(s) involved
    channel: Optional[int] = None
    matrix: Optional[list] = None

    def to_dict(self) -> dict:
        d = {k: _plain(v) for k, v in asdict(self).items()}
        d["reason"] = self.reason.value
        return {k: v for k, v in d.items() if v is not None and v != ""}

    @classmethod
    def from_dict(cls, d: dict) -> "Evidence":
        d = dict(d)
        d["reason"] = Reason(d["reason"])
        return cls(**d)


@dataclass
class GramianSummary:
    eta: Any                 # float, or list for a tuple
    kappa: Any
    rank: int
    sigma_min: float         # smallest retained singular value (0 if rank 0)
    channel: Optional[int] = None
    points: Optional[list] = None

    def to_dict(self) -> dict:
        d = {k: _plain(v) for k, v in asdict(self).items()}
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "GramianSummary":
        return cls(**d)


@dataclass
class Verdict:
    status: Status
    evidence: list[Evidence] = field(default_factory=list)
    gramians: list[GramianSummary] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    sampling: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status == Status.NOT_CONTROLLABLE and not self.evidence:
            raise ValueError("a NotControllable verdict needs evidence")
        if self.status == Status.CONTROLLABLE and any(e.reason in FAILURE_REASONS for e in self.evidence):
            raise ValueError("a Controllable verdict cannot carry failure evidence")

    @property
    def reasons(self) -> list[Reason]:
        return [e.reason for e in self.evidence]

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "evidence": [e.to_dict() for e in self.evidence],
            "gramians": [g.to_dict() for g in self.gramians],
            "config": _plain(self.config),
            "notes": list(self.notes),
            "sampling": _plain(self.sampling),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            status=Status(d["status"]),
            evidence=[Evidence.from_dict(e) for e in d.get("evidence", [])],
            gramians=[GramianSummary.from_dict(g) for g in d.get("gramians", [])],
            config=d.get("config", {}),
            notes=list(d.get("notes", [])),
            sampling=d.get("sampling", {}),
        )


def numerical_rank(M, tol_rank: float = 1e-8) -> tuple[int, np.ndarray]:
    """Rank as the count of singular values above ``tol_rank * sigma_max``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0, np.empty(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0, s
    return int(np.sum(s > tol_rank * s[0])), s
