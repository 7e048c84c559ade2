"""Piecewise-constant steering controls and their verification by simulation.

The final state from zero is linear in the segment values:
``x(T, beta_g) = sum_p Phi_g^{P-1-p} Gamma_g u_p`` with
``Phi = exp(A h)`` and ``Gamma = int_0^h exp(A s) ds B`` for the segment
length ``h = T / P``.  Both come from one exponential of the block matrix
``[[A, B], [0, 0]] h``.  Stacking over the grid gives the reachability
operator ``G``; a regularised least-squares fit of ``G u`` to the target
gives the schedule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .field import SampledField
from .system import EnsembleSystem

__all__ = [
    "ControlSchedule", "SteeringReport", "reachability_operator", "free_evolution",
    "synthesize", "simulate", "default_steps", "RIDGE_SCALE",
]

RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class ControlSchedule:
    """``u(t) = values[p]`` on the ``p``-th of ``P`` equal segments of ``[0, T]``."""

    T: float
    values: np.ndarray     # (P, m)

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float)).copy()
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if vals.shape[0] < 1:
            raise ValueError("a schedule needs at least one segment")
        if not np.all(np.isfinite(vals)):
            raise ValueError("schedule values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "values", vals)

    @property
    def P(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def segment(self) -> float:
        return self.T / self.P

    def __call__(self, t: float) -> np.ndarray:
        p = min(max(int(t // self.segment), 0), self.P - 1)
        return self.values[p]

    def energy(self) -> float:
        return float(np.sum(self.values ** 2) * self.segment)

    def to_dict(self) -> dict:
        return {"T": self.T, "P": self.P, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSchedule":
        sched = cls(d["T"], d["values"])
        if "P" in d and d["P"] != sched.P:
            raise ValueError(f"P={d['P']} but {sched.P} rows of values")
        return sched


@dataclass
class SteeringReport:
    predicted_error: float
    simulated_error: float
    epsilon: Optional[float]
    energy: float
    converged: Optional[bool]
    residual: float            # l2 norm of G u - r over the grid
    ridge: float
    n_grid: int
    steps_per_segment: int

    def __post_init__(self):
        if self.predicted_error < 0 or self.simulated_error < 0:
            raise ValueError("errors are non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _stack_fields(sys: EnsembleSystem, n_grid: Optional[int]) -> EnsembleSystem:
    if n_grid is None or n_grid == sys.n_grid:
        return sys
    return sys.resample(n_grid)


def _segment_maps(A: np.ndarray, B: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``exp(A h)`` and ``int_0^h exp(A s) ds B`` for a stack of (A, B)."""
    g, n, m = B.shape
    M = np.zeros((g, n + m, n + m))
    M[:, :n, :n] = A * h
    M[:, :n, n:] = B * h
    E = expm(M)
    return E[:, :n, :n], E[:, :n, n:]


def reachability_operator(sys: EnsembleSystem, T: float, P: int,
                          grid: Optional[int] = None) -> np.ndarray:
    """Matrix ``G`` of shape ``(n_grid * n, P * m)`` mapping segment values to ``x(T)``.

    Row ``g * n + i`` is state ``i`` at grid point ``g``; column ``p * m + j``
    is input ``j`` on segment ``p``.
    """
    if not T > 0 or P < 1:
        raise ValueError("need T > 0 and P >= 1")
    s = _stack_fields(sys, grid)
    A, B = s.A.values, s.B.values
    g, n, m = B.shape
    Phi, Gamma = _segment_maps(A, B, T / P)
    G = np.empty((g, n, P, m))
    blk = Gamma
    for p in range(P - 1, -1, -1):
        G[:, :, p, :] = blk
        if p:
            blk = Phi @ blk
    return G.reshape(g * n, P * m)


def free_evolution(sys: EnsembleSystem, x0: SampledField, T: float) -> np.ndarray:
    """``exp(A(beta) T) x0(beta)`` at every grid point, shape ``(n_grid, n)``."""
    return (expm(sys.A.values * T) @ x0.values)[:, :, 0]


def _solve(G: np.ndarray, r: np.ndarray, ridge: float) -> np.ndarray:
    """Minimiser of ``|G u - r|^2 + ridge^2 |u|^2`` through the SVD of ``G``."""
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(G.shape[1])
    if ridge > 0:
        filt = s / (s ** 2 + ridge ** 2)
    else:
        keep = s > s[0] * max(G.shape) * np.finfo(float).eps
        filt = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return Vt.T @ (filt * (U.T @ r))


def default_steps(T: float, P: int, per_unit_time: int = 100) -> int:
    return max(4, math.ceil(per_unit_time * T / P))


def synthesize(sys: EnsembleSystem, x0: SampledField, xF: SampledField, T: float, P: int,
               ridge: Optional[float] = None, epsilon: Optional[float] = None,
               steps_per_segment: Optional[int] = None) -> tuple[ControlSchedule, SteeringReport]:
    """Least-squares schedule steering ``x0`` towards ``xF`` in time ``T``.

    ``ridge`` defaults to ``1e-10 * |G|_2``.  The report gives the uniform
    error predicted by ``G`` and the one found by simulating the schedule.
    """
    if x0.values.shape != (sys.n_grid, sys.n, 1) or xF.values.shape != x0.values.shape:
        raise ValueError("x0 and xF must be n-vector fields on the system grid")
    G = reachability_operator(sys, T, P)
    r = (xF.values[:, :, 0] - free_evolution(sys, x0, T)).reshape(-1)
    if ridge is None:
        ridge = RIDGE_SCALE * (np.linalg.norm(G, 2) if G.size else 0.0)
    u = _solve(G, r, ridge)
    resid = G @ u - r
    sched = ControlSchedule(T, u.reshape(P, sys.m))
    steps = steps_per_segment or default_steps(T, P)
    xT = simulate(sys, x0, sched, steps)
    sim_err = float(np.max(np.abs(xT.values - xF.values)))
    report = SteeringReport(
        predicted_error=float(np.max(np.abs(resid))) if resid.size else 0.0,
        simulated_error=sim_err,
        epsilon=epsilon,
        energy=sched.energy(),
        converged=None if epsilon is None else bool(sim_err <= epsilon),
        residual=float(np.linalg.norm(resid)),
        ridge=float(ridge),
        n_grid=sys.n_grid,
        steps_per_segment=steps,
    )
    return sched, report


def simulate(sys: EnsembleSystem, x0: SampledField, schedule: ControlSchedule,
             steps_per_segment: Optional[int] = None) -> SampledField:
    """Classical RK4 for every grid point at once; returns ``x(T, .)``."""
    steps = steps_per_segment or default_steps(schedule.T, schedule.P)
    if steps < 1:
        raise ValueError("steps_per_segment must be >= 1")
    if schedule.m != sys.m:
        raise ValueError(f"schedule has {schedule.m} inputs, system has {sys.m}")
    A = sys.A.values
    x = x0.values[:, :, 0].copy()
    dt = schedule.segment / steps
    for u in schedule.values:
        drive = sys.B.values @ u        # constant over the segment
        f = lambda y: np.einsum("gij,gj->gi", A, y) + drive
        for _ in range(steps):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return SampledField(x0.interval, x[:, :, None])
