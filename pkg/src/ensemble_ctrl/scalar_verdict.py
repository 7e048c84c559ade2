"""Controllability of scalar ensembles  dx/dt = a(beta) x + sum_i b_i(beta) u_i.

With one input the ensemble is controllable exactly when ``a`` is injective
and ``b`` never vanishes.  With ``m`` inputs the test is the ensemble
controllability Gramian: for every drift value ``eta`` the matrix ``D(eta)``
whose rows are the input rows at the preimage points of ``eta`` must have
full row rank ``kappa(eta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .branch import (
    BranchDecomposition, critical_images, decompose, eta_strata, max_overlap,
    preimage, stratified_samples,
)
from .config import VerdictConfig
from .field import SampledField
from .verdict import (
    Evidence, GramianSummary, Reason, Status, Verdict, numerical_rank,
)

__all__ = [
    "EnsembleGramian", "single_input_verdict", "build_gramian",
    "multi_input_verdict", "vanishing_rows", "confirm_on_refined_grid",
    "det_sign_changes",
]

log = logging.getLogger(__name__)

MAX_EVIDENCE = 20


@dataclass(frozen=True)
class EnsembleGramian:
    eta: float
    matrix: np.ndarray          # (kappa, m)
    points: tuple[float, ...]
    rank: int
    singular_values: np.ndarray

    @property
    def kappa(self) -> int:
        return len(self.points)

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[self.rank - 1]) if self.rank else 0.0

    def summary(self, channel: Optional[int] = None) -> GramianSummary:
        return GramianSummary(self.eta, self.kappa, self.rank, self.sigma_min,
                              channel, list(self.points))


# ----------------------------------------------------------------------------
# helpers shared with the multidimensional engine
# ----------------------------------------------------------------------------

def vanishing_rows(B: SampledField, tol_vanish: float) -> list[tuple[int, float]]:
    """Rows of ``B`` that vanish somewhere on the grid, with a witness beta.

    A row vanishes at a grid point when its max-abs entry is at most
    ``tol_vanish`` times the row's uniform norm.  A single-column row that
    changes sign between neighbouring grid points vanishes in between.
    """
    g = B.grid
    out = []
    for i in range(B.shape[0]):
        row = B.values[:, i, :]
        size = np.max(np.abs(row), axis=1)
        ref = float(size.max())
        small = size <= tol_vanish * ref
        if small.any():
            out.append((i, float(g[np.argmax(small)])))
            continue
        if row.shape[1] == 1:
            r = row[:, 0]
            flip = np.flatnonzero(r[:-1] * r[1:] < 0)
            if flip.size:
                k = flip[0]
                t = r[k] / (r[k] - r[k + 1])
                out.append((i, float(g[k] + t * (g[k + 1] - g[k]))))
    return out


def det_sign_changes(family: list[tuple[float, np.ndarray]]) -> list[tuple[float, float]]:
    """Parameter intervals over which a continuous family of square
    matrices changes determinant sign, hence passes through a singular one."""
    out = []
    prev = None
    for t, M in family:
        if M.shape[0] != M.shape[1] or M.shape[0] == 0:
            prev = None
            continue
        sign = np.sign(np.linalg.det(M))
        if prev is not None and sign != 0 and prev[1] != 0 and sign != prev[1]:
            out.append((prev[0], t))
        prev = (t, sign)
    return out


def confirm_on_refined_grid(verdict: Verdict, rerun: Optional[Callable[[], Verdict]],
                            n_grid: int) -> Verdict:
    """Repeat the decision on the doubled grid; disagreement is Inconclusive."""
    if rerun is None:
        verdict.notes.append("grid-doubling check skipped: fields have no exact source")
        return verdict
    fine = rerun()
    n_fine = 2 * (n_grid - 1) + 1
    verdict.sampling["refined_grid"] = {"n_grid": n_fine, "status": fine.status.value}
    if fine.status == verdict.status:
        return verdict
    ev = [e for e in verdict.evidence]
    ev.append(Evidence(
        Reason.GRID_UNSTABLE,
        detail=f"grid {n_grid}: {verdict.status.value}; grid {n_fine}: {fine.status.value}",
    ))
    return Verdict(Status.INCONCLUSIVE, ev, verdict.gramians, verdict.config,
                   verdict.notes, verdict.sampling)


def _can_refine(*fields: SampledField) -> bool:
    return all(f.source is not None for f in fields)


def _fine(f: SampledField) -> SampledField:
    return f.resample(2 * (f.n_grid - 1) + 1)


# ----------------------------------------------------------------------------
# single input
# ----------------------------------------------------------------------------

def single_input_verdict(a: SampledField, b: SampledField,
                         config: Optional[VerdictConfig] = None) -> Verdict:
    """Injective drift and nowhere-vanishing input, checked on the grid."""
    cfg = config or VerdictConfig()
    v = _single_once(a, b, cfg)
    if cfg.check_refinement:
        rerun = None
        if _can_refine(a, b):
            rerun = lambda: _single_once(_fine(a), _fine(b), cfg.refined())
        v = confirm_on_refined_grid(v, rerun, a.n_grid)
    return v


def _single_once(a: SampledField, b: SampledField, cfg: VerdictConfig) -> Verdict:
    d = decompose(a, cfg.tol_mono)
    ev = []
    if d.degenerate:
        ev.append(Evidence(Reason.DEGENERATE_DRIFT, "drift is constant on a subinterval",
                           beta=[r.as_list() for r in d.flat_runs]))
    elif d.n_branches > 1:
        ev.append(Evidence(
            Reason.NON_INJECTIVE_SINGLE_INPUT,
            f"drift has {d.n_branches} injective branches",
            beta=[br.as_list() for br in d.branches],
        ))
    for _, beta in vanishing_rows(b, cfg.tol_vanish):
        ev.append(Evidence(Reason.VANISHING_INPUT, "input vanishes", beta=beta))
    status = Status.NOT_CONTROLLABLE if ev else Status.CONTROLLABLE
    sampling = {"n_grid": a.n_grid, "branches": [br.as_list() for br in d.branches]}
    return Verdict(status, ev, config=_snapshot(cfg, a), sampling=sampling)


def _snapshot(cfg: VerdictConfig, a: SampledField) -> dict:
    snap = cfg.as_dict()
    snap["n_grid"] = a.n_grid
    snap["tol_merge"] = cfg.merge_tol(a.spacing)
    return snap


# ----------------------------------------------------------------------------
# multiple inputs
# ----------------------------------------------------------------------------

def build_gramian(a: SampledField, B_rows: SampledField, eta: float,
                  decomposition: Optional[BranchDecomposition] = None,
                  config: Optional[VerdictConfig] = None) -> EnsembleGramian:
    """``D(eta)``: input rows at the preimage points of ``eta``, ascending in beta."""
    cfg = config or VerdictConfig()
    d = decomposition or decompose(a, cfg.tol_mono)
    pre = preimage(d, a, eta, cfg.tol_val, cfg.merge_tol(a.spacing))
    m = B_rows.shape[1]
    D = np.array([B_rows.evaluate(b).reshape(m) for b in pre.points]).reshape(pre.kappa, m)
    rank, s = numerical_rank(D, cfg.tol_rank)
    return EnsembleGramian(float(eta), D, pre.points, rank, s)


def multi_input_verdict(a: SampledField, B_rows: SampledField, n_eta: Optional[int] = None,
                        config: Optional[VerdictConfig] = None) -> Verdict:
    """Rank test of ``D(eta)`` over stratified samples of the drift range.

    ``B_rows`` is a ``1 x m`` field.  The drift range is cut at the images
    of branch endpoints; each piece (minus a guard band around the cuts)
    is sampled at bin midpoints, and every cut value is checked as well.
    """
    cfg = config or VerdictConfig()
    if n_eta is not None:
        cfg = cfg.with_overrides(n_eta=n_eta)
    v = _multi_once(a, B_rows, cfg)
    if cfg.check_refinement:
        rerun = None
        if _can_refine(a, B_rows):
            rerun = lambda: _multi_once(_fine(a), _fine(B_rows), cfg.refined())
        v = confirm_on_refined_grid(v, rerun, a.n_grid)
    return v


def _multi_once(a: SampledField, B_rows: SampledField, cfg: VerdictConfig) -> Verdict:
    m = B_rows.shape[1]
    tol_merge = cfg.merge_tol(a.spacing)
    d = decompose(a, cfg.tol_mono)
    snap = _snapshot(cfg, a)
    if d.degenerate:
        ev = Evidence(Reason.DEGENERATE_DRIFT, "drift is constant on a subinterval",
                      beta=[r.as_list() for r in d.flat_runs])
        return Verdict(Status.NOT_CONTROLLABLE, [ev], config=snap)

    ev = []
    for _, beta in vanishing_rows(B_rows, cfg.tol_vanish):
        ev.append(Evidence(Reason.VANISHING_INPUT, "input row vanishes", beta=beta))
    depth, witness = max_overlap(d, a)
    if depth > m:
        ev.append(Evidence(
            Reason.GRAMIAN_RANK_DEFICIENT,
            f"{depth} branches share drift values but only {m} inputs",
            eta=witness, kappa=depth, rank=m, required=depth,
        ))

    strata = eta_strata(d, a, tol_merge)
    samples = stratified_samples(strata, cfg.n_eta)
    crit = critical_images(d, a)
    gramians = []
    failures = 0
    by_stratum: dict[int, list] = {}
    for eta in sorted(set(samples.tolist()) | set(crit)):
        G = build_gramian(a, B_rows, eta, d, cfg)
        gramians.append(G.summary())
        if G.rank < G.kappa:
            failures += 1
            if failures <= MAX_EVIDENCE:
                ev.append(Evidence(
                    Reason.GRAMIAN_RANK_DEFICIENT, "rank D(eta) < kappa(eta)",
                    eta=G.eta, kappa=G.kappa, rank=G.rank, required=G.kappa,
                    beta=list(G.points), matrix=G.matrix.tolist(),
                ))
        k = next((i for i, s in enumerate(strata) if s.lower < eta < s.upper), None)
        if k is not None:
            by_stratum.setdefault(k, []).append((eta, G.matrix))
    for fam in by_stratum.values():
        for lo, hi in det_sign_changes(fam):
            failures += 1
            ev.append(Evidence(
                Reason.GRAMIAN_RANK_DEFICIENT,
                "det D(eta) changes sign, so D is singular inside this eta interval",
                eta=[lo, hi],
            ))
    if failures > MAX_EVIDENCE:
        log.info("%d rank-deficient eta samples; %d recorded", failures, MAX_EVIDENCE)
    status = Status.NOT_CONTROLLABLE if ev else Status.CONTROLLABLE
    sampling = {
        "n_grid": a.n_grid,
        "n_eta": int(len(samples)),
        "strata": [s.as_list() for s in strata],
        "critical_images": crit,
        "branches": [br.as_list() for br in d.branches],
        "rank_failures": failures,
    }
    return Verdict(status, ev, gramians, snap, sampling=sampling)
