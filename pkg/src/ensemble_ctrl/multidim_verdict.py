"""Controllability of ensembles  dx/dt = A(beta) x + B(beta) u  with x in R^n.

In eigen-coordinates every state is a scalar channel with drift
``lambda_i`` and input row ``b~_i``.  Upper triangular drifts whose
diagonal entries meet have no eigenbasis; their channels use the rows of
``B`` directly.  For a
tuple ``(eta_1, ..., eta_n)`` of eigenvalue values the reparameterized
system is

    diag(eta_1 I_{kappa_1}, ..., eta_n I_{kappa_n}),   stacked rows D_i(eta_i),

and the ensemble is controllable when every such system passes the Kalman
test.  The block matrix is diagonal, so its Kalman rank splits over groups
of equal ``eta_i``: a tuple fails only when one channel's ``D_i`` loses rank
or when the rows of channels sharing a common value are dependent.  Tuples
are therefore sampled on the product of per-channel candidates (a Latin
hypercube above three channels) together with "coincidence" tuples that
set every channel whose range holds ``s`` to the same ``s``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .branch import (
    BranchDecomposition, critical_images, decompose, eta_strata, guard_bands,
    split_range, stratified_samples,
)
from .config import VerdictConfig
from .field import CompactInterval, SampledField
from .scalar_verdict import (
    MAX_EVIDENCE, EnsembleGramian, build_gramian, confirm_on_refined_grid,
    det_sign_changes, multi_input_verdict, single_input_verdict, vanishing_rows,
)
from .spectral import SpectralProfile, Structure, classify, transformed_inputs
from .verdict import Evidence, GramianSummary, Reason, Status, Verdict, numerical_rank

__all__ = [
    "kalman_rank", "ReparameterizedSystem", "KalmanCertificate",
    "build_reparameterized", "ensemble_verdict", "system_verdict",
]

log = logging.getLogger(__name__)


def kalman_rank(A, B, tol_rank: float = 1e-8) -> int:
    """Numerical rank of ``[B | AB | ... | A^{N-1} B]``.

    ``A`` is first replaced by ``(A - cI) / s`` with ``c`` the mean
    eigenvalue and ``s`` the spectral norm of the shifted matrix.  The
    controllable subspace does not change and the powers stay bounded.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    N = A.shape[0]
    if A.shape != (N, N) or B.shape[0] != N:
        raise ValueError(f"inconsistent shapes {A.shape} and {B.shape}")
    if N == 0:
        return 0
    As = A - (np.trace(A) / N) * np.eye(N)
    s = np.linalg.norm(As, 2)
    if s > 0:
        As = As / s
    blocks = [B]
    for _ in range(N - 1):
        blocks.append(As @ blocks[-1])
    return numerical_rank(np.hstack(blocks), tol_rank)[0]


@dataclass(frozen=True)
class ReparameterizedSystem:
    """Block system at an eigenvalue tuple; ``None`` entries leave a channel out."""

    eta: tuple
    kappa: tuple[int, ...]
    A: np.ndarray        # (N, N) diagonal
    B: np.ndarray        # (N, m) stacked D_i(eta_i)
    points: tuple        # preimage points per channel

    @property
    def N(self) -> int:
        return self.A.shape[0]


@dataclass
class KalmanCertificate:
    eta: tuple
    rank: int
    required: int

    def __post_init__(self):
        if self.rank > self.required:
            raise ValueError("Kalman rank cannot exceed the state dimension")

    @property
    def passed(self) -> bool:
        return self.rank == self.required

    def to_dict(self) -> dict:
        return {"eta": list(self.eta), "rank": self.rank, "required": self.required}


# ----------------------------------------------------------------------------
# channels
# ----------------------------------------------------------------------------

@dataclass
class _Channel:
    index: int
    curve: SampledField
    rows: SampledField
    decomposition: BranchDecomposition
    cfg: VerdictConfig
    cache: dict = field(default_factory=dict)

    @property
    def range(self) -> CompactInterval:
        return self.decomposition.range[0]

    @property
    def tol(self) -> float:
        return self.cfg.tol_val * max(self.decomposition.scale, 1.0)

    def holds(self, s: float) -> bool:
        return self.range.contains(s, self.tol)

    def gramian(self, s: float) -> EnsembleGramian:
        s = float(s)
        G = self.cache.get(s)
        if G is None:
            G = build_gramian(self.curve, self.rows, s, self.decomposition, self.cfg)
            self.cache[s] = G
        return G

    def strata(self) -> list[CompactInterval]:
        return eta_strata(self.decomposition, self.curve, self.cfg.merge_tol(self.curve.spacing))

    def critical(self) -> list[float]:
        return critical_images(self.decomposition, self.curve)


def _channels(curves: Sequence[SampledField], Bt: SampledField, cfg: VerdictConfig) -> list[_Channel]:
    return [_Channel(i, c, Bt.row(i), decompose(c, cfg.tol_mono), cfg) for i, c in enumerate(curves)]


def _stack(chs: list[_Channel], values: Sequence[Optional[float]]) -> ReparameterizedSystem:
    Ds, diag, kap, pts = [], [], [], []
    for ch, s in zip(chs, values):
        if s is None:
            kap.append(0)
            pts.append(())
            continue
        G = ch.gramian(s)
        Ds.append(G.matrix)
        diag.extend([float(s)] * G.kappa)
        kap.append(G.kappa)
        pts.append(G.points)
    m = chs[0].rows.shape[1]
    D = np.vstack(Ds) if Ds else np.empty((0, m))
    return ReparameterizedSystem(tuple(values), tuple(kap), np.diag(diag), D, tuple(pts))


def build_reparameterized(profile: SpectralProfile, Btilde: SampledField, eta_tuple: Sequence,
                          config: Optional[VerdictConfig] = None) -> ReparameterizedSystem:
    """Reparameterized block system at ``eta_tuple`` (one value per curve, or None).

    Raises
    ------
    DegenerateDriftError
        If a curve is constant on a subinterval.
    OutOfRangeError
        If some ``eta_i`` lies outside ``lambda_i(K)``.
    """
    cfg = config or VerdictConfig()
    if len(eta_tuple) != profile.n:
        raise ValueError(f"need {profile.n} values, got {len(eta_tuple)}")
    return _stack(_channels(profile.curves, Btilde, cfg), list(eta_tuple))


# ----------------------------------------------------------------------------
# verdict
# ----------------------------------------------------------------------------

def ensemble_verdict(A: SampledField, B: SampledField,
                     config: Optional[VerdictConfig] = None) -> Verdict:
    """Uniform ensemble controllability of ``dx/dt = A(beta) x + B(beta) u``.

    Jordan-block drifts with an injective eigenvalue need ``rank B = n``
    everywhere.  All other supported drifts go through the eigenvalue
    channels and the reparameterized Kalman test.  An unsupported spectrum
    gives Inconclusive.
    """
    cfg = config or VerdictConfig()
    n, n2 = A.shape
    if n != n2:
        raise ValueError(f"drift must be square, got {A.shape}")
    if B.shape[0] != n or B.values.shape[0] != A.values.shape[0] or B.interval != A.interval:
        raise ValueError("B must have n rows and share the drift grid")
    if n > cfg.max_dim:
        raise ValueError(f"state dimension {n} exceeds the supported maximum {cfg.max_dim}")
    v = _ensemble_once(A, B, cfg)
    if cfg.check_refinement and v.status != Status.INCONCLUSIVE:
        rerun = None
        if A.source is not None and B.source is not None:
            fine = lambda f: f.resample(2 * (f.n_grid - 1) + 1)
            rerun = lambda: _ensemble_once(fine(A), fine(B), cfg.refined())
        v = confirm_on_refined_grid(v, rerun, A.n_grid)
    return v


def system_verdict(A: SampledField, B: SampledField,
                   config: Optional[VerdictConfig] = None) -> Verdict:
    """Dispatch on dimension: scalar single input, scalar multi input, or n >= 2."""
    if A.shape == (1, 1):
        if B.shape[1] == 1:
            return single_input_verdict(A, B, config)
        return multi_input_verdict(A, B, config=config)
    return ensemble_verdict(A, B, config)


def _snapshot(cfg: VerdictConfig, A: SampledField) -> dict:
    snap = cfg.as_dict()
    snap["n_grid"] = A.n_grid
    snap["tol_merge"] = cfg.merge_tol(A.spacing)
    return snap


def _ensemble_once(A: SampledField, B: SampledField, cfg: VerdictConfig) -> Verdict:
    snap = _snapshot(cfg, A)
    profile = classify(A, cfg)
    sampling = {"n_grid": A.n_grid, "spectrum": profile.summary()}
    if not profile.supported:
        ev = Evidence(Reason.UNSUPPORTED_SPECTRUM, profile.reason)
        return Verdict(Status.INCONCLUSIVE, [ev], config=snap, sampling=sampling)
    # inputs in eigen-coordinates when an eigenbasis exists, B itself otherwise
    Bt = transformed_inputs(profile, B)
    vanish = vanishing_rows(Bt, cfg.tol_vanish)
    if vanish:
        where = "of B" if Bt is B else "of the input in eigen-coordinates"
        ev = [Evidence(Reason.VANISHING_INPUT, f"row {i} {where} vanishes", beta=b, channel=i)
              for i, b in vanish]
        return Verdict(Status.NOT_CONTROLLABLE, ev, config=snap, sampling=sampling)

    notes = []
    if profile.structure == Structure.JORDAN:
        d = decompose(profile.curves[0], cfg.tol_mono)
        if d.degenerate:
            ev = Evidence(Reason.DEGENERATE_DRIFT, "eigenvalue is constant on a subinterval",
                          beta=[r.as_list() for r in d.flat_runs], channel=0)
            return Verdict(Status.NOT_CONTROLLABLE, [ev], config=snap, sampling=sampling)
        if d.n_branches == 1:
            return _jordan_verdict(A, B, cfg, snap, sampling)
        notes.append("eigenvalue of the Jordan block is not injective; using the triangular pathway")
    elif profile.structure == Structure.TRIANGULAR and not profile.has_eigenbasis:
        notes.append(profile.reason)

    v = channel_verdict(profile.curves, Bt, cfg)
    v.config = snap
    v.notes = notes + v.notes
    v.sampling = {**sampling, **v.sampling}
    return v


def _jordan_verdict(A: SampledField, B: SampledField, cfg: VerdictConfig,
                    snap: dict, sampling: dict) -> Verdict:
    """Jordan block with injective eigenvalue: ``rank B(beta) = n`` on K."""
    n, m = B.shape
    g = B.grid
    ev, gram = [], []
    family = []
    for k in range(B.n_grid):
        r, s = numerical_rank(B.values[k], cfg.tol_rank)
        gram.append(GramianSummary(float(A.values[k, 0, 0]), n, r, float(s[r - 1]) if r else 0.0,
                                   points=[float(g[k])]))
        if r < n and len(ev) < MAX_EVIDENCE:
            ev.append(Evidence(Reason.KALMAN_RANK_DEFICIENT, "rank B(beta) < n",
                               rank=r, required=n, beta=float(g[k]),
                               matrix=B.values[k].tolist()))
        family.append((float(g[k]), B.values[k]))
    for lo, hi in det_sign_changes(family):
        ev.append(Evidence(Reason.KALMAN_RANK_DEFICIENT,
                           "det B(beta) changes sign, so B is singular in between", beta=[lo, hi]))
    status = Status.NOT_CONTROLLABLE if ev else Status.CONTROLLABLE
    return Verdict(status, ev, gram, snap, sampling={**sampling, "pathway": "jordan_rank"})


def _candidates(chs: list[_Channel], cfg: VerdictConfig) -> tuple[list[np.ndarray], int, str]:
    """Per-channel sample values and the number of tuples they represent."""
    n = len(chs)
    if n <= 3:
        own = []
        for ch in chs:
            vals = set(stratified_samples(ch.strata(), cfg.n_eta_channel).tolist())
            vals.update(ch.critical())
            own.append(np.array(sorted(vals)))
        return own, int(np.prod([len(o) for o in own])), "product"
    u = qmc.LatinHypercube(d=n, seed=cfg.seed).random(cfg.n_tuples)
    own = []
    for i, ch in enumerate(chs):
        own.append(_strata_quantile(ch.strata(), u[:, i]) if ch.strata()
                   else np.full(len(u), ch.range.lower))
    return own, cfg.n_tuples, "latin_hypercube"


def _strata_quantile(strata: list[CompactInterval], u: np.ndarray) -> np.ndarray:
    """Map uniform ``u`` onto the union of ``strata`` by length."""
    lengths = np.array([s.length for s in strata])
    edges = np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum()
    k = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(strata) - 1)
    lo = np.array([s.lower for s in strata])[k]
    t = (u - edges[k]) / (edges[k + 1] - edges[k])
    return lo + t * lengths[k]


def _clusters(own: list[np.ndarray], tol: float) -> list[dict[int, float]]:
    """Groups of candidate values from two or more channels lying within ``tol``."""
    pairs = sorted((float(v), i) for i, vals in enumerate(own) for v in vals)
    out, cur = [], []
    for v, i in pairs:
        if cur and v - cur[-1][0] > tol:
            out.append(cur)
            cur = []
        cur.append((v, i))
    if cur:
        out.append(cur)
    groups = []
    for c in out:
        members: dict[int, float] = {}
        for v, i in c:
            members.setdefault(i, v)
        if len(members) > 1:
            groups.append(members)
    return groups


def channel_verdict(curves: Sequence[SampledField], Bt: SampledField,
                    config: Optional[VerdictConfig] = None) -> Verdict:
    """Reparameterized Kalman test for scalar channels ``(lambda_i, row i of Bt)``.

    Sampling (one pass, no grid doubling): per-channel candidates combined
    as a product grid or Latin hypercube, cross-channel coincidences among
    them, and coincidence tuples over the overlaps of the channel ranges.
    """
    cfg = config or VerdictConfig()
    chs = _channels(curves, Bt, cfg)
    m = Bt.shape[1]
    for ch in chs:
        if ch.decomposition.degenerate:
            ev = Evidence(Reason.DEGENERATE_DRIFT,
                          f"eigenvalue curve {ch.index} is constant on a subinterval",
                          beta=[r.as_list() for r in ch.decomposition.flat_runs], channel=ch.index)
            return Verdict(Status.NOT_CONTROLLABLE, [ev])

    ev: list[Evidence] = []
    gram: list[GramianSummary] = []
    failures = 0

    def record(ev_item: Evidence):
        nonlocal failures
        failures += 1
        if failures <= MAX_EVIDENCE:
            ev.append(ev_item)

    # single-channel blocks of every sampled tuple
    own, n_tuples, design = _candidates(chs, cfg)
    for ch, vals in zip(chs, own):
        for s in np.unique(vals):
            G = ch.gramian(s)
            gram.append(G.summary(channel=ch.index))
            if G.rank < G.kappa:
                record(Evidence(Reason.KALMAN_RANK_DEFICIENT,
                                f"channel {ch.index}: rank D(eta) < kappa(eta)",
                                eta=G.eta, kappa=G.kappa, rank=G.rank, required=G.kappa,
                                beta=list(G.points), channel=ch.index, matrix=G.matrix.tolist()))

    # groups of channels sharing a value
    scale = max(max(ch.decomposition.scale for ch in chs), 1.0)
    tol_eta = cfg.tol_val * scale
    cert_fail = []

    def check_shared(values: list[Optional[float]], label: str):
        sysm = _stack(chs, values)
        r = kalman_rank(sysm.A, sysm.B, cfg.tol_rank)
        cert = KalmanCertificate(sysm.eta, r, sysm.N)
        active = [i for i, s in enumerate(values) if s is not None]
        sv = numerical_rank(sysm.B, cfg.tol_rank)[1]
        gram.append(GramianSummary([values[i] for i in active], [sysm.kappa[i] for i in active],
                                   r, float(sv[r - 1]) if r else 0.0, channel=None))
        if not cert.passed:
            cert_fail.append(cert.to_dict())
            record(Evidence(Reason.KALMAN_RANK_DEFICIENT,
                            f"{label}: Kalman rank {r} < N = {sysm.N}",
                            eta=list(sysm.eta), kappa=list(sysm.kappa), rank=r, required=sysm.N,
                            matrix=sysm.B.tolist()))
        return sysm

    n_shared = 0
    for members in _clusters(own, tol_eta):
        values = [members.get(i) for i in range(len(chs))]
        check_shared(values, "channels sharing a sampled value")
        n_shared += 1

    # coincidence tuples over the overlaps of channel ranges
    cuts = sorted({c for ch in chs for c in ch.critical()})
    bands = [b for ch in chs for b in guard_bands(ch.decomposition, ch.curve,
                                                  cfg.merge_tol(ch.curve.spacing))]
    pieces = [p for p in split_range(cuts, bands)
              if sum(ch.holds(0.5 * (p.lower + p.upper)) for ch in chs) >= 2]
    pool = set(stratified_samples(pieces, cfg.n_eta).tolist())
    pool.update(c for c in cuts if sum(ch.holds(c) for ch in chs) >= 2)
    families: dict[int, list] = {}
    n_coinc = 0
    for s in sorted(pool):
        values = [s if ch.holds(s) else None for ch in chs]
        if sum(v is not None for v in values) < 2:
            continue
        # snap onto the range so that boundary values stay admissible
        values = [None if v is None else min(max(v, ch.range.lower), ch.range.upper)
                  for v, ch in zip(values, chs)]
        sysm = check_shared(values, "coincidence tuple")
        n_coinc += 1
        k = next((i for i, p in enumerate(pieces) if p.lower < s < p.upper), None)
        if k is not None:
            families.setdefault(k, []).append((s, sysm.B))
    for fam in families.values():
        for lo, hi in det_sign_changes(fam):
            record(Evidence(Reason.KALMAN_RANK_DEFICIENT,
                            "det of the stacked Gramian changes sign, so a coincidence tuple "
                            "in this interval is singular", eta=[lo, hi]))

    if failures > MAX_EVIDENCE:
        log.info("%d failing tuples; %d recorded", failures, MAX_EVIDENCE)
    status = Status.NOT_CONTROLLABLE if ev else Status.CONTROLLABLE
    sampling = {
        "pathway": "reparameterized",
        "design": design,
        "n_tuples": n_tuples,
        "candidates_per_channel": [int(len(np.unique(o))) for o in own],
        "shared_value_groups": n_shared,
        "coincidence_tuples": n_coinc,
        "channel_ranges": [ch.range.as_list() for ch in chs],
        "failures": failures,
        "failed_certificates": cert_fail[:MAX_EVIDENCE],
        "inputs": m,
    }
    return Verdict(status, ev, gram, sampling=sampling)
