"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary)."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ensemble_ctrl.config import VerdictConfig
from ensemble_ctrl.multidim_verdict import build_reparameterized, ensemble_verdict, system_verdict
from ensemble_ctrl.scalar_verdict import build_gramian
from ensemble_ctrl.spectral import classify, transformed_inputs
from ensemble_ctrl.synthesis import ControlSchedule, reachability_operator, simulate, synthesize
from ensemble_ctrl.system import load_system, system_from_dict
from ensemble_ctrl.verdict import Reason, Status

from randsys import (
    field_of, mix_texts, poly_text, random_channel_system, random_invertible, random_poly,
    random_scalar_case, subensemble_rank, transform_drift, transform_inputs,
)

FIX = Path(__file__).resolve().parents[1] / "fixtures"
N_CASES = 100
PROPERTY = settings(max_examples=N_CASES, deadline=None, derandomize=True, database=None,
                    suppress_health_check=list(HealthCheck))
SEEDS = st.integers(min_value=0, max_value=2 ** 32 - 1)

REGRESSION = {
    "example_2_1.json": Status.NOT_CONTROLLABLE,
    "example_2_2.json": Status.CONTROLLABLE,
    "example_2_4.json": Status.CONTROLLABLE,
    "coupled_example.json": Status.CONTROLLABLE,
    "jordan2_rank_deficient.json": Status.NOT_CONTROLLABLE,
    "jordan2_full_rank.json": Status.CONTROLLABLE,
    "jordan3_rank_deficient.json": Status.NOT_CONTROLLABLE,
    "jordan3_full_rank.json": Status.CONTROLLABLE,
}


def analyze(path, n_grid=None, **overrides):
    s = load_system(path, n_grid)
    return s, system_verdict(s.A, s.B, s.config(**overrides))


class Tally:
    """Counts property cases and keeps the first counterexample."""

    def __init__(self):
        self.cases = 0
        self.failures = 0
        self.first = ""

    def check(self, ok: bool, what: str):
        self.cases += 1
        if not ok:
            self.failures += 1
            self.first = self.first or what

    def report(self, criterion, label):
        detail = f"{self.cases} cases, {self.failures} failures"
        if self.first:
            detail += f"; first: {self.first}"
        criterion(label, self.failures == 0 and self.cases >= N_CASES, detail)


# ============================================================ worked-example regression

@pytest.mark.parametrize("name", list(REGRESSION))
def test_regression_verdict_and_runtime(name, criterion):
    t0 = time.perf_counter()
    _, v = analyze(FIX / name)
    dt = time.perf_counter() - t0
    criterion(f"regression {name}: {REGRESSION[name].value} in < 5 s",
              v.status == REGRESSION[name] and dt < 5.0, f"got {v.status.value} in {dt:.2f} s")


def test_regression_example_2_1_reason(criterion):
    _, v = analyze(FIX / "example_2_1.json")
    criterion("regression example_2_1.json: reason NonInjectiveSingleInput",
              v.reasons == [Reason.NON_INJECTIVE_SINGLE_INPUT], str([r.value for r in v.reasons]))


def test_regression_example_2_4_kappa(criterion):
    _, v = analyze(FIX / "example_2_4.json")
    kap = {float(g.eta): g.kappa for g in v.gramians}
    interior = [k for eta, k in kap.items() if -1 < eta < 1]
    ok = kap.get(1.0) == 1 and interior and all(k == 2 for k in interior) \
        and all(g.rank == g.kappa for g in v.gramians)
    criterion("regression example_2_4.json: kappa = 2 inside (-1, 1), kappa(1) = 1, full row rank",
              ok, f"{len(interior)} interior samples, kappa(1) = {kap.get(1.0)}")


def _coupled_blocks(eta2):
    s = load_system(FIX / "coupled_example.json")
    p = classify(s.A, s.config())
    r = build_reparameterized(p, transformed_inputs(p, s.B), [0.5, eta2])
    return r.B[:r.kappa[0]], r.B[r.kappa[0]:], r.N


ETA2 = [0.0, 0.01, 0.25, 0.5, 0.81, 1.0]


def test_regression_coupled_blocks_on_unit_interval(criterion):
    # beta^2 is injective on [0, 1]: one preimage sqrt(eta2)
    worst = 0.0
    ok = True
    for eta2 in ETA2:
        D1, D2, N = _coupled_blocks(eta2)
        ok &= D1.shape == (1, 3) and D2.shape == (1, 3) and N == 2
        if ok:
            worst = max(worst, np.max(np.abs(D1 - [1, 0, 0])),
                        np.max(np.abs(D2 - [0, 1, np.sqrt(eta2)])))
    criterion("regression coupled_example.json: D1 = [1 0 0], D2 = [0 1 sqrt(eta2)], N = 2 on [0, 1]",
              ok and worst <= 1e-8, f"max deviation {worst:.1e}")


@pytest.mark.xfail(strict=True, reason="beta^2 is injective on [0, 1]; the two-row form needs "
                                       "the preimage -sqrt(eta2), which lies outside [0, 1]")
def test_regression_coupled_two_row_form_on_unit_interval(criterion):
    worst, shapes = 0.0, []
    for eta2 in ETA2:
        _, D2, N = _coupled_blocks(eta2)
        want = np.array([[0, 1, 0]]) if eta2 == 0 else \
            np.array([[0, 1, np.sqrt(eta2)], [0, 1, -np.sqrt(eta2)]])
        shapes.append(D2.shape[0])
        if D2.shape != want.shape:
            worst = np.inf
            continue
        worst = max(worst, np.max(np.abs(np.sort(D2, axis=0) - np.sort(want, axis=0))))
    criterion("regression coupled_example.json: D2 = [0 1 +-sqrt(eta2)] (two rows) and N = 3 "
              "for 0 < eta2 <= 1 on K = [0, 1]", worst <= 1e-8,
              f"rows of D2 at eta2 = {ETA2}: {shapes}")


def test_regression_coupled_two_row_form_on_symmetric_interval(criterion):
    d = json.loads((FIX / "coupled_example.json").read_text())
    d["parameter"]["interval"] = [-1, 1]
    s = system_from_dict(d)
    p = classify(s.A, s.config())
    worst = 0.0
    for eta2 in ETA2[1:]:
        r = build_reparameterized(p, s.B, [0.5, eta2])
        D2 = r.B[r.kappa[0]:]
        want = np.array([[0, 1, -np.sqrt(eta2)], [0, 1, np.sqrt(eta2)]])
        worst = max(worst, np.inf if D2.shape != want.shape else np.max(np.abs(D2 - want)))
    criterion("coupled system on [-1, 1]: D2 = [0 1 +-sqrt(eta2)], two rows", worst <= 1e-8,
              f"max deviation {worst:.1e}")


# ============================================================ invariant suites

def _scalar_or_channel_case(rng):
    """A 1x1 or 2x2 system as expression texts."""
    if rng.random() < 0.4:
        a, b = random_scalar_case(rng)
        return [[a]], [b]
    n = 2
    return random_channel_system(rng, n, int(rng.integers(1, 4)), triangular=bool(rng.random() < 0.5))


def test_invariant_gramian_rank_bound(criterion):
    tally = Tally()

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        a, b = random_scalar_case(rng)
        af, Bf = field_of(a), field_of(b)
        lo, hi = af.values.min(), af.values.max()
        for eta in rng.uniform(lo, hi, 4):
            try:
                G = build_gramian(af, Bf, float(eta))
            except Exception as err:     # constant pieces have no finite preimage set
                tally.check(type(err).__name__ == "DegenerateDriftError", f"seed {seed}: {err!r}")
                return
            ok = G.rank <= min(G.kappa, len(b)) and G.matrix.shape == (G.kappa, len(b))
            tally.check(ok, f"seed {seed}, eta {eta}: rank {G.rank}, kappa {G.kappa}")
        v = system_verdict(af, Bf, VerdictConfig(n_grid=af.n_grid))
        tally.check(all(g.rank <= min(g.kappa, len(b)) for g in v.gramians), f"seed {seed}: verdict")

    run()
    tally.report(criterion, "invariant: rank D(eta) <= min(kappa(eta), m)")


def test_invariant_input_mixing(criterion):
    tally = Tally()

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        A, B = _scalar_or_channel_case(rng)
        M = random_invertible(rng, len(B[0]))
        cfg = VerdictConfig(n_grid=101)
        base = system_verdict(field_of(A), field_of(B), cfg).status
        mixed = system_verdict(field_of(A), field_of(mix_texts(B, M)), cfg).status
        tally.check(mixed == base, f"seed {seed}: {base.value} vs {mixed.value}")

    run()
    tally.report(criterion, "invariant: verdict(A, B M) = verdict(A, B)")


def _no_crossing(A):
    lam = np.stack([field_of(A[i][i]).values[:, 0, 0] for i in range(len(A))])
    d = np.abs(lam[:, None, :] - lam[None, :, :]) + np.eye(len(A))[:, :, None]
    return d.min() > 0.05


def test_invariant_constant_similarity(criterion):
    tally = Tally()

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        n = 2 if rng.random() < 0.8 else 3
        tri = bool(rng.random() < 0.5)
        while True:
            A, B = random_channel_system(rng, n, int(rng.integers(1, n + 2)), triangular=tri)
            # a triangular drift is defective where its diagonal curves cross
            if not tri or _no_crossing(A):
                break
        Q = random_invertible(rng, n)
        cfg = VerdictConfig(n_grid=101)
        base = ensemble_verdict(field_of(A), field_of(B), cfg).status
        sim = ensemble_verdict(field_of(transform_drift(A, Q)), field_of(transform_inputs(B, Q)), cfg).status
        tally.check(sim == base, f"seed {seed}: {base.value} vs {sim.value}")

    run()
    tally.report(criterion, "invariant: verdict(Q A Q^-1, Q B) = verdict(A, B)")


def test_invariant_necessity_oracle(criterion):
    tally = Tally()

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        cfg = VerdictConfig(n_grid=101)
        for _ in range(50):
            A, B = _scalar_or_channel_case(rng)
            Af, Bf = field_of(A), field_of(B)
            if system_verdict(Af, Bf, cfg).status == Status.CONTROLLABLE:
                break
        else:
            tally.check(False, f"seed {seed}: no controllable case drawn")
            return
        n = len(A)
        bad = []
        for k in range(1, 5):
            betas = np.sort(rng.uniform(-1, 1, k))
            if k > 1 and np.min(np.diff(betas)) < 1e-3:
                continue
            r = subensemble_rank(Af, Bf, betas)
            if r != k * n:
                bad.append(f"betas {betas.tolist()}: rank {r} < {k * n}")
        tally.check(not bad, f"seed {seed}, " + "; ".join(bad))

    run()
    tally.report(criterion, "invariant: Controllable => every sampled sub-ensemble passes Kalman")


def _jordan_case(rng):
    n = int(rng.choice([2, 3]))
    if rng.random() < 0.8:
        c = rng.normal(size=3)
        c[1] = np.sign(c[1]) * (abs(c[1]) + 2 * abs(c[2]) + 0.2)    # monotone on [-1, 1]
    else:
        c = np.array([rng.normal(), rng.normal(scale=0.2), rng.choice([-1, 1]) * (1 + rng.random())])
    lam = poly_text(c)
    m = int(rng.integers(n - 1, n + 2))
    B = [[random_poly(rng, 2) for _ in range(m)] for _ in range(n)]
    J = [[lam if i == j else ("1" if j == i + 1 else "0") for j in range(n)] for i in range(n)]
    D = [[lam if i == j else "0" for j in range(n)] for i in range(n)]
    return J, D, B


def test_invariant_jordan_diagonal_agreement(criterion):
    tally = Tally()
    seen = {}

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        J, D, B = _jordan_case(rng)
        cfg = VerdictConfig(n_grid=101)
        Jf = field_of(J)
        vj = ensemble_verdict(Jf, field_of(B), cfg).status
        vd = ensemble_verdict(field_of(D), field_of(B), cfg).status
        seen[vj] = seen.get(vj, 0) + 1
        tally.check(classify(Jf, cfg).structure.value == "JordanBlock" and vj == vd,
                    f"seed {seed}: Jordan {vj.value}, diagonal {vd.value}")

    run()
    tally.report(criterion, "invariant: Jordan block verdict = verdict of lambda I with the same B")
    print("  Jordan verdict mix:", {k.value: c for k, c in seen.items()})


def test_invariant_triangular_pathway(criterion):
    tally = Tally()
    kinds = {}

    @PROPERTY
    @given(SEEDS)
    def run(seed):
        rng = np.random.default_rng(seed)
        n = 2 if rng.random() < 0.7 else 3
        A, B = random_channel_system(rng, n, int(rng.integers(1, n + 2)), triangular=True)
        Dg = [[A[i][j] if i == j else "0" for j in range(n)] for i in range(n)]
        cfg = VerdictConfig(n_grid=101)
        Af, Bf = field_of(A), field_of(B)
        p = classify(Af, cfg)
        Bt = transformed_inputs(p, Bf)
        vt = ensemble_verdict(Af, Bf, cfg)
        vd = ensemble_verdict(field_of(Dg), Bt, cfg)
        kinds[p.has_eigenbasis] = kinds.get(p.has_eigenbasis, 0) + 1
        tally.check(p.structure.value in ("Triangular", "JordanBlock") and vt.status == vd.status,
                    f"seed {seed}: {p.structure.value} {vt.status.value}, diagonal {vd.status.value}")

    run()
    tally.report(criterion, "invariant: triangular pathway = diagonal system with the same B~")
    print(f"  with eigenbasis: {kinds.get(True, 0)}, diagonal entries meeting: {kinds.get(False, 0)}")


# ============================================================ synthesis

def test_synthesis_example_2_2(criterion):
    frozen = json.loads((FIX / "synthesis_frozen.json").read_text())["example_2_2"]
    s = load_system(FIX / frozen["system"], frozen["grid"])
    _, rep = synthesize(s, s.x0, s.xF, frozen["T"], frozen["P"], epsilon=frozen["epsilon"])
    criterion("synthesis example_2_2.json: simulated uniform error <= 1e-2 at frozen (T, P, grid)",
              rep.simulated_error <= 1e-2,
              f"T={frozen['T']}, P={frozen['P']}, grid={frozen['grid']}: {rep.simulated_error:.3e}")


def test_synthesis_dyadic_residual(criterion):
    s = load_system(FIX / "example_2_2.json")
    Ps = [1, 2, 4, 8, 16, 32, 64]
    res = [synthesize(s, s.x0, s.xF, 1.0, P, ridge=0.0)[1].residual for P in Ps]
    ref = np.linalg.norm(s.xF.values)
    ok = all(f <= c + 1e-8 * ref for c, f in zip(res, res[1:]))
    criterion("synthesis example_2_2.json: dyadic P refinement never increases the residual", ok,
              "residuals " + ", ".join(f"{r:.2e}" for r in res))


def test_synthesis_example_2_1(criterion):
    s = load_system(FIX / "example_2_1.json")
    G = reachability_operator(s, 1.0, 32)
    even = np.max(np.abs(G - G[::-1]))
    _, rep = synthesize(s, s.x0, s.xF, 1.0, 32)
    criterion("synthesis example_2_1.json: simulated uniform error = 1 +- 0.05 (even reachable set)",
              abs(rep.simulated_error - 1.0) <= 0.05 and even <= 1e-12,
              f"error {rep.simulated_error:.6f}, odd part of G {even:.1e}")


def test_synthesis_simulator_accuracy(criterion):
    d = {"parameter": {"interval": [0, 1], "grid": 21},
         "A": [["-0.5 + beta", "2"], ["-1", "beta^2 - 1"]], "B": [["1", "0"], ["beta", "1"]],
         "x0": ["1", "-beta"]}
    s = system_from_dict(d)
    T, P = 2.0, 4
    sched = ControlSchedule(T, np.random.default_rng(8).normal(size=(P, 2)))
    xT = simulate(s, s.x0, sched, int(100 * T / P)).values[:, :, 0]
    from scipy.linalg import expm
    exact = []
    for g in range(s.n_grid):
        x = s.x0.values[g, :, 0]
        for u in sched.values:
            M = np.zeros((3, 3))
            M[:2, :2] = s.A.values[g]
            M[:2, 2] = s.B.values[g] @ u
            x = (expm(M * T / P) @ np.append(x, 1.0))[:2]
        exact.append(x)
    exact = np.array(exact)
    rel = np.max(np.abs(xT - exact)) / np.max(np.abs(exact))
    criterion("synthesis: simulator matches the closed form within 1e-6 relative at 100 steps per unit time",
              rel <= 1e-6, f"relative error {rel:.1e}")


# ============================================================ stability

@pytest.mark.parametrize("name", list(REGRESSION))
def test_stability_under_refinement(name, criterion):
    _, base = analyze(FIX / name)
    _, fine = analyze(FIX / name, 401)
    cfg = VerdictConfig()
    _, dense = analyze(FIX / name, n_eta=2 * cfg.n_eta, n_eta_channel=2 * cfg.n_eta_channel)

    def same(v):
        return v.status == base.status or v.status == Status.INCONCLUSIVE

    criterion(f"stability {name}: grid 201 -> 401 and doubled eta samples never flip",
              base.status == REGRESSION[name] and same(fine) and same(dense),
              f"{base.status.value} / {fine.status.value} / {dense.status.value}")
