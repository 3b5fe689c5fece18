"""
Acceptance suite. Each criterion records one PASS/FAIL line that is printed
in the terminal summary; shared solver runs are module-scoped fixtures so
criteria 6-8 reuse the runs of criteria 3-5.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import per_cell_oracle, random_instance, record
from hetnet_opt.association import Association, solve_fixed_association, solve_single_bs
from hetnet_opt.corrective import solve_relaxed_fc
from hetnet_opt.fw_solver import (Allocation, SolverOptions, lmo, multi_associated_users,
                                  solve_relaxed_fw, utility_and_gradient)
from hetnet_opt.harness import StrategySpec, parse_strategies, run_comparison
from hetnet_opt.rates import RateMatrix
from hetnet_opt.scenario import ScenarioConfig

EPS = 0.1  # tolerance for the small random instances (log-utility units)
RE_BIASES = (0, 5, 10, 15, 20, 25)
# floating-point allowance for comparisons that are exact in real arithmetic
ROUND = 1e-9


def check(criterion, ok, detail):
    record(criterion, ok, detail)
    assert ok, detail


def small_instances(seed, n):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        K, B = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        out.append(random_instance(rng, K, B)[1])
    return out


# -------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def c3_runs():
    """Reference FC at EPS/100 plus traced FW at EPS on 50 instances."""
    t0 = time.perf_counter()
    runs = []
    for rm in small_instances(2024, 50):
        ref = solve_relaxed_fc(rm, opts=SolverOptions(epsilon=EPS / 100))
        seen = []
        fw = solve_relaxed_fw(rm, opts=SolverOptions(epsilon=EPS),
                              on_iter=lambda it, a, U, g: seen.append((U, g)))
        runs.append((rm, ref, fw, seen))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def c4_runs():
    t0 = time.perf_counter()
    opts = SolverOptions(epsilon=EPS)
    runs = [(rm, solve_relaxed_fw(rm, opts=opts), solve_relaxed_fc(rm, opts=opts))
            for rm in small_instances(4048, 50)]
    return runs, opts, time.perf_counter() - t0


@pytest.fixture(scope="module")
def c5_runs(big_instance):
    _, rm = big_instance
    opts = SolverOptions(epsilon=1.0)
    out = {}
    for alg in ("fc", "fw"):
        t0 = time.perf_counter()
        out[alg] = (solve_single_bs(rm, opts=opts, relaxed_alg=alg), time.perf_counter() - t0)
    return rm, out


@pytest.fixture(scope="module")
def comparison():
    specs = parse_strategies("*")
    for pats in ("feature", "reuse1"):
        specs += [StrategySpec.re_bias(b, pats) for b in RE_BIASES]
    t0 = time.perf_counter()
    report = run_comparison(ScenarioConfig(num_users=50), specs, drops=5, seed=42)
    return report, time.perf_counter() - t0


# ----------------------------------------------------------------- criteria

def test_c1_lmo_exact():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        K, B, I = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 7))
        g = rng.normal(size=(K, B, I))
        vertex, value = lmo(g)
        # brute force over all I * K^B one-hot vertices
        users = np.array(list(itertools.product(range(K), repeat=B)))  # K^B x B
        vals = g[users, np.arange(B)[None, :], :].sum(axis=1)  # K^B x I
        flat = int(np.argmax(vals.T))  # pattern-major, so ties pick the lowest pattern
        i, u = divmod(flat, users.shape[0])
        expected = np.zeros((K, B, I))
        expected[users[u], np.arange(B), i] = 1.0
        if not (np.array_equal(vertex.alpha, expected) and value == vals[u, i]
                and vertex.pi[i] == 1.0):
            mismatches += 1
    dt = time.perf_counter() - t0
    check("C1 LMO exactness", mismatches == 0 and dt < 5,
          f"{mismatches}/1000 mismatches, {dt:.2f} s (limit 5 s)")


def test_c2_gradient():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        K, B, I = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        r = rng.uniform(0.1, 1.0, (K, B, I))
        r[rng.random(r.shape) < 0.2] = 0.0
        r[:, 0, 0] += 0.5  # every user keeps a positive rate
        w = rng.uniform(0.5, 2.0, K)
        pi = rng.dirichlet(np.ones(I))
        a = rng.uniform(0.2, 1.0, (K, B, I)) * pi / K
        U, g = utility_and_gradient(Allocation.from_dense(a, pi), RateMatrix(r), w)
        h = 1e-7
        # central differences along every coordinate at once (batched)
        n = a.size
        steps = np.eye(n).reshape(n, K, B, I) * h
        Rp = np.einsum("kbi,nkbi->nk", r, a[None] + steps)
        Rm = np.einsum("kbi,nkbi->nk", r, a[None] - steps)
        fd = (np.log(Rp) - np.log(Rm)) @ w / (2 * h)
        an = g.ravel()
        denom = np.maximum(np.abs(an), 1e-300)
        err = np.where((an == 0) & (fd == 0), 0.0, np.abs(fd - an) / denom)
        worst = max(worst, float(err.max()))
    dt = time.perf_counter() - t0
    check("C2 gradient correctness", worst < 1e-5 and dt < 5,
          f"max relative error {worst:.2e} (limit 1e-5), {dt:.2f} s (limit 5 s)")


def test_c3_certificate_soundness(c3_runs):
    runs, dt = c3_runs
    violations, checked = 0, 0
    for rm, ref, fw, seen in runs:
        for U, g in seen:
            checked += 1
            if ref.utility - U > g + ROUND:
                violations += 1
    ok = violations == 0 and dt < 30 and all(r.certified for _, r, _, _ in runs)
    check("C3 certificate soundness", ok,
          f"{violations} violations in {checked} iterates, {dt:.1f} s (limit 30 s)")


def test_c4_cross_solver(c4_runs):
    runs, opts, dt = c4_runs
    tol = opts.epsilon + opts.inner_eps
    diffs = [abs(fw.utility - fc.utility) for _, fw, fc in runs]
    bad = sum(d > tol for d in diffs)
    ok = bad == 0 and dt < 60 and all(fw.certified and fc.certified for _, fw, fc in runs)
    check("C4 cross-solver agreement", ok,
          f"max |U_fw - U_fc| = {max(diffs):.3g} (limit {tol:g}), {bad} failures, "
          f"{dt:.1f} s (limit 60 s)")


def test_c5_relaxation_tight(c5_runs):
    _, out = c5_runs
    parts, ok = [], True
    for alg, (jr, dt) in out.items():
        rel = (jr.relaxed_bound - jr.utility) / abs(jr.relaxed_bound)
        ok &= rel <= 0.002 and dt < 600 and jr.certified and jr.association.is_single
        parts.append(f"{alg}: U={jr.utility:.3f} bound={jr.relaxed_bound:.3f} "
                     f"rel gap {rel:.2e} in {dt:.1f} s")
    check("C5 relaxation tightness", ok, "; ".join(parts) + " (limits 0.2%, 600 s)")


def test_c6_sparsity(c5_runs):
    rm, out = c5_runs
    n_fc = out["fc"][0].relaxed_result.active_patterns.size
    n_fw = out["fw"][0].relaxed_result.active_patterns.size
    K = rm.K
    ok = n_fc <= K and n_fc <= n_fw and n_fc <= 30
    check("C6 sparsity", ok, f"active patterns: FC {n_fc}, FW {n_fw} (K={K}, FC limit 30)")


def test_c7_multi_association(c3_runs, c4_runs, c5_runs):
    optima = []
    for rm, ref, fw, _ in c3_runs[0]:
        optima += [(rm, ref), (rm, fw)]
    for rm, fw, fc in c4_runs[0]:
        optima += [(rm, fw), (rm, fc)]
    rm_big, out = c5_runs
    for jr, _ in out.values():
        optima.append((rm_big, jr.relaxed_result))
    violations = 0
    worst = 0
    for rm, res in optima:
        tol = SolverOptions().tol_for(rm.I)
        n = multi_associated_users(res.allocation, rm, tol).size
        worst = max(worst, n - (rm.B - 1))
        violations += n > rm.B - 1
    check("C7 multi-association bound", violations == 0,
          f"{violations} violations over {len(optima)} relaxed optima "
          f"(max count - (B-1) = {worst})")


def test_c8_monotonicity(c3_runs, c4_runs, c5_runs):
    traces = []
    for _, ref, fw, _ in c3_runs[0]:
        traces += [[row[1] for row in ref.trace], [row[1] for row in fw.trace]]
    for _, fw, fc in c4_runs[0]:
        traces += [[row[1] for row in fw.trace], [row[1] for row in fc.trace]]
    for jr, _ in c5_runs[1].values():
        traces.append(list(jr.trace))
        traces += [[row[1] for row in res.trace] for res in jr.inner_results]
    violations = sum(b < a for t in traces for a, b in zip(t, t[1:]))
    check("C8 monotonicity", violations == 0,
          f"{violations} decreases over {len(traces)} traces (FW, FC and alternating association)")


def test_c9_strategy_ordering(comparison):
    report, dt = comparison
    agg = report.aggregate()
    gm = {k: agg[k]["geometric_mean"] for k in
          ("AllPattern", "FeaPattern", "MacroABS", "OD1", "OD3", "Reuse1")}
    ratio = gm["FeaPattern"] / gm["AllPattern"]
    ok = (gm["AllPattern"] >= gm["FeaPattern"] >= gm["MacroABS"] >= gm["OD1"]
          and gm["Reuse1"] == min(gm.values())
          and 0.85 <= ratio <= 1.0
          and report.all_certified and dt < 3600)
    text = ", ".join(f"{k} {v / 1e6:.3f}" for k, v in gm.items())
    check("C9 strategy ordering", ok,
          f"geo-mean Mbit/s: {text}; Fea/All = {ratio:.3f}; sweep {dt:.0f} s (limit 3600 s)")


def test_c10_range_expansion(comparison):
    report, _ = comparison
    agg = report.aggregate()

    def gm(name):
        return agg[name]["geometric_mean"]

    fea = [gm(f"REbias({b})-FeaPattern") for b in RE_BIASES]
    reu = [gm(f"REbias({b})-Reuse1") for b in RE_BIASES]
    fea_joint, reu_joint = gm("FeaPattern"), gm("Reuse1")
    best = max(fea)
    zero_ratio, best_ratio = fea[0] / fea_joint, best / fea_joint
    loss_fea = 1 - zero_ratio
    loss_reu = 1 - reu[0] / reu_joint
    ok = best > fea[0] and zero_ratio < best_ratio and loss_reu < loss_fea
    check("C10 RE biasing", ok,
          f"Fea: 0 dB/joint {zero_ratio:.2f}, best bias "
          f"{RE_BIASES[int(np.argmax(fea))]} dB/joint {best_ratio:.2f}; "
          f"0 dB loss Fea {loss_fea:.2f} vs Reuse1 {loss_reu:.2f}")


def test_c11_masked_equivalence():
    rng = np.random.default_rng(11)
    eps = 0.01
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        K, B = int(rng.integers(2, 7)), int(rng.integers(2, 4))
        rm = random_instance(rng, K, B)[1]
        r = rm.r * 1e-6  # Mbit/s keeps the conic model well scaled
        cells = np.array([int(rng.choice(np.flatnonzero(r[k].max(axis=1) > 0)))
                          for k in range(K)])
        universal = solve_fixed_association(RateMatrix(r), Association.from_cells(cells, B),
                                            opts=SolverOptions(epsilon=eps)).utility
        masked = per_cell_oracle(r, cells, np.ones(K))
        worst = max(worst, abs(universal - masked))
    dt = time.perf_counter() - t0
    check("C11 masked/universal equivalence", worst <= 2 * eps and dt < 30,
          f"max |difference| {worst:.2e} (limit {2 * eps:g}), {dt:.1f} s (limit 30 s)")
