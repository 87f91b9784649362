"""Acceptance criteria, one test per criterion, each at its stated tolerance and runtime.

Every test prints a ``[PASS]``/``[FAIL]`` line; the lines are repeated in the
pytest terminal summary.  Run just this file with

    pytest tests/test_acceptance.py -v
"""

import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from gtfep.apc import ApcConfig, ApcState, apc_step, fit_quadratic, run_apc_on_oracle, with_bounds
from gtfep.coalition import (CharacteristicFunction, EnergyTable, NormalFormGame, PrecisionGameFamily,
                             collective_free_energy, effective_stationarity_check, gibbs_distribution, locate_peak,
                             mobius_dividends, permutation_shapley, reconstruct_setfunction,
                             shapley_from_dividends, verify_eps_nash)
from gtfep.credit_bench import credit_weighted_training, estimate_coalition_values, noise_agent_task
from gtfep.marl import MarlConfig, MarlEnv, MarlExperiment, STRATEGIES, final_mean_reward, run_strategy
from gtfep.meanfield import PairwiseEnergyModel, attention_weights, meanfield_fixed_point, meanfield_free_energy
from gtfep.traj import (DEFAULT_BETAS, MARL_TRACK_CONFIG, TRAJ_APC_CONFIG, TRAJ_REPLICATES, SyntheticTrackConfig,
                        TrajTask, expected_credit, load_tracks, make_samples, run_apc_training,
                        run_inverted_u_sweep, synthetic_task, synthetic_tracks)
from gtfep.vicsek import (VICSEK_APC_CONFIG, VICSEK_FIXED_BETAS, VICSEK_SCHEDULE, VICSEK_SWEEP_BETAS, FlockConfig,
                          run_apc_flock, run_beta_sweep)
pytestmark = pytest.mark.slow


def _rng(*words):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(words))))


def test_criterion_01_mobius_exactness(report):
    t0 = time.perf_counter()
    rng = _rng(1)
    worst_rt = worst_sh = 0.0
    n_shapley = 0
    for g in range(1000):
        n = 2 + g % 9
        v = np.concatenate([[0.0], rng.normal(size=(1 << n) - 1)])
        d = mobius_dividends(v)
        worst_rt = max(worst_rt, float(np.max(np.abs(reconstruct_setfunction(d) - v))))
        if n <= 6:
            orders = np.array(list(itertools.permutations(range(n))))
            full = permutation_shapley(CharacteristicFunction(v), n, orders).credits
            worst_sh = max(worst_sh, float(np.max(np.abs(shapley_from_dividends(d).credits - full))))
            n_shapley += 1
    dt = time.perf_counter() - t0
    ok = worst_rt <= 1e-12 and worst_sh <= 1e-10 and dt < 30
    report(1, ok, f"1000 games N=2..10: max round-trip error {worst_rt:.2e} (<=1e-12), "
                  f"dividend vs all-permutation Shapley {worst_sh:.2e} on {n_shapley} games (<=1e-10), {dt:.1f}s (<30s)")
    assert ok


def test_criterion_02_gibbs_optimality(report):
    t0 = time.perf_counter()
    rng = _rng(2)
    violations = 0
    worst_gap = math.inf
    worst_lnz = 0.0
    for k in range(100):
        n = 1 + k % 8
        beta = float(rng.uniform(0.1, 10.0))
        e = EnergyTable(rng.normal(size=1 << n), beta)
        p = gibbs_distribution(e)
        f_star = collective_free_energy(p.probs, e).free_energy
        worst_lnz = max(worst_lnz, abs(f_star + p.log_partition / beta))
        for q in rng.dirichlet(np.ones(1 << n), 1000):
            gap = collective_free_energy(q, e).free_energy - f_star
            worst_gap = min(worst_gap, gap)
            violations += gap < 0
    dt = time.perf_counter() - t0
    ok = violations == 0 and worst_lnz <= 1e-12 and dt < 60
    report(2, ok, f"100 tables x 1000 Dirichlet draws: {violations} violations of F(p)>=F(p*) "
                  f"(min gap {worst_gap:.2e}), max |F(p*)+lnZ/beta| {worst_lnz:.1e} (<=1e-12), {dt:.1f}s (<60s)")
    assert ok


def test_criterion_03_eps_nash(report):
    t0 = time.perf_counter()
    rng = _rng(3)
    games = []
    for k in range(100):
        n = 2 + k % 2
        games.append(NormalFormGame.random(rng, [int(a) for a in rng.integers(2, 4, n)]))
    bad = {b: 0 for b in (1.0, 2.0, 5.0, 10.0)}
    ratio = 0.0
    for g in games:
        for b in bad:
            r = verify_eps_nash(g, b)
            bad[b] += not r.holds
            ratio = max(ratio, r.max_deviation_gain / r.bound)
    high = max(verify_eps_nash(g, 1e6).max_deviation_gain for g in games)
    dt = time.perf_counter() - t0
    ok = sum(bad.values()) == 0 and high <= 1e-3 and dt < 60
    report(3, ok, f"100 random games: instances over N ln2/beta per beta {bad} (max gain/bound {ratio:.2f}), "
                  f"max gain at beta=1e6 {high:.3f} (<=1e-3), {dt:.1f}s (<60s)")
    assert ok


def _fd_grad(f, q, h=1e-6):
    g = np.empty_like(q)
    for i in range(q.size):
        up, dn = q.copy(), q.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def test_criterion_04_meanfield(report):
    t0 = time.perf_counter()
    rng = _rng(4)
    residual = grad = wsum = 0.0
    failed = 0
    for k in range(100):
        n = 2 + k % 5
        m = PairwiseEnergyModel.random(rng, n, beta=float(rng.uniform(0.5, 2.0)))
        st = meanfield_fixed_point(m, damping=0.5)
        if not st.converged:
            failed += 1
            continue
        residual = max(residual, st.residual)
        grad = max(grad, float(np.max(np.abs(_fd_grad(lambda q: meanfield_free_energy(q, m), st.q)))))
        wsum = max(wsum, abs(float(attention_weights(m, st.q).sum()) - 1.0))
    dt = time.perf_counter() - t0
    ok = residual <= 1e-8 and failed < 5 and grad <= 1e-5 and wsum <= 1e-12 and dt < 30
    report(4, ok, f"100 instances N=2..6: {failed} non-convergent (<5), max residual {residual:.1e} (<=1e-8), "
                  f"FD gradient {grad:.1e} (<=1e-5), weight sum error {wsum:.1e}, {dt:.1f}s (<30s)")
    assert ok


def test_criterion_05_apc_oracle(report):
    t0 = time.perf_counter()
    cfg = ApcConfig()
    finals = [run_apc_on_oracle(lambda b, _: -(b - 4.0) ** 2, cfg, 300, seed=s, beta0=1.0)[-1][1] for s in range(50)]
    hits = sum(3.7 <= b <= 4.3 for b in finals)
    rng = _rng(5)
    violations = 0
    steps = 0
    for chunk in range(100):
        c = ApcConfig(eta=float(rng.uniform(0.01, 5.0)), beta_min=0.2, beta_max=float(rng.uniform(0.5, 20.0)))
        state = ApcState.initial(float(rng.uniform(-5, 30)), c, chunk)
        credits = rng.normal(0, float(rng.uniform(0.1, 100)), 10_000) + rng.uniform(-5, 5, 10_000) ** 3
        for x in credits:
            state = apc_step(state, float(x), c)
            violations += not (c.beta_min <= state.beta <= c.beta_max)
        steps += credits.size
    dt = time.perf_counter() - t0
    ok = hits >= 45 and violations == 0 and dt < 30
    report(5, ok, f"-(beta-4)^2 from beta=1: {hits}/50 seeds end in [3.7,4.3] (>=45); "
                  f"{violations} clamp violations in {steps} random steps; {dt:.1f}s (<30s)")
    assert ok


def _dataset_path():
    for cand in (os.environ.get("GTFEP_D1_CSV"), "D1_AM2_F1.csv", Path(__file__).parent / "data" / "D1_AM2_F1.csv"):
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


def test_criterion_06_inverted_u_synthetic(report):
    t0 = time.perf_counter()
    task = synthetic_task(seed=0)
    sweep = run_inverted_u_sweep(task, DEFAULT_BETAS, runs=20, seed=0)
    dense = np.round(np.arange(0.5, 5.0001, 0.1), 10)
    oracle_vals = np.array([expected_credit(task, b, 20, seed=100) for b in dense])
    oracle = fit_quadratic(zip(dense, oracle_vals))
    f = sweep.fit
    dt = time.perf_counter() - t0
    ok = f.a < 0 and f.r_squared >= 0.8 and abs(f.peak - oracle.peak) <= 0.5 and dt < 300
    report(6, ok, f"synthetic sweep a={f.a:.4f} (<0), R2={f.r_squared:.3f} (>=0.8), peak {f.peak:.2f} vs dense-grid "
                  f"oracle {oracle.peak:.2f} (|diff|<=0.5; grid argmax {dense[np.argmax(oracle_vals)]:.1f}), {dt:.0f}s (<300s)")
    assert ok


def test_criterion_06_inverted_u_real_data(report):
    path = _dataset_path()
    if path is None:
        report("6 (real data)", False, "D1_AM2_F1.csv not supplied (set GTFEP_D1_CSV); dataset-gated check skipped",
               skipped=True)
        pytest.skip("D1_AM2_F1.csv not available")
    task = TrajTask.from_samples(make_samples(load_tracks(path).head(10)))
    f = run_inverted_u_sweep(task, DEFAULT_BETAS, runs=20, seed=0).fit
    ok = f.a < 0 and 3.6 <= f.peak <= 4.6
    report("6 (real data)", ok, f"{path.name}: peak {f.peak:.2f} in [3.6,4.6], R2={f.r_squared:.3f}")
    assert ok


def _final_credit(rows, last=50):
    return float(np.mean([r[2] for r in rows[-last:]]))


def test_criterion_07_apc_vs_fixed(report):
    t0 = time.perf_counter()
    task = synthetic_task(seed=0)
    wins = []
    details = []
    for s in range(5):
        base = {b: _final_credit(run_apc_training(task, TRAJ_APC_CONFIG, 300, seed=s, beta0=b, strategy="fixed",
                                                  replicates=TRAJ_REPLICATES)) for b in (0.5, 2.0, 5.0)}
        apc = _final_credit(run_apc_training(task, TRAJ_APC_CONFIG, 300, seed=s, beta0=1.0,
                                             replicates=TRAJ_REPLICATES))
        best = max(base.values())
        wins.append(apc >= 0.95 * best and apc > base[0.5])
        details.append(f"s{s}: apc {apc:.3f} best fixed {best:.3f} fixed0.5 {base[0.5]:.3f}")
    dt = time.perf_counter() - t0
    ok = sum(wins) >= 4 and dt < 600
    report(7, ok, f"APC >= 0.95 x best fixed and > beta=0.5 in {sum(wins)}/5 seeds (>=4); "
                  + "; ".join(details) + f"; {dt:.0f}s (<600s)")
    assert ok


def test_criterion_08_noise_doubling(report):
    t0 = time.perf_counter()
    cfg = SyntheticTrackConfig()
    task = synthetic_task(cfg, seed=0)
    # doubling the noise variance of the held-out observations
    shifted = synthetic_task(SyntheticTrackConfig(eval_noise=cfg.eval_noise * math.sqrt(2)), seed=0)
    drops = []
    for s in range(5):
        rows = run_apc_training(task, TRAJ_APC_CONFIG, 600, seed=s, beta0=1.0, shift_task=shifted, shift_epoch=300,
                                replicates=TRAJ_REPLICATES)
        b = np.array([r[1] for r in rows])
        drops.append((float(b[150:300].mean()), float(b[450:].mean())))
    fixed = run_apc_training(task, TRAJ_APC_CONFIG, 600, seed=0, beta0=2.0, strategy="fixed", shift_task=shifted,
                             shift_epoch=300, replicates=1)
    fixed_const = len({r[1] for r in fixed}) == 1
    n_ok = sum(post < pre for pre, post in drops)
    dt = time.perf_counter() - t0
    ok = n_ok >= 4 and fixed_const and dt < 600
    report(8, ok, f"mean beta final quarter < pre-shift quarter in {n_ok}/5 seeds (>=4) "
                  f"[{', '.join(f'{a:.2f}->{b:.2f}' for a, b in drops)}]; fixed beta constant: {fixed_const}; "
                  f"{dt:.0f}s (<600s)")
    assert ok


def test_criterion_09_vicsek(report):
    t0 = time.perf_counter()
    rows = run_beta_sweep(FlockConfig(), VICSEK_SWEEP_BETAS, 0.1, 10, seed=0)
    phi = np.array([m for _, m, _ in rows])
    fit = fit_quadratic([(b, m) for b, m, _ in rows])
    witness = next(((i, j, k) for j in range(1, len(phi) - 1) for i in range(j) for k in range(j + 1, len(phi))
                    if phi[j] > phi[i] and phi[j] > phi[k]), None)
    sweep_ok = fit.a < 0 and witness is not None
    wide = with_bounds(VICSEK_APC_CONFIG, 0.2, max(VICSEK_APC_CONFIG.beta_max, *VICSEK_FIXED_BETAS))
    per_seed = []
    for s in range(3):
        fixed = {b: np.mean([r[3] for r in run_apc_flock(FlockConfig(), VICSEK_SCHEDULE, wide, 100, s, beta0=b,
                                                         adapt=False)[-20:]]) for b in VICSEK_FIXED_BETAS}
        apc = np.mean([r[3] for r in run_apc_flock(FlockConfig(), VICSEK_SCHEDULE, VICSEK_APC_CONFIG, 100, s)[-20:]])
        per_seed.append((apc, max(fixed.values()), min(fixed.values())))
    apc_ok = all(a >= best - 0.05 and a > worst for a, best, worst in per_seed)
    dt = time.perf_counter() - t0
    ok = sweep_ok and apc_ok and dt < 600
    wtxt = "none" if witness is None else "beta " + "<".join(f"{VICSEK_SWEEP_BETAS[x]:g}" for x in witness)
    report(9, ok, f"sweep a={fit.a:.5f} (<0), interior maximum witness {wtxt}; APC last-20 phi vs best/worst fixed "
                  + ", ".join(f"{a:.3f}/{b:.3f}/{w:.3f}" for a, b, w in per_seed) + f"; {dt:.0f}s (<600s)")
    assert ok


def test_criterion_10_marl(report):
    t0 = time.perf_counter()
    env = MarlEnv.from_tracks(MarlConfig(), synthetic_tracks(MARL_TRACK_CONFIG, seed=0))
    exp = MarlExperiment()
    rows = []
    for s in exp.seeds:
        for strategy in STRATEGIES:
            rows.extend(run_strategy(env, strategy, exp, s))
    means = {st: final_mean_reward(rows, st, 50) for st in STRATEGIES}
    best = max(means[st] for st in ("fixed_low", "fixed_star", "fixed_high"))
    # rewards are negative: "0.95 x best" means within 5% of the best magnitude
    threshold = best - 0.05 * abs(best)
    apc = means["apc"]
    dt = time.perf_counter() - t0
    ok = apc >= threshold and apc > means["fixed_low"] and apc > means["random"] and dt < 900
    report(10, ok, "final-50 mean reward over 5 seeds: " + ", ".join(f"{k} {v:.1f}" for k, v in means.items())
                   + f"; APC needs >= {threshold:.1f} and > low/random; {dt:.0f}s (<900s)")
    assert ok


def test_criterion_11_credit_bench(report):
    t0 = time.perf_counter()
    uniform_flat = True
    wins = 0
    parts = []
    for s in range(5):
        task = noise_agent_task(seed=s)
        u = credit_weighted_training(task, "uniform", 5, seed=s)
        h = credit_weighted_training(task, "harsanyi", 5, seed=s)
        uniform_flat &= len(set(u.val_mae)) == 1
        wins += h.val_mae[-1] <= u.val_mae[-1]
        parts.append(f"{h.val_mae[-1]:.3f}/{u.val_mae[-1]:.3f}")

    # constructed game: additive values plus a synergy s between agents 0 and 2, noisy episodes
    s_true, base = 0.7, np.array([1.0, -0.5, 0.3, 0.8])

    def sampler(mask, rng):
        members = [(mask >> i) & 1 for i in range(4)]
        return float(base @ members + s_true * (members[0] and members[2]) + rng.normal(0, 0.5))
    game = estimate_coalition_values(sampler, 4, max_order=3, episodes_per_coalition=20, seed=11)
    pair = 0b0101
    d_hat = float(game.dividends().dividends[pair])
    half = 1.959963984540054 * game.dividend_stderr(pair)
    synergy_ok = abs(d_hat - s_true) <= half
    dt = time.perf_counter() - t0
    ok = uniform_flat and wins >= 4 and synergy_ok and dt < 300
    report(11, ok, f"uniform curve epoch-constant: {uniform_flat}; Harsanyi <= uniform final MAE in {wins}/5 seeds "
                   f"(>=4) [{', '.join(parts)}]; synergy {d_hat:.3f} vs s={s_true} (CI half-width {half:.3f}); "
                   f"{dt:.0f}s (<300s)")
    assert ok


def test_criterion_12_stationarity(report):
    t0 = time.perf_counter()
    rng = _rng(12)
    worst = 0.0
    peak_err = 0.0
    for _ in range(5):
        fam = PrecisionGameFamily.random(rng, 4)
        betas = np.full(4, 2.0)
        for _ in range(2):
            for i in range(4):
                betas[i] = locate_peak(fam.credit_curve(i, betas), 0.1, 10.0, grid=201, refine=6)
        peak_err = max(peak_err, float(np.max(np.abs(betas - fam.scales))))
        worst = max(worst, effective_stationarity_check([fam.total_curve(i, betas) for i in range(4)], betas))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and dt < 10
    report(12, ok, f"max |d sum(xi)/d beta_i| at located peaks {worst:.1e} (<=1e-3); "
                   f"peaks vs analytic {peak_err:.1e}; {dt:.1f}s (<10s)")
    assert ok
