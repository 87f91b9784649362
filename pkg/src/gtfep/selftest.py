"""Quick invariant checks behind ``gtfep selftest`` (a few seconds in total)."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .apc import ApcConfig, ApcState, apc_step, fit_quadratic
from .coalition import (CharacteristicFunction, EnergyTable, collective_free_energy, gibbs_distribution,
                        mobius_dividends, reconstruct_setfunction, shapley_exact, shapley_from_dividends)
from .meanfield import PairwiseEnergyModel, attention_weights, meanfield_fixed_point
from .seeds import derive_seed
from .vicsek import FlockConfig, polarization, random_flock, step_flock

Check = tuple[str, bool, str]


def _mobius(rng) -> Check:
    worst_rt = worst_sh = 0.0
    for n in range(2, 7):
        v = np.concatenate([[0.0], rng.normal(size=(1 << n) - 1)])
        d = mobius_dividends(v)
        worst_rt = max(worst_rt, float(np.max(np.abs(reconstruct_setfunction(d) - v))))
        cf = CharacteristicFunction(v)
        worst_sh = max(worst_sh, float(np.max(np.abs(shapley_from_dividends(d).credits - shapley_exact(cf).credits))))
    return "mobius", worst_rt <= 1e-12 and worst_sh <= 1e-10, f"round trip {worst_rt:.1e}, shapley {worst_sh:.1e}"


def _gibbs(rng) -> Check:
    e = EnergyTable(rng.normal(size=16), 2.0)
    p = gibbs_distribution(e)
    f_star = collective_free_energy(p.probs, e).free_energy
    worst = math.inf
    for q in rng.dirichlet(np.ones(16), 200):
        worst = min(worst, collective_free_energy(q, e).free_energy - f_star)
    err = abs(f_star + p.log_partition / e.beta)
    return "gibbs", worst >= 0 and err <= 1e-12, f"min F(p)-F(p*) {worst:.2e}, |F(p*)+lnZ/beta| {err:.1e}"


def _meanfield(rng) -> Check:
    m = PairwiseEnergyModel.random(rng, 5, beta=1.0)
    st = meanfield_fixed_point(m)
    w = attention_weights(m, st.q)
    ok = st.converged and abs(w.sum() - 1) <= 1e-12
    return "meanfield", ok, f"residual {st.residual:.1e}, weight sum error {abs(w.sum() - 1):.1e}"


def _apc(rng) -> Check:
    cfg = ApcConfig()
    state = ApcState.initial(1.0, cfg, 0)
    inside = True
    for _ in range(2000):
        state = apc_step(state, float(rng.normal(scale=100.0)), cfg)
        inside &= cfg.beta_min <= state.beta <= cfg.beta_max
    state = ApcState.initial(1.0, cfg, 0)
    for _ in range(300):
        state = apc_step(state, -(state.beta - 4.0) ** 2, cfg)
    fit = fit_quadratic([(b, -(b - 4.0) ** 2) for b in (1.0, 2.0, 3.0, 5.0)])
    ok = inside and 3.7 <= state.beta <= 4.3 and abs(fit.peak - 4.0) < 1e-9
    return "apc", ok, f"clamp respected {inside}, final beta on -(b-4)^2 {state.beta:.3f}"


def _vicsek(rng) -> Check:
    cfg = FlockConfig(n_agents=30, steps_per_episode=20, warmup_steps=0)
    s = random_flock(cfg, rng)
    ok = True
    for _ in range(20):
        s = step_flock(s, cfg, 5.0, 0.1, rng)
        phi = polarization(s)
        ok &= 0.0 <= phi <= 1.0 and bool(np.all((s.positions >= 0) & (s.positions < cfg.box_size)))
    return "vicsek", ok, f"phi in [0,1] and positions in box over 20 steps (last phi {phi:.3f})"


def _seeds(rng) -> Check:
    a = [derive_seed(7, "cell", k) for k in range(2000)]
    ok = len(set(a)) == len(a) and a == [derive_seed(7, "cell", k) for k in range(2000)]
    ok &= derive_seed(7, "a", 0) != derive_seed(7, "b", 0)
    return "seeds", ok, "2000 derived seeds distinct and repeatable"


CHECKS: tuple[Callable[[np.random.Generator], Check], ...] = (_mobius, _gibbs, _meanfield, _apc, _vicsek, _seeds)


def run_selftest(seed: int = 0) -> list[Check]:
    out = []
    for k, check in enumerate(CHECKS):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**63, k])))
        try:
            out.append(check(rng))
        except Exception as exc:  # a crash is a failed check, reported by name
            out.append((check.__name__.lstrip("_"), False, f"{type(exc).__name__}: {exc}"))
    return out
