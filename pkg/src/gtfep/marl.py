"""Trajectory-following agents with independent tabular Q-learning.

Each agent moves along its own reference path by a scalar progress
coordinate.  Actions nudge the progress velocity; the reward is the negative
distance to where the reference says the agent should be, minus a penalty for
near collisions.  Agents observe their offset and nearest-neighbour distances
through Gaussian noise of variance ``1/beta``.

Rollouts are vectorised over a leading batch of environment copies so that
paired evaluation episodes (one per masking pattern) run together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .apc import ApcConfig, ApcState, apc_step
from .traj import InsufficientDataError, TrackTable

ACTIONS = np.array([-1.0, 0.0, 1.0])
OBS_DIM = 5
DIST_SENTINEL = 2.0
N_NEIGHBOURS = 3
STRATEGIES = ("fixed_low", "fixed_star", "fixed_high", "random", "apc")


@dataclass(frozen=True)
class MarlConfig:
    n_agents: int = 10
    episode_len: int = 100
    collision_dist: float = 0.05
    collision_penalty: float = -10.0
    lr: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.1
    beta: float = 1.0
    accel: float = 0.1
    v_max: float = 2.0
    v0: float = 1.0

    def __post_init__(self):
        if self.n_agents < 1 or self.episode_len < 1:
            raise ValueError("n_agents and episode_len must be >= 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass(frozen=True)
class Bins:
    offset_edges: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, 8))
    dist_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 2.0, 6))

    def __post_init__(self):
        for e in (self.offset_edges, self.dist_edges):
            if len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("bin edges must be strictly increasing")

    @property
    def dims(self) -> tuple[int, ...]:
        no, nd = len(self.offset_edges) - 1, len(self.dist_edges) - 1
        return (no, no, nd, nd, nd)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.dims))


DEFAULT_BINS = Bins()


@dataclass(frozen=True)
class MarlState:
    """Progress and velocity of shape ``(..., N)``; a leading batch axis is allowed."""

    progress: np.ndarray
    velocity: np.ndarray
    step: int


def arc_length_path(points: np.ndarray) -> np.ndarray:
    """Resample a polyline at unit arc-length spacing (first and last points kept)."""
    pts = np.asarray(points, dtype=float)[:, :2]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return pts[:1].copy()
    grid = np.arange(0.0, s[-1], 1.0)
    if s[-1] - grid[-1] > 1e-9:
        grid = np.append(grid, s[-1])
    return np.column_stack([np.interp(grid, s, pts[:, 0]), np.interp(grid, s, pts[:, 1])])


class MarlEnv:
    """Agents drive along the arc-length-resampled path of their track.

    The reference at step ``t`` is the track's own position at time index
    ``t``, so an agent holding unit velocity stays on it only while the
    recorded vehicle moves at unit speed.
    """

    def __init__(self, cfg: MarlConfig, tracks: Sequence[np.ndarray]):
        usable = [np.asarray(p, dtype=float)[:, :2] for p in tracks if len(p) >= cfg.episode_len]
        if len(usable) < cfg.n_agents:
            raise InsufficientDataError(
                f"need {cfg.n_agents} tracks with >= {cfg.episode_len} points, found {len(usable)}")
        usable = usable[:cfg.n_agents]
        self.cfg = cfg
        self._agent = np.arange(cfg.n_agents)
        paths = [arc_length_path(p) for p in usable]
        self.lengths = np.array([p.shape[0] for p in paths])
        self.ref_lengths = np.array([p.shape[0] for p in usable])
        self.paths = _pad(paths)
        self.refs = _pad(usable)

    @classmethod
    def from_tracks(cls, cfg: MarlConfig, tracks: TrackTable) -> "MarlEnv":
        return cls(cfg, [t.xy for t in tracks])

    def reset(self, batch: tuple[int, ...] = ()) -> MarlState:
        shape = batch + (self.cfg.n_agents,)
        return MarlState(np.zeros(shape), np.full(shape, self.cfg.v0), 0)

    def positions(self, progress: np.ndarray) -> np.ndarray:
        """Linear interpolation along each path; shape ``(..., N, 2)``."""
        k = np.minimum(np.floor(progress).astype(int), self.lengths - 1)
        frac = (progress - k)[..., None]
        p0 = self.paths[self._agent, k]
        p1 = self.paths[self._agent, np.minimum(k + 1, self.lengths - 1)]
        return (1 - frac) * p0 + frac * p1

    def references(self, step: int) -> np.ndarray:
        return self.refs[self._agent, np.minimum(step, self.ref_lengths - 1)]

    def _pair_dists(self, pos: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(pos[..., :, None, :] - pos[..., None, :, :], axis=-1)
        d[..., self._agent, self._agent] = np.inf
        return d

    def observe(self, state: MarlState) -> np.ndarray:
        """True (noise-free) observations, shape ``(..., N, 5)``."""
        pos = self.positions(state.progress)
        offset = pos - self.references(state.step)
        near = np.sort(self._pair_dists(pos), axis=-1)[..., :N_NEIGHBOURS]
        if near.shape[-1] < N_NEIGHBOURS:
            pad = [(0, 0)] * (near.ndim - 1) + [(0, N_NEIGHBOURS - near.shape[-1])]
            near = np.pad(near, pad, constant_values=DIST_SENTINEL)
        near = np.where(np.isfinite(near), near, DIST_SENTINEL)
        return np.concatenate([offset, near], axis=-1)

    def step(self, state: MarlState, actions) -> tuple[MarlState, np.ndarray, np.ndarray, np.ndarray]:
        """Advance every copy; ``done`` has the batch shape."""
        a = np.asarray(actions, dtype=float)
        if a.shape != state.progress.shape or not np.all(np.isin(a, ACTIONS)):
            raise ValueError("actions must be one value in {-1, 0, 1} per agent")
        cfg = self.cfg
        vel = np.clip(state.velocity + cfg.accel * a, 0.0, cfg.v_max)
        progress = np.minimum(state.progress + vel, self.lengths - 1.0)
        nxt = MarlState(progress, vel, state.step + 1)
        pos = self.positions(progress)
        rewards = -np.linalg.norm(pos - self.references(nxt.step), axis=-1)
        if cfg.n_agents > 1:
            hit = self._pair_dists(pos).min(axis=-1) < cfg.collision_dist
            rewards = rewards + cfg.collision_penalty * hit
        exhausted = np.any(progress >= self.lengths - 1, axis=-1)
        out_of_time = nxt.step >= cfg.episode_len or nxt.step >= int(self.ref_lengths.min()) - 1
        done = exhausted | out_of_time
        return nxt, rewards, self.observe(nxt), done


def _pad(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ragged (n_i, 2) arrays, repeating each final row; indexing past the end is harmless."""
    m = max(a.shape[0] for a in arrays) + 1
    return np.stack([np.vstack([a, np.repeat(a[-1:], m - a.shape[0], 0)]) for a in arrays])


def env_reset(cfg: MarlConfig, tracks: TrackTable) -> tuple[MarlEnv, MarlState]:
    env = MarlEnv.from_tracks(cfg, tracks)
    return env, env.reset()


def noisy_observation(obs: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    return obs + rng.standard_normal(obs.shape) / np.sqrt(beta)


def _bin_indices(obs: np.ndarray, bins: Bins) -> np.ndarray:
    def cut(x, edges):
        return np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    return np.concatenate([cut(obs[..., :2], bins.offset_edges), cut(obs[..., 2:], bins.dist_edges)], axis=-1)


def discretize(obs, bins: Bins = DEFAULT_BINS) -> tuple[int, ...]:
    """Uniform bins; values outside the edges fall into the boundary bins."""
    return tuple(int(k) for k in _bin_indices(np.asarray(obs, dtype=float), bins))


def state_index(obs: np.ndarray, bins: Bins = DEFAULT_BINS) -> np.ndarray:
    """Flat table row of each observation in ``(..., 5)``."""
    idx = _bin_indices(obs, bins)
    return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), bins.dims)


class QTable:
    """Dense action values for every discretised observation, zero-initialised.

    Indexed by the 5-tuple of bin indices; rows are views into ``values``.
    """

    def __init__(self, bins: Bins = DEFAULT_BINS, values: np.ndarray | None = None):
        self.bins = bins
        self.values = np.zeros((bins.n_states, 3)) if values is None else values

    def _row(self, s) -> int:
        return int(np.ravel_multi_index(tuple(s), self.bins.dims))

    def __getitem__(self, s) -> np.ndarray:
        return self.values[self._row(s)]

    def values_of(self, s) -> np.ndarray:
        return self[s]

    def copy(self) -> "QTable":
        return QTable(self.bins, self.values.copy())


def new_q_tables(n_agents: int, bins: Bins = DEFAULT_BINS) -> np.ndarray:
    """Stacked per-agent tables, shape ``(N, n_states, 3)``; ``QTable(bins, q[i])`` views agent i."""
    return np.zeros((n_agents, bins.n_states, 3))


def q_update(q: QTable, s, a: int, r: float, s_next, cfg: MarlConfig, terminal: bool = False) -> QTable:
    """In-place one-step Q-learning update; returns ``q``."""
    boot = 0.0 if (terminal or s_next is None) else cfg.gamma * float(np.max(q[s_next]))
    row = q[s]
    row[a] += cfg.lr * (r + boot - row[a])
    return q


def greedy_action(q: QTable, s) -> int:
    return int(np.argmax(q[s]))  # argmax breaks ties toward the lowest index


def rollout(env: MarlEnv, q: np.ndarray, beta: float, rng: np.random.Generator,
            masks: np.ndarray | None = None, learn: bool = True, explore: bool = True,
            bins: Bins = DEFAULT_BINS) -> np.ndarray:
    """Run one episode in each of ``V`` paired copies; returns per-agent totals ``(V, N)``.

    ``masks[v, i]`` replaces agent ``i``'s observation with zeros in copy ``v``.
    All copies share the same noise and exploration draws, and learning (if
    enabled) is applied from copy 0 only.  A copy stops accumulating reward
    once it is done.
    """
    cfg = env.cfg
    n = cfg.n_agents
    masks = np.zeros((1, n), dtype=bool) if masks is None else np.asarray(masks, dtype=bool)
    v = masks.shape[0]
    agent = np.arange(n)

    def rows(obs):
        o = obs + rng.standard_normal((n, OBS_DIM)) / np.sqrt(beta)
        o = np.where(masks[..., None], 0.0, o)
        return state_index(o, bins)

    state = env.reset((v,))
    s = rows(env.observe(state))
    totals = np.zeros((v, n))
    live = np.ones(v, dtype=bool)
    while live.any():
        u = rng.random(n)
        rand_a = rng.integers(0, 3, n)
        acts = np.argmax(q[agent, s], axis=-1)
        if explore:
            acts = np.where(u < cfg.epsilon, rand_a, acts)
        state, r, obs, done = env.step(state, ACTIONS[acts])
        s_next = rows(obs)
        totals[live] += r[live]
        if learn and live[0]:
            term = bool(done[0])
            boot = 0.0 if term else cfg.gamma * q[agent, s_next[0]].max(axis=-1)
            cur = q[agent, s[0], acts[0]]
            q[agent, s[0], acts[0]] = cur + cfg.lr * (r[0] + boot - cur)
        live &= ~done
        s = s_next
    return totals


def run_episode(env: MarlEnv, q: np.ndarray, beta: float, rng: np.random.Generator,
                learn: bool = True, explore: bool = True, masked=None,
                bins: Bins = DEFAULT_BINS) -> np.ndarray:
    """Single copy of :func:`rollout`; returns per-agent total rewards."""
    masks = None if masked is None else np.asarray(masked, dtype=bool)[None, :]
    return rollout(env, q, beta, rng, masks, learn, explore, bins)[0]


def masking_credit(env: MarlEnv, q: np.ndarray, beta: float, n_perms: int = 5,
                   seed=0, bins: Bins = DEFAULT_BINS) -> np.ndarray:
    """Per-agent drop in total team reward when that agent's observation is zeroed.

    Each of the ``n_perms`` evaluation episodes is greedy, does not learn and
    runs the unmasked team and every single-agent mask on shared draws.
    """
    n = env.cfg.n_agents
    masks = np.vstack([np.zeros((1, n), dtype=bool), np.eye(n, dtype=bool)])
    credit = np.zeros(n)
    for k in range(n_perms):
        team = rollout(env, q, beta, _rng([*_words(seed), k]), masks, learn=False, explore=False,
                       bins=bins).sum(axis=1)
        credit += team[0] - team[1:]
    return credit / n_perms


def _words(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


def _rng(words) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


# Masking credit is in reward units (hundreds to thousands), so the step is small.
MARL_APC_CONFIG = ApcConfig(eta=0.005)


@dataclass(frozen=True)
class MarlExperiment:
    episodes: int = 200
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    beta_low: float = 0.5
    beta_star: float = 2.5
    beta_high: float = 5.0
    beta0: float = 1.0
    n_perms: int = 5
    apc: ApcConfig = MARL_APC_CONFIG


def strategy_beta(exp: MarlExperiment, strategy: str) -> float | None:
    return {"fixed_low": exp.beta_low, "fixed_star": exp.beta_star,
            "fixed_high": exp.beta_high}.get(strategy)


def run_strategy(env: MarlEnv, strategy: str, exp: MarlExperiment, seed: int,
                 bins: Bins = DEFAULT_BINS) -> list[tuple[str, int, int, float, float]]:
    """One (strategy, seed) run; rows ``(strategy, seed, episode, beta, avg_reward)``.

    ``avg_reward`` is the episode's total reward averaged over agents.  The
    Q-tables persist across episodes; only beta changes.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    fixed = strategy_beta(exp, strategy)
    q = new_q_tables(env.cfg.n_agents, bins)
    apc_state = ApcState.initial(exp.beta0, exp.apc, np.random.SeedSequence([seed, 7]))
    pick = _rng([seed, 8])
    beta = fixed if fixed is not None else apc_state.beta
    rows = []
    for ep in range(exp.episodes):
        totals = run_episode(env, q, beta, _rng([seed, 1, ep]), bins=bins)
        rows.append((strategy, seed, ep, float(beta), float(totals.mean())))
        if strategy == "apc":
            credit = masking_credit(env, q, beta, exp.n_perms, [seed, 2, ep], bins)
            apc_state = apc_step(apc_state, float(credit.mean()), exp.apc)
            beta = apc_state.beta
        elif strategy == "random" and (ep + 1) % exp.apc.update_period == 0:
            beta = float(pick.uniform(exp.apc.beta_min, exp.apc.beta_max))
    return rows


def run_marl_experiment(env: MarlEnv, exp: MarlExperiment = MarlExperiment(),
                        strategies: Sequence[str] = STRATEGIES) -> list[tuple[str, int, int, float, float]]:
    rows = []
    for seed in exp.seeds:
        for strategy in strategies:
            rows.extend(run_strategy(env, strategy, exp, int(seed)))
    return rows


def final_mean_reward(rows, strategy: str, last: int = 50, seed: int | None = None) -> float:
    sel = [r for r in rows if r[0] == strategy and (seed is None or r[1] == seed)]
    if not sel:
        raise ValueError(f"no rows for strategy {strategy!r}")
    max_ep = max(r[2] for r in sel)
    return float(np.mean([r[4] for r in sel if r[2] > max_ep - last]))


def write_marl_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed", "episode", "beta", "avg_reward"])
        w.writerows(rows)
