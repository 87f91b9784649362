"""Vicsek flocking with noisy perception of neighbours' headings.

Each agent perceives every neighbour heading (itself included) through
Gaussian angular noise of variance ``1/beta``, turns to the circular mean of
what it perceived, adds intrinsic noise of std ``nu`` and moves at constant
speed in a periodic box.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .apc import ApcConfig, ApcState, apc_step


@dataclass(frozen=True)
class FlockConfig:
    n_agents: int = 100
    box_size: float = 10.0
    radius: float = 1.0
    speed: float = 0.03
    steps_per_episode: int = 500
    warmup_steps: int = 100

    def __post_init__(self):
        if min(self.n_agents, self.box_size, self.radius, self.speed, self.steps_per_episode) <= 0:
            raise ValueError("flock parameters must be positive")
        if self.radius > self.box_size / 2:
            raise ValueError("radius must not exceed half the box size")
        if not 0 <= self.warmup_steps < self.steps_per_episode:
            raise ValueError("warmup_steps must lie in [0, steps_per_episode)")


@dataclass(frozen=True)
class FlockState:
    positions: np.ndarray
    headings: np.ndarray


@dataclass(frozen=True)
class NoiseSchedule:
    nu_start: float
    nu_end: float
    episodes: int
    shape: str = "linear"

    def __post_init__(self):
        if self.nu_start < 0 or self.nu_end < 0:
            raise ValueError("intrinsic noise must be >= 0")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.shape != "linear":
            raise ValueError(f"unsupported schedule shape {self.shape!r}")

    def __call__(self, episode: int) -> float:
        if self.episodes == 1:
            return self.nu_start
        frac = min(max(episode / (self.episodes - 1), 0.0), 1.0)
        return self.nu_start + frac * (self.nu_end - self.nu_start)


def wrap_angle(theta):
    """Map angles into [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


def random_flock(cfg: FlockConfig, rng: np.random.Generator) -> FlockState:
    pos = rng.uniform(0.0, cfg.box_size, (cfg.n_agents, 2))
    theta = rng.uniform(-np.pi, np.pi, cfg.n_agents)
    return FlockState(pos, wrap_angle(theta))


def polarization(s: FlockState) -> float:
    """Length of the mean heading unit vector, in [0, 1]."""
    h = s.headings
    return float(min(math.hypot(np.cos(h).sum(), np.sin(h).sum()) / h.shape[0], 1.0))


def neighbour_pairs(positions: np.ndarray, cfg: FlockConfig) -> tuple[np.ndarray, np.ndarray]:
    """Directed (observer, neighbour) pairs within ``radius`` under the periodic metric, self included.

    Sorted by observer then neighbour so noise draws map to pairs deterministically.
    """
    n = positions.shape[0]
    tree = cKDTree(positions, boxsize=cfg.box_size)
    pairs = tree.query_pairs(cfg.radius, output_type="ndarray")
    self_idx = np.arange(n)
    obs = np.concatenate([self_idx, pairs[:, 0], pairs[:, 1]])
    nbr = np.concatenate([self_idx, pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((nbr, obs))
    return obs[order], nbr[order]


def step_flock(s: FlockState, cfg: FlockConfig, beta: float, nu: float,
               rng: np.random.Generator) -> FlockState:
    if not beta > 0:
        raise ValueError("beta must be > 0")
    if nu < 0:
        raise ValueError("nu must be >= 0")
    n = s.headings.shape[0]
    obs, nbr = neighbour_pairs(s.positions, cfg)
    perceived = s.headings[nbr] + rng.standard_normal(obs.shape[0]) / math.sqrt(beta)
    sx = np.bincount(obs, weights=np.cos(perceived), minlength=n)
    sy = np.bincount(obs, weights=np.sin(perceived), minlength=n)
    theta = np.arctan2(sy, sx) + nu * rng.standard_normal(n)
    theta = wrap_angle(theta)
    step = cfg.speed * np.column_stack([np.cos(theta), np.sin(theta)])
    pos = np.mod(s.positions + step, cfg.box_size)
    # mod can round up to exactly box_size for tiny negative inputs
    pos[pos >= cfg.box_size] = 0.0
    return FlockState(pos, theta)


def run_episode(cfg: FlockConfig, beta: float, nu: float, rng: np.random.Generator,
                state: FlockState | None = None) -> tuple[float, FlockState, np.ndarray]:
    """One episode; returns the post-warmup mean polarisation, final state and the Phi trace."""
    s = random_flock(cfg, rng) if state is None else state
    trace = np.empty(cfg.steps_per_episode)
    for t in range(cfg.steps_per_episode):
        s = step_flock(s, cfg, beta, nu, rng)
        trace[t] = polarization(s)
    return float(trace[cfg.warmup_steps:].mean()), s, trace


def _cell_rng(seed, *cell) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, cell)])))


def run_beta_sweep(cfg: FlockConfig, betas: Sequence[float], nu: float, episodes_per_beta: int,
                   seed=0) -> list[tuple[float, float, float]]:
    """Per-beta mean and std over independent episodes of post-warmup polarisation.

    Episode ``k`` uses the same generator stream for every beta (common random numbers).
    """
    if len(betas) == 0:
        raise ValueError("betas must be non-empty")
    out = []
    for beta in betas:
        phis = [run_episode(cfg, beta, nu, _cell_rng(seed, k))[0] for k in range(episodes_per_beta)]
        out.append((float(beta), float(np.mean(phis)), float(np.std(phis))))
    return out


def run_apc_flock(cfg: FlockConfig, schedule: NoiseSchedule, apc_cfg: ApcConfig, episodes: int,
                  seed=0, beta0: float = 7.6, adapt: bool = True,
                  persistent: bool = True) -> list[tuple[int, float, float, float]]:
    """Episodes under a noise schedule with beta driven by APC on episode polarisation.

    With ``adapt=False`` beta stays at ``beta0`` (fixed-precision baseline
    sharing the same random streams).  ``persistent`` carries the flock over
    between episodes.
    """
    state = ApcState.initial(beta0, apc_cfg, np.random.SeedSequence([int(seed), 1]))
    flock = None
    rows = []
    for ep in range(episodes):
        nu = schedule(ep)
        rng = _cell_rng(seed, 0, ep)
        if flock is None or not persistent:
            flock = random_flock(cfg, rng)
        phi, flock, _ = run_episode(cfg, state.beta, nu, rng, flock)
        rows.append((ep, nu, state.beta, phi))
        if adapt:
            state = apc_step(state, phi, apc_cfg)
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "phi_mean", "phi_std"])
        w.writerows(rows)


def write_apc_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "nu", "beta", "phi"])
        w.writerows(rows)


# Polarisation saturates in beta, so its slope is small next to episode
# noise; a large step and a clamp that reaches past the plateau are needed.
VICSEK_APC_CONFIG = ApcConfig(eta=20.0, beta_max=15.0)
VICSEK_SCHEDULE = NoiseSchedule(0.1, 0.5, 100)
VICSEK_FIXED_BETAS = (1.0, 4.0, 7.0, 10.0)
VICSEK_SWEEP_BETAS = tuple(float(b) for b in range(1, 15))
