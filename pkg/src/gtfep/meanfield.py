"""Pairwise coalition energies and their mean-field (independent Bernoulli) approximation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .coalition import Coalition, DividendTable

_Q_CLAMP = 1e-12


@dataclass(frozen=True)
class PairwiseEnergyModel:
    phi: np.ndarray
    psi: np.ndarray
    beta: float

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        psi = np.array(self.psi, dtype=float)
        n = phi.shape[0]
        if phi.ndim != 1 or psi.shape != (n, n):
            raise ValueError(f"phi must be length N and psi N x N; got {phi.shape}, {psi.shape}")
        if not np.allclose(psi, psi.T, rtol=0, atol=1e-12) or np.any(np.diag(psi) != 0):
            raise ValueError("psi must be symmetric with a zero diagonal")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def n_agents(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, beta: float = 1.0,
               phi_scale: float = 1.0, psi_scale: float = 0.5) -> "PairwiseEnergyModel":
        phi = rng.normal(0.0, phi_scale, n)
        upper = np.triu(rng.normal(0.0, psi_scale, (n, n)), 1)
        return cls(phi, upper + upper.T, beta)

    def dividends(self) -> DividendTable:
        """The model as a dividend table with orders 1 and 2 only."""
        n = self.n_agents
        d = np.zeros(1 << n)
        for i in range(n):
            d[1 << i] = self.phi[i]
        for i, j in itertools.combinations(range(n), 2):
            d[(1 << i) | (1 << j)] = self.psi[i, j]
        return DividendTable(d)


@dataclass(frozen=True)
class MeanFieldState:
    q: np.ndarray
    residual: float
    iterations: int
    converged: bool


def pairwise_energy(m: PairwiseEnergyModel, c: Coalition) -> float:
    idx = np.fromiter(c, dtype=int)
    if idx.size == 0:
        return 0.0
    return float(m.phi[idx].sum() + 0.5 * m.psi[np.ix_(idx, idx)].sum())


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or np.any(q >= 1):
        raise ValueError("mean-field marginals must lie strictly inside (0, 1)")
    return q


def local_fields(m: PairwiseEnergyModel, q) -> np.ndarray:
    """``-beta * (phi_i + sum_j psi_ij q_j)`` for every agent."""
    return -m.beta * (m.phi + m.psi @ np.asarray(q, dtype=float))


def meanfield_free_energy(q, m: PairwiseEnergyModel) -> float:
    q = np.clip(_check_q(q), _Q_CLAMP, 1 - _Q_CLAMP)
    energy = m.phi @ q + 0.5 * q @ m.psi @ q
    neg_entropy = np.sum(q * np.log(q) + (1 - q) * np.log1p(-q))
    return float(energy + neg_entropy / m.beta)


def meanfield_gradient(q, m: PairwiseEnergyModel) -> np.ndarray:
    q = np.clip(_check_q(q), _Q_CLAMP, 1 - _Q_CLAMP)
    return m.phi + m.psi @ q + (np.log(q) - np.log1p(-q)) / m.beta


def meanfield_fixed_point(m: PairwiseEnergyModel, init_q=None, tol: float = 1e-10,
                          max_iter: int = 10_000, damping: float = 0.5) -> MeanFieldState:
    """Damped synchronous iteration of ``q_i <- sigma(-beta phi_i - beta sum_j psi_ij q_j)``.

    Non-convergence is returned with ``converged=False`` rather than raised.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    q = np.full(m.n_agents, 0.5) if init_q is None else _check_q(init_q).copy()
    residual = float(np.max(np.abs(q - expit(local_fields(m, q))), initial=0.0))
    it = 0
    while residual >= tol and it < max_iter:
        q = (1 - damping) * q + damping * expit(local_fields(m, q))
        q = np.clip(q, _Q_CLAMP, 1 - _Q_CLAMP)
        residual = float(np.max(np.abs(q - expit(local_fields(m, q))), initial=0.0))
        it += 1
    return MeanFieldState(q, residual, it, residual < tol)


def attention_weights(m: PairwiseEnergyModel, q) -> np.ndarray:
    """Softmax over agents of the mean-field local fields."""
    logits = local_fields(m, q)
    return np.exp(logits - logsumexp(logits))
