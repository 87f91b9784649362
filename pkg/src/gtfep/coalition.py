"""Exact cooperative-game machinery on the subset lattice.

Coalitions are bitmask integers over agents ``0..N-1``; a set function is a
float array of length ``2**N`` indexed by mask.  Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

MAX_AGENTS = 20
MAX_EXACT_SHAPLEY_AGENTS = 8
MAX_NASH_PLAYERS = 4
MAX_NASH_ACTIONS = 4


class LatticeTooLargeError(ValueError):
    """Raised when a set function would need more than ``2**MAX_AGENTS`` entries."""


def popcount(masks: np.ndarray) -> np.ndarray:
    """Number of set bits of every entry of an integer array."""
    masks = np.asarray(masks, dtype=np.int64)
    counts = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while np.any(m):
        counts += m & 1
        m >>= 1
    return counts


def _n_from_table(table: np.ndarray) -> int:
    size = table.shape[0]
    n = size.bit_length() - 1
    if size < 1 or (1 << n) != size:
        raise ValueError(f"set-function table length {size} is not a power of two")
    if n > MAX_AGENTS:
        raise LatticeTooLargeError(f"N={n} exceeds the exhaustive limit of {MAX_AGENTS} agents")
    return n


def _as_table(f) -> np.ndarray:
    if isinstance(f, (CharacteristicFunction,)):
        return f.values
    if isinstance(f, EnergyTable):
        return f.energies
    if isinstance(f, DividendTable):
        return f.dividends
    table = np.asarray(f, dtype=float)
    if table.ndim != 1:
        raise ValueError("set-function table must be one-dimensional")
    return table


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Coalition:
    members: int
    n_agents: int

    def __post_init__(self):
        if not 0 <= self.n_agents <= MAX_AGENTS:
            raise LatticeTooLargeError(f"n_agents={self.n_agents} outside [0, {MAX_AGENTS}]")
        if self.members < 0 or self.members >> self.n_agents:
            raise ValueError(f"mask {self.members:#x} has members outside 0..{self.n_agents - 1}")

    @classmethod
    def of(cls, agents: Sequence[int], n_agents: int) -> "Coalition":
        mask = 0
        for i in agents:
            mask |= 1 << int(i)
        return cls(mask, n_agents)

    @classmethod
    def grand(cls, n_agents: int) -> "Coalition":
        return cls((1 << n_agents) - 1, n_agents)

    def __contains__(self, agent: int) -> bool:
        return bool(self.members >> agent & 1)

    def __iter__(self):
        return (i for i in range(self.n_agents) if self.members >> i & 1)

    def __len__(self) -> int:
        return bin(self.members).count("1")


@dataclass(frozen=True)
class CharacteristicFunction:
    """Coalition values ``v(C)`` over all ``2**N`` masks, with ``v(empty) = 0``."""

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        _n_from_table(values)
        if values[0] != 0.0:
            raise ValueError(f"v(empty) must be exactly 0, got {values[0]!r}")
        object.__setattr__(self, "values", values)

    @property
    def n_agents(self) -> int:
        return _n_from_table(self.values)

    def __call__(self, mask: int) -> float:
        return float(self.values[mask])

    @classmethod
    def from_function(cls, fn: Callable[[int], float], n_agents: int) -> "CharacteristicFunction":
        if n_agents > MAX_AGENTS:
            raise LatticeTooLargeError(f"N={n_agents} exceeds {MAX_AGENTS}")
        values = np.array([0.0] + [fn(m) for m in range(1, 1 << n_agents)])
        return cls(values)


@dataclass(frozen=True)
class EnergyTable:
    """Coalition energies evaluated at precision ``beta``."""

    energies: np.ndarray
    beta: float

    def __post_init__(self):
        energies = _readonly(self.energies)
        _n_from_table(energies)
        object.__setattr__(self, "energies", energies)

    @property
    def n_agents(self) -> int:
        return _n_from_table(self.energies)

    @classmethod
    def from_values(cls, v: CharacteristicFunction, beta: float) -> "EnergyTable":
        return cls(-v.values, beta)


@dataclass(frozen=True)
class DividendTable:
    dividends: np.ndarray

    def __post_init__(self):
        dividends = _readonly(self.dividends)
        _n_from_table(dividends)
        object.__setattr__(self, "dividends", dividends)

    @property
    def n_agents(self) -> int:
        return _n_from_table(self.dividends)

    def truncated(self, max_order: int) -> "DividendTable":
        """Copy with every dividend of order above ``max_order`` set to zero."""
        d = self.dividends.copy()
        d[popcount(np.arange(d.shape[0])) > max_order] = 0.0
        return DividendTable(d)


@dataclass(frozen=True)
class ShapleyVector:
    credits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "credits", _readonly(self.credits))

    @property
    def total(self) -> float:
        return float(self.credits.sum())

    def __len__(self) -> int:
        return self.credits.shape[0]

    def __getitem__(self, i):
        return self.credits[i]


@dataclass(frozen=True)
class GibbsDistribution:
    probs: np.ndarray
    log_partition: float

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))


@dataclass(frozen=True)
class FreeEnergyReport:
    expected_energy: float
    entropy: float
    free_energy: float
    beta: float


# -- subset transforms -------------------------------------------------------

def _subset_sum_inplace(a: np.ndarray, n: int, sign: float) -> None:
    # Axis 1 of the reshaped view is bit i of the mask.
    for i in range(n):
        view = a.reshape(-1, 2, 1 << i)
        view[:, 1, :] += sign * view[:, 0, :]


def zeta_transform(f) -> np.ndarray:
    """``g(C) = sum_{B subset C} f(B)`` in O(N 2^N)."""
    a = np.array(_as_table(f), dtype=float)
    _subset_sum_inplace(a, _n_from_table(a), 1.0)
    return a


def mobius_transform(f) -> np.ndarray:
    """Inverse of :func:`zeta_transform`."""
    a = np.array(_as_table(f), dtype=float)
    _subset_sum_inplace(a, _n_from_table(a), -1.0)
    return a


def mobius_dividends(f) -> DividendTable:
    """Harsanyi dividends of a set function with ``f(empty) = 0``.

    ``dividends[B] = sum_{A subset B} (-1)**(|B|-|A|) f(A)``, computed with the
    fast in-place Mobius transform.
    """
    table = _as_table(f)
    _n_from_table(table)
    if table[0] != 0.0:
        raise ValueError(f"set function must vanish on the empty coalition, got {table[0]!r}")
    return DividendTable(mobius_transform(table))


def reconstruct_setfunction(d: DividendTable) -> np.ndarray:
    return zeta_transform(d.dividends)


def mobius_dividends_naive(f) -> np.ndarray:
    """Direct double-sum definition of the dividends; O(3^N), used as a test oracle."""
    table = _as_table(f)
    n = _n_from_table(table)
    out = np.zeros_like(table, dtype=float)
    for b in range(1 << n):
        size_b = bin(b).count("1")
        total = 0.0
        a = b
        while True:
            total += (-1) ** (size_b - bin(a).count("1")) * table[a]
            if a == 0:
                break
            a = (a - 1) & b
        out[b] = total
    return out


# -- Shapley values ----------------------------------------------------------

def shapley_from_dividends(d: DividendTable) -> ShapleyVector:
    """Each dividend is shared equally among the members of its coalition."""
    n = d.n_agents
    masks = np.arange(1 << n)
    sizes = popcount(masks)
    share = np.zeros(1 << n)
    share[1:] = d.dividends[1:] / sizes[1:]
    credits = np.array([share[(masks >> i) & 1 == 1].sum() for i in range(n)])
    return ShapleyVector(credits)


def _value_fn(v) -> tuple[Callable[[int], float], int]:
    if isinstance(v, CharacteristicFunction):
        return v, v.n_agents
    raise TypeError("expected a CharacteristicFunction")


def permutation_shapley(value: Callable[[int], float], n_agents: int,
                        orders: Sequence[Sequence[int]]) -> ShapleyVector:
    """Average marginal contributions of each agent over the given orderings.

    Every ordering telescopes to ``value(grand) - value(0)`` so the estimate is
    efficient for any set of orderings.
    """
    if len(orders) == 0:
        raise ValueError("need at least one ordering")
    totals = np.zeros(n_agents)
    for order in orders:
        mask = 0
        prev = value(0) if n_agents else 0.0
        for i in order:
            mask |= 1 << int(i)
            cur = value(mask)
            totals[i] += cur - prev
            prev = cur
    return ShapleyVector(totals / len(orders))


def shapley_exact(v: CharacteristicFunction) -> ShapleyVector:
    """Average marginal contribution over all ``N!`` orderings (N <= 8)."""
    fn, n = _value_fn(v)
    if n > MAX_EXACT_SHAPLEY_AGENTS:
        raise ValueError(f"exact permutation Shapley limited to N <= {MAX_EXACT_SHAPLEY_AGENTS}, got {n}")
    return permutation_shapley(fn, n, list(itertools.permutations(range(n))))


def sample_orders(n_agents: int, n_perms: int, rng: np.random.Generator,
                  replace: bool = True) -> list[tuple[int, ...]]:
    """Draw agent orderings; without replacement, ``n_perms >= N!`` yields all of them."""
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    if not replace:
        if n_perms >= math.factorial(n_agents):
            return list(itertools.permutations(range(n_agents)))
        seen: dict[tuple[int, ...], None] = {}
        while len(seen) < n_perms:
            seen.setdefault(tuple(int(x) for x in rng.permutation(n_agents)), None)
        return list(seen)
    return [tuple(int(x) for x in rng.permutation(n_agents)) for _ in range(n_perms)]


def shapley_monte_carlo(v, n_perms: int, seed=None, *, n_agents: int | None = None,
                        replace: bool = True) -> ShapleyVector:
    """Permutation-sampling Shapley estimate.

    ``v`` is a :class:`CharacteristicFunction` or a callable ``mask -> value``
    (then ``n_agents`` is required).  Deterministic for a fixed ``seed``.
    """
    if isinstance(v, CharacteristicFunction):
        fn, n = v, v.n_agents
    else:
        if n_agents is None:
            raise ValueError("n_agents is required when v is a callable")
        fn, n = v, n_agents
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return permutation_shapley(fn, n, sample_orders(n, n_perms, rng, replace=replace))


# -- Gibbs posterior and free energy ------------------------------------------

def gibbs_distribution(e: EnergyTable) -> GibbsDistribution:
    """``P(C) = exp(-beta E(C)) / Z`` evaluated in log space."""
    if not e.beta > 0:
        raise ValueError(f"beta must be > 0, got {e.beta}")
    if not np.all(np.isfinite(e.energies)):
        raise ValueError("energies must be finite")
    logits = -e.beta * e.energies
    log_z = float(logsumexp(logits))
    probs = np.exp(logits - log_z)
    return GibbsDistribution(probs / probs.sum(), log_z)


def entropy(p) -> float:
    """Shannon entropy in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def collective_free_energy(p, e: EnergyTable, tol: float = 1e-9) -> FreeEnergyReport:
    p = np.asarray(p, dtype=float)
    if p.shape != e.energies.shape:
        raise ValueError(f"distribution shape {p.shape} does not match energy table {e.energies.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"distribution must be non-negative and sum to 1 (sum={p.sum()!r})")
    expected = float(p @ e.energies)
    h = entropy(p)
    return FreeEnergyReport(expected, h, expected - h / e.beta, e.beta)


# -- normal-form games and the epsilon-Nash check -------------------------------

@dataclass(frozen=True)
class NormalFormGame:
    """Finite game; ``utilities[a_1, ..., a_N, i]`` is player i's payoff."""

    utilities: np.ndarray
    default_actions: tuple[int, ...] = field(default=())

    def __post_init__(self):
        u = _readonly(self.utilities)
        if u.size == 0:
            raise ValueError("empty utility table")
        n = u.ndim - 1
        if n < 1 or u.shape[-1] != n:
            raise ValueError(f"utility array of shape {u.shape} needs a trailing axis of length N={n}")
        defaults = tuple(self.default_actions) or (0,) * n
        if len(defaults) != n or any(not 0 <= a < k for a, k in zip(defaults, u.shape[:-1])):
            raise ValueError(f"invalid default actions {defaults} for action counts {u.shape[:-1]}")
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "default_actions", defaults)

    @property
    def n_players(self) -> int:
        return self.utilities.ndim - 1

    @property
    def actions_per_player(self) -> tuple[int, ...]:
        return self.utilities.shape[:-1]

    @classmethod
    def random(cls, rng: np.random.Generator, actions: Sequence[int],
               default_actions: Sequence[int] | None = None) -> "NormalFormGame":
        """I.i.d. uniform [0, 1) payoffs for every player and profile."""
        shape = tuple(actions) + (len(actions),)
        return cls(rng.random(shape), tuple(default_actions or ()))


@dataclass(frozen=True)
class NashCheckReport:
    max_deviation_gain: float
    bound: float
    beta: float

    @property
    def holds(self) -> bool:
        return self.max_deviation_gain <= self.bound


def nash_bound(n_players: int, beta: float) -> float:
    return n_players * math.log(2.0) / beta


def best_coalition_profile(g: NormalFormGame, c: Coalition) -> tuple[tuple[int, ...], float]:
    """Pure profile maximizing the members' summed utility with non-members at defaults.

    Ties go to the lexicographically first profile of the members' actions.
    """
    members = list(c)
    profile = list(g.default_actions)
    if not members:
        return tuple(profile), 0.0
    best_value, best_profile = -math.inf, None
    for acts in itertools.product(*(range(g.actions_per_player[i]) for i in members)):
        for i, a in zip(members, acts):
            profile[i] = a
        value = float(g.utilities[tuple(profile)][members].sum())
        if value > best_value:
            best_value, best_profile = value, tuple(profile)
    return best_profile, best_value


def coalition_value_from_game(g: NormalFormGame, c: Coalition) -> float:
    if c.n_agents != g.n_players:
        raise ValueError("coalition and game disagree on the number of players")
    return best_coalition_profile(g, c)[1]


def game_characteristic_function(g: NormalFormGame) -> CharacteristicFunction:
    n = g.n_players
    return CharacteristicFunction.from_function(
        lambda m: coalition_value_from_game(g, Coalition(m, n)), n)


def gibbs_joint_policy(g: NormalFormGame, beta: float) -> dict[tuple[int, ...], float]:
    """Joint-action distribution: draw C from the Gibbs posterior, C plays its best profile."""
    n = g.n_players
    post = gibbs_distribution(EnergyTable.from_values(game_characteristic_function(g), beta))
    policy: dict[tuple[int, ...], float] = {}
    for mask in range(1 << n):
        profile, _ = best_coalition_profile(g, Coalition(mask, n))
        policy[profile] = policy.get(profile, 0.0) + float(post.probs[mask])
    return policy


def verify_eps_nash(g: NormalFormGame, beta: float) -> NashCheckReport:
    """Largest gain any player gets from a unilateral pure deviation against the Gibbs policy."""
    n = g.n_players
    if n > MAX_NASH_PLAYERS or max(g.actions_per_player) > MAX_NASH_ACTIONS:
        raise ValueError(f"exhaustive deviation search limited to <= {MAX_NASH_PLAYERS} players "
                         f"and <= {MAX_NASH_ACTIONS} actions")
    policy = gibbs_joint_policy(g, beta)
    worst = -math.inf
    for i in range(n):
        base = sum(p * g.utilities[a][i] for a, p in policy.items())
        for dev in range(g.actions_per_player[i]):
            alt = sum(p * g.utilities[a[:i] + (dev,) + a[i + 1:]][i] for a, p in policy.items())
            worst = max(worst, alt - base)
    return NashCheckReport(float(worst), nash_bound(n, beta), beta)


# -- stationarity of the effective free energy ----------------------------------

def effective_stationarity_check(xi_curves: Sequence[Callable[[float], float]],
                                 peaks: Sequence[float], step: float = 1e-4) -> float:
    """Max |d(sum_i xi_i)/d beta_i| at ``peaks`` by central differences.

    ``xi_curves[i]`` maps agent i's precision to its credit.
    """
    if len(xi_curves) != len(peaks):
        raise ValueError("one peak per credit curve is required")
    worst = 0.0
    for curve, b in zip(xi_curves, peaks):
        grad = (curve(b + step) - curve(b - step)) / (2 * step)
        worst = max(worst, abs(grad))
    return worst


def locate_peak(curve: Callable[[float], float], lo: float, hi: float,
                grid: int = 2001, refine: int = 3) -> float:
    """Maximizer of a unimodal curve on [lo, hi] by repeated grid search."""
    for _ in range(refine + 1):
        xs = np.linspace(lo, hi, grid)
        ys = np.array([curve(x) for x in xs])
        k = int(np.argmax(ys))
        width = xs[1] - xs[0]
        lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
        if width < 1e-12:
            break
    return float(xs[k])


@dataclass(frozen=True)
class PrecisionGameFamily:
    """Games whose dividends are ``c_B * prod_{i in B} f_i(beta_i)`` with ``f_i(b) = b exp(-b / s_i)``.

    ``f_i`` peaks at ``s_i``, so every agent's credit curve is an inverted U in
    its own precision.  ``weights`` holds ``c_B`` for every mask (index 0 ignored).
    """

    weights: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        n = _n_from_table(w)
        s = _readonly(self.scales)
        if s.shape != (n,) or np.any(s <= 0):
            raise ValueError("need one positive scale per agent")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", s)

    @property
    def n_agents(self) -> int:
        return self.scales.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, scale_range=(1.0, 5.0)) -> "PrecisionGameFamily":
        w = rng.uniform(0.2, 1.0, 1 << n)
        w[0] = 0.0
        return cls(w, rng.uniform(*scale_range, n))

    def dividends(self, betas) -> DividendTable:
        b = np.asarray(betas, dtype=float)
        f = b * np.exp(-b / self.scales)
        n = self.n_agents
        masks = np.arange(1 << n)
        prod = np.ones(1 << n)
        for i in range(n):
            prod = np.where((masks >> i) & 1, prod * f[i], prod)
        d = self.weights * prod
        d[0] = 0.0
        return DividendTable(d)

    def credits(self, betas) -> np.ndarray:
        return shapley_from_dividends(self.dividends(betas)).credits

    def credit_curve(self, i: int, betas) -> Callable[[float], float]:
        """Agent i's credit as a function of its own precision, the others held at ``betas``."""
        base = np.array(betas, dtype=float)

        def xi(b: float) -> float:
            cur = base.copy()
            cur[i] = b
            return float(self.credits(cur)[i])
        return xi

    def total_curve(self, i: int, betas) -> Callable[[float], float]:
        base = np.array(betas, dtype=float)

        def total(b: float) -> float:
            cur = base.copy()
            cur[i] = b
            return float(self.credits(cur).sum())
        return total
