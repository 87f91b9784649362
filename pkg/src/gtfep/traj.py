"""Cooperative trajectory prediction: track ingestion, window samples, noisy training and credit.

Coordinates are treated as planar.  The linear predictor is translation
equivariant: it maps past positions, taken relative to the last observed
position, to future displacements from that same position.  With zero
weights it reduces to the constant-position forecast, which is also the
reference that coalition values are measured against.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .apc import ApcConfig, ApcState, QuadraticFit, apc_step, fit_quadratic
from .coalition import ShapleyVector, permutation_shapley, sample_orders

REQUIRED_COLUMNS = ("track_id", "type", "lon", "lat", "time")
MIN_TRACK_POINTS = 20
ZENODO_RECORD = "https://zenodo.org/records/15077435"
DEFAULT_BETAS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


class EmptyDataError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class DatasetNotFoundError(FileNotFoundError):
    def __init__(self, path):
        super().__init__(
            f"dataset file {str(path)!r} not found; download D1_AM2_F1.csv (or D2_PM1_L1.csv) from the "
            f"public Zenodo record 'Vehicle Trajectory Dataset from Drone-Collected Data at Three Swiss "
            f"Roundabouts' ({ZENODO_RECORD}) and pass its path with --dataset, or use --synthetic")


# -- ingestion ----------------------------------------------------------------

@dataclass(frozen=True)
class Track:
    track_id: str
    points: np.ndarray  # (n, 3): lon, lat, time

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TrackTable:
    tracks: tuple[Track, ...]
    dropped: tuple[str, ...] = ()
    duplicates_removed: int = 0

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def head(self, n: int) -> "TrackTable":
        return TrackTable(self.tracks[:n], self.dropped, self.duplicates_removed)


def load_tracks(source, min_points: int = MIN_TRACK_POINTS) -> TrackTable:
    """Read a ``track_id,type,lon,lat,time`` CSV, grouped by track and sorted by time.

    ``source`` is a path or an open text stream.  Tracks shorter than
    ``min_points`` are dropped and listed in ``TrackTable.dropped``; repeated
    timestamps within a track keep their first row.
    """
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise DatasetNotFoundError(source)
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_tracks(fh, min_points)
    return _read_tracks(source, min_points)


def _read_tracks(fh, min_points: int) -> TrackTable:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyDataError("CSV input is empty") from None
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise SchemaError(f"missing required column {col!r} (header: {','.join(header)})")
    idx = {c: header.index(c) for c in REQUIRED_COLUMNS}
    rows: dict[str, list[tuple[float, float, float]]] = {}
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        line = reader.line_num
        try:
            tid = row[idx["track_id"]].strip()
            lon, lat, t = (float(row[idx[c]]) for c in ("lon", "lat", "time"))
        except (IndexError, ValueError) as exc:
            raise DataError(f"line {line}: cannot parse row {row!r}: {exc}") from None
        if not all(map(math.isfinite, (lon, lat, t))):
            raise DataError(f"line {line}: non-finite coordinate or time in row {row!r}")
        rows.setdefault(tid, []).append((lon, lat, t))
    if not rows:
        raise EmptyDataError("CSV contains a header but no data rows")
    kept, dropped, dups = [], [], 0
    for tid, pts in rows.items():
        arr = np.array(pts, dtype=float)
        arr = arr[np.argsort(arr[:, 2], kind="stable")]
        _, first = np.unique(arr[:, 2], return_index=True)
        dups += arr.shape[0] - first.size
        arr = arr[np.sort(first)]
        if arr.shape[0] < min_points:
            dropped.append(tid)
        else:
            kept.append(Track(tid, arr))
    if not kept:
        raise EmptyDataError(f"no track has at least {min_points} points ({len(dropped)} dropped)")
    return TrackTable(tuple(kept), tuple(dropped), dups)


def write_tracks_csv(path_or_stream, table: TrackTable, vehicle_type: str = "Car") -> None:
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for tr in table:
            for lon, lat, t in tr.points:
                w.writerow([tr.track_id, vehicle_type, repr(float(lon)), repr(float(lat)), repr(float(t))])
    finally:
        if own:
            fh.close()


# -- samples -------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionSample:
    agent_id: str
    past: np.ndarray    # (past, 2)
    future: np.ndarray  # (future, 2)


@dataclass(frozen=True)
class SampleSet:
    """Window samples stored as arrays; ``agent[k]`` indexes ``agent_ids``."""

    past: np.ndarray
    future: np.ndarray
    agent: np.ndarray
    agent_ids: tuple[str, ...]

    def __len__(self) -> int:
        return self.past.shape[0]

    def __getitem__(self, k: int) -> PredictionSample:
        return PredictionSample(self.agent_ids[self.agent[k]], self.past[k], self.future[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def features(self) -> np.ndarray:
        return self.past.reshape(len(self), -1)

    def targets(self) -> np.ndarray:
        return self.future.reshape(len(self), -1)

    def select(self, keep: np.ndarray) -> "SampleSet":
        return SampleSet(self.past[keep], self.future[keep], self.agent[keep], self.agent_ids)

    def of_agents(self, mask: int) -> "SampleSet":
        members = (mask >> self.agent) & 1 == 1
        return self.select(members)

    def with_past(self, past: np.ndarray) -> "SampleSet":
        return SampleSet(past, self.future, self.agent, self.agent_ids)


def make_samples(t: TrackTable, past: int = 10, future: int = 5, stride: int = 1) -> SampleSet:
    """Sliding windows of ``past`` positions followed by the next ``future`` positions."""
    if past < 1 or future < 1 or stride < 1:
        raise ValueError("past, future and stride must be >= 1")
    span = past + future
    pasts, futures, agents = [], [], []
    for a, tr in enumerate(t):
        xy = tr.xy
        for start in range(0, xy.shape[0] - span + 1, stride):
            pasts.append(xy[start:start + past])
            futures.append(xy[start + past:start + span])
            agents.append(a)
    ids = tuple(tr.track_id for tr in t)
    if not pasts:
        return SampleSet(np.zeros((0, past, 2)), np.zeros((0, future, 2)), np.zeros(0, dtype=int), ids)
    return SampleSet(np.array(pasts), np.array(futures), np.array(agents, dtype=int), ids)


def temporal_split(samples: SampleSet, fractions: Sequence[float] = (0.7, 0.15, 0.15)
                   ) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Per-agent chronological split into train / validation / test."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three numbers summing to 1")
    parts = [np.zeros(len(samples), dtype=bool) for _ in range(3)]
    for a in range(samples.n_agents):
        idx = np.flatnonzero(samples.agent == a)
        n = idx.size
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        parts[0][idx[:n_train]] = True
        parts[1][idx[n_train:n_train + n_val]] = True
        parts[2][idx[n_train + n_val:]] = True
    return tuple(samples.select(p) for p in parts)


def inject_noise(samples: SampleSet, beta: float, seed=None) -> SampleSet:
    """Add i.i.d. N(0, 1/beta) noise to every past coordinate; targets are untouched.

    The standard-normal draws depend only on ``seed``, so sweeping beta with a
    fixed seed rescales one noise realisation.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal(samples.past.shape)
    return samples.with_past(samples.past + z / math.sqrt(beta))


def inject_noise_per_agent(samples: SampleSet, betas: Sequence[float], seed=None) -> SampleSet:
    """As :func:`inject_noise` with agent ``a`` observed at precision ``betas[a]``."""
    betas = np.asarray(betas, dtype=float)
    if np.any(betas <= 0):
        raise ValueError("every beta must be > 0")
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal(samples.past.shape)
    scale = 1.0 / np.sqrt(betas[samples.agent])
    return samples.with_past(samples.past + z * scale[:, None, None])


# -- linear predictor -------------------------------------------------------------

class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearPredictor:
    """Weights of shape (features + 1, targets); the last row is the bias."""

    weights: np.ndarray

    def predict_many(self, samples: SampleSet) -> np.ndarray:
        x, anchor = _relative_features(samples.past)
        out = x @ self.weights[:-1] + self.weights[-1]
        return out + np.tile(anchor, samples.future.shape[1])


def _relative_features(past: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    anchor = past[:, -1, :]
    rel = past - anchor[:, None, :]
    return rel.reshape(past.shape[0], -1), anchor


def _design(samples: SampleSet) -> tuple[np.ndarray, np.ndarray]:
    x, anchor = _relative_features(samples.past)
    y = samples.targets() - np.tile(anchor, samples.future.shape[1])
    return x, y


def fit_predictor(train: SampleSet, ridge: float = 1e-6, sample_weight=None) -> LinearPredictor:
    """Ridge least squares via the normal equations; the bias is not penalised."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if len(train) == 0:
        raise InsufficientDataError("cannot fit a predictor on zero samples")
    x, y = _design(train)
    xb = np.column_stack([x, np.ones(x.shape[0])])
    w = np.ones(x.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (x.shape[0],) or np.any(w < 0):
        raise ValueError("sample_weight must be a non-negative vector, one per sample")
    gram = xb.T @ (xb * w[:, None])
    penalty = np.full(xb.shape[1], ridge)
    penalty[-1] = 0.0
    gram[np.diag_indices_from(gram)] += penalty
    rhs = xb.T @ (y * w[:, None])
    if ridge == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularSystemError("normal equations are singular; use a ridge penalty > 0")
    try:
        weights = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"normal equations are singular ({exc}); use a ridge penalty > 0") from None
    return LinearPredictor(weights)


def predict(p: LinearPredictor, sample: PredictionSample) -> np.ndarray:
    s = SampleSet(sample.past[None], np.zeros((1,) + sample.future.shape), np.zeros(1, dtype=int), ("",))
    return p.predict_many(s)[0]


def mae(p: LinearPredictor, samples: SampleSet) -> float:
    return float(np.mean(np.abs(p.predict_many(samples) - samples.targets())))


def per_agent_abs_error(p: LinearPredictor | None, samples: SampleSet) -> np.ndarray:
    """Mean absolute error per agent; ``p=None`` is the constant-position forecast."""
    if p is None:
        pred = np.tile(samples.past[:, -1, :], samples.future.shape[1])
    else:
        pred = p.predict_many(samples)
    err = np.abs(pred - samples.targets()).mean(axis=1)
    sums = np.bincount(samples.agent, weights=err, minlength=samples.n_agents)
    counts = np.bincount(samples.agent, minlength=samples.n_agents)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


# -- cooperative task ---------------------------------------------------------------

@dataclass(frozen=True)
class TrajTask:
    """Per-agent chronological splits of one sample set."""

    train: SampleSet
    val: SampleSet
    test: SampleSet
    ridge: float = 1e-6

    @classmethod
    def from_samples(cls, samples: SampleSet, ridge: float = 1e-6,
                     fractions: Sequence[float] = (0.7, 0.15, 0.15)) -> "TrajTask":
        return cls(*temporal_split(samples, fractions), ridge=ridge)

    @property
    def n_agents(self) -> int:
        return self.train.n_agents

    def with_eval_noise(self, std: float, seed=None) -> "TrajTask":
        """Corrupt the observed past of held-out samples with sensor noise of std ``std``."""
        if std == 0:
            return self
        rng = np.random.Generator(np.random.Philox(seed))
        val = self.val.with_past(self.val.past + std * rng.standard_normal(self.val.past.shape))
        test = self.test.with_past(self.test.past + std * rng.standard_normal(self.test.past.shape))
        return TrajTask(self.train, val, test, self.ridge)

    def reference_error(self, split: str = "val") -> np.ndarray:
        return per_agent_abs_error(None, getattr(self, split))


class CoalitionGame:
    """Lazily evaluated coalition values for one noise realisation of the training data.

    ``v(C) = sum_{i in C} [err_ref_i - err_C_i]``: the reduction in each member's
    held-out MAE achieved by a predictor trained only on the members' noisy
    training samples, relative to the constant-position forecast.
    """

    def __init__(self, task: TrajTask, noisy_train: SampleSet, split: str = "val"):
        self.task = task
        self.noisy_train = noisy_train
        self.eval = getattr(task, split)
        self.ref = per_agent_abs_error(None, self.eval)
        self._cache: dict[int, float] = {0: 0.0}
        self._predictors: dict[int, LinearPredictor] = {}

    @property
    def n_agents(self) -> int:
        return self.task.n_agents

    def predictor(self, mask: int) -> LinearPredictor:
        if mask not in self._predictors:
            data = self.noisy_train.of_agents(mask)
            if len(data) == 0:
                raise InsufficientDataError(f"coalition {mask:#b} has no training samples")
            self._predictors[mask] = fit_predictor(data, self.task.ridge)
        return self._predictors[mask]

    def __call__(self, mask: int) -> float:
        if mask not in self._cache:
            members = [(mask >> i) & 1 == 1 for i in range(self.n_agents)]
            err = per_agent_abs_error(self.predictor(mask), self.eval.of_agents(mask))
            gain = (self.ref - err)[members]
            if np.any(~np.isfinite(gain)):
                raise InsufficientDataError(f"coalition {mask:#b} has a member without held-out samples")
            self._cache[mask] = float(gain.sum())
        return self._cache[mask]

    def full_mae(self) -> float:
        return mae(self.predictor((1 << self.n_agents) - 1), self.eval)


def coalition_value(task: TrajTask, mask: int, beta: float, seed=None) -> float:
    if mask == 0:
        return 0.0
    return CoalitionGame(task, inject_noise(task.train, beta, seed))(mask)


def shapley_credit(task: TrajTask, beta: float | Sequence[float], n_perms: int = 20, seed=None,
                   replace: bool = True) -> ShapleyVector:
    """Monte Carlo permutation Shapley values of the coalition game at precision ``beta``.

    ``beta`` may be a per-agent sequence.  Noise and orderings use separate
    streams derived from ``seed``.
    """
    game = noisy_game(task, beta, seed)
    if not 2 <= game.n_agents <= 10:
        raise ValueError(f"shapley_credit supports 2..10 agents, got {game.n_agents}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(_seed_words(seed) + [1])))
    return permutation_shapley(game, game.n_agents, sample_orders(game.n_agents, n_perms, rng, replace))


def _seed_words(seed) -> list[int]:
    if seed is None:
        return [0]
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


def noisy_game(task: TrajTask, beta, seed=None) -> CoalitionGame:
    noise_seed = np.random.SeedSequence(_seed_words(seed) + [0])
    if np.ndim(beta) == 0:
        noisy = inject_noise(task.train, float(beta), noise_seed)
    else:
        noisy = inject_noise_per_agent(task.train, beta, noise_seed)
    return CoalitionGame(task, noisy)


# -- sweeps ------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    records: tuple[tuple[float, float, float, float], ...]  # beta, credit mean, credit std, mae mean
    fit: QuadraticFit

    @property
    def peak_beta(self) -> float:
        return self.fit.peak

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "credit_mean", "credit_std", "mae_mean"])
            for row in self.records:
                w.writerow([repr(float(x)) for x in row])


def _credit_of(sv: ShapleyVector, agent: int | None) -> float:
    return float(np.mean(sv.credits)) if agent is None else float(sv.credits[agent])


def run_inverted_u_sweep(task: TrajTask, betas: Sequence[float] = DEFAULT_BETAS, runs: int = 20,
                         seed=0, n_perms: int = 20, agent: int | None = None) -> SweepResult:
    """Credit versus precision, averaged over ``runs`` noise seeds, with a quadratic fit.

    Run ``r`` uses the same seed at every beta.  ``agent=None`` reports the
    mean credit across agents.
    """
    records = []
    per_point = []
    for beta in betas:
        credits, maes = [], []
        for r in range(runs):
            game = noisy_game(task, beta, [int(seed), r])
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), r, 1])))
            sv = permutation_shapley(game, game.n_agents, sample_orders(game.n_agents, n_perms, rng))
            credits.append(_credit_of(sv, agent))
            maes.append(game.full_mae())
        records.append((float(beta), float(np.mean(credits)), float(np.std(credits)), float(np.mean(maes))))
        per_point.append((float(beta), float(np.mean(credits))))
    return SweepResult(tuple(records), fit_quadratic(per_point))


def expected_credit(task: TrajTask, beta: float, runs: int, seed=0, agent: int | None = None) -> float:
    """Mean credit over noise seeds with exact (all-coalition) Shapley values; sweep oracle."""
    from .coalition import CharacteristicFunction, mobius_dividends, shapley_from_dividends
    vals = []
    for r in range(runs):
        game = noisy_game(task, beta, [int(seed), r])
        cf = CharacteristicFunction.from_function(game, game.n_agents)
        vals.append(_credit_of(shapley_from_dividends(mobius_dividends(cf)), agent))
    return float(np.mean(vals))


# -- APC in the loop -----------------------------------------------------------------

# Credit differences on this task are O(0.01) per unit beta, so the default
# controller step would barely move; the buffer fit also needs averaged credits.
TRAJ_APC_CONFIG = ApcConfig(eta=20.0)
TRAJ_REPLICATES = 16

def run_apc_training(task: TrajTask, apc_cfg: ApcConfig, epochs: int, seed=0, beta0: float = 1.0,
                     n_perms: int = 10, strategy: str = "apc", shift_task: TrajTask | None = None,
                     shift_epoch: int | None = None, replicates: int = 1,
                     agent: int | None = None) -> list[tuple[int, float, float, float]]:
    """Epoch loop: fresh noise and fit at the current beta, credit by Shapley, then adapt.

    ``strategy`` is ``"apc"``, ``"fixed"`` (beta stays ``beta0``) or
    ``"random"`` (uniform redraw in the clamp range every update period).
    The credit is agent ``agent``'s permutation Shapley value, or the mean
    over agents when ``agent`` is None.  Each epoch's credit and MAE are
    averaged over ``replicates`` independent noise draws.  From ``shift_epoch`` on, ``shift_task`` replaces ``task``.
    Returns ``(epoch, beta, credit, mae)`` rows.
    """
    if strategy not in ("apc", "fixed", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    state = ApcState.initial(beta0, apc_cfg, np.random.SeedSequence([int(seed), 7]))
    beta = state.beta if strategy != "fixed" else float(beta0)
    pick = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 8])))
    rows = []
    for epoch in range(epochs):
        cur = shift_task if (shift_task is not None and shift_epoch is not None and epoch >= shift_epoch) else task
        credits, maes = [], []
        for r in range(replicates):
            words = [int(seed), 1000 + epoch] + ([r] if replicates > 1 else [])
            game = noisy_game(cur, beta, words)
            if agent is None:
                # every permutation estimate is efficient, so the agents' mean
                # credit is exactly v(N)/N whatever orders would be drawn
                credits.append(game((1 << game.n_agents) - 1) / game.n_agents)
            else:
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(words + [1])))
                sv = permutation_shapley(game, game.n_agents, sample_orders(game.n_agents, n_perms, rng))
                credits.append(_credit_of(sv, agent))
            maes.append(game.full_mae())
        credit = float(np.mean(credits))
        rows.append((epoch, beta, credit, float(np.mean(maes))))
        if strategy == "apc":
            state = apc_step(state, credit, apc_cfg)
            beta = state.beta
        elif strategy == "random" and (epoch + 1) % apc_cfg.update_period == 0:
            beta = float(pick.uniform(apc_cfg.beta_min, apc_cfg.beta_max))
    return rows


def write_apc_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "beta", "credit", "mae"])
        for row in rows:
            w.writerow(row)


# -- synthetic data ---------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTrackConfig:
    """Generator for roundabout-like tracks with measurement noise.

    Each agent drives a constant-speed arc (heading turning at ``turn_rate``
    with small random curvature changes).  A shared flow component couples
    the agents' velocities.  ``weave_amp`` adds a periodic heading oscillation
    (lane weaving).  Initial headings lie within ``heading_spread`` of the
    flow direction.  ``speed_wave`` modulates each agent's speed
    sinusoidally (stop-and-go traffic).  Observed positions carry i.i.d. Gaussian
    measurement noise of std ``measurement_noise``.
    """

    n_agents: int = 4
    track_len: int = 150
    speed: float = 1.0
    speed_spread: float = 0.3
    turn_rate: float = 0.05
    curvature_noise: float = 0.02
    flow_coupling: float = 0.3
    measurement_noise: float = 0.0
    eval_noise: float = 0.55
    noise_agents: tuple[int, ...] = ()
    noise_agent_scale: float = 1.0
    weave_amp: float = 1.0
    weave_period: float = 6.0
    heading_spread: float = math.pi
    speed_wave: float = 0.0
    speed_wave_period: float = 40.0


def synthetic_tracks(cfg: SyntheticTrackConfig, seed=0) -> TrackTable:
    rng = np.random.Generator(np.random.Philox(seed))
    flow_heading = rng.uniform(-np.pi, np.pi)
    flow = np.array([math.cos(flow_heading), math.sin(flow_heading)]) * cfg.speed
    tracks = []
    t = np.arange(cfg.track_len, dtype=float)
    for a in range(cfg.n_agents):
        if a in cfg.noise_agents:
            xy = rng.normal(0.0, cfg.noise_agent_scale, (cfg.track_len, 2))
        else:
            speed = cfg.speed * (1 + cfg.speed_spread * rng.uniform(-1, 1))
            heading0 = rng.uniform(-np.pi, np.pi)
            if cfg.heading_spread < np.pi:
                heading0 = flow_heading + cfg.heading_spread * heading0 / np.pi
            turn = cfg.turn_rate * rng.choice([-1.0, 1.0]) + cfg.curvature_noise * np.cumsum(
                rng.standard_normal(cfg.track_len))
            heading = heading0 + np.cumsum(turn)
            if cfg.weave_amp:
                phase = rng.uniform(0, 2 * np.pi)
                heading = heading + cfg.weave_amp * np.sin(2 * np.pi * t / cfg.weave_period + phase)
            if cfg.speed_wave:
                phase = rng.uniform(0, 2 * np.pi)
                speed = speed * (1 + cfg.speed_wave * np.sin(2 * np.pi * t / cfg.speed_wave_period + phase))
                speed = speed[:, None]
            vel = speed * np.column_stack([np.cos(heading), np.sin(heading)]) + cfg.flow_coupling * flow
            start = rng.uniform(-20, 20, 2)
            xy = start + np.vstack([np.zeros(2), np.cumsum(vel[:-1], axis=0)])
            xy = xy + rng.normal(0.0, cfg.measurement_noise, xy.shape)
        pts = np.column_stack([xy, t])
        tracks.append(Track(f"agent{a}", pts))
    return TrackTable(tuple(tracks))


MARL_TRACK_CONFIG = SyntheticTrackConfig(
    n_agents=10, track_len=150, speed_spread=0.0, turn_rate=0.0, curvature_noise=0.005,
    flow_coupling=0.0, eval_noise=0.0, weave_amp=0.0, heading_spread=0.3, speed_wave=0.1)


def synthetic_task(cfg: SyntheticTrackConfig = SyntheticTrackConfig(), seed=0, ridge: float = 1e-6) -> TrajTask:
    task = TrajTask.from_samples(make_samples(synthetic_tracks(cfg, seed)), ridge=ridge)
    return task.with_eval_noise(cfg.eval_noise, np.random.SeedSequence([int(seed), 99]))
