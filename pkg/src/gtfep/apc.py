"""Adaptive Precision Control: online gradient ascent of credit in the precision beta.

The controller keeps the last ``window_len`` (beta, credit) pairs, and every
``update_period`` epochs fits a quadratic to them.  A concave fit moves beta
along the fitted slope; otherwise beta takes a small uniform random step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np


class SingularFitError(ValueError):
    """The quadratic design matrix is rank deficient (fewer than 3 distinct betas)."""


@dataclass(frozen=True)
class QuadraticFit:
    a: float
    b: float
    c: float
    r_squared: float

    @property
    def is_concave(self) -> bool:
        return self.a < 0

    @property
    def peak(self) -> float:
        """Stationary point ``-b / (2a)``; NaN when the fit is not concave."""
        return -self.b / (2 * self.a) if self.a < 0 else math.nan

    def __call__(self, beta):
        return self.a * np.square(beta) + self.b * np.asarray(beta) + self.c

    def slope(self, beta: float) -> float:
        return 2 * self.a * beta + self.b


def fit_quadratic(points: Iterable[tuple[float, float]]) -> QuadraticFit:
    """Least-squares ``a beta^2 + b beta + c`` through (beta, credit) pairs.

    The normal equations are solved on centered, scaled abscissae for
    conditioning and mapped back to the raw coefficients.
    """
    pts = np.array(points if isinstance(points, (list, tuple)) else list(points), dtype=float).reshape(-1, 2)
    if pts.shape[0] < 3:
        raise ValueError(f"need at least 3 points for a quadratic fit, got {pts.shape[0]}")
    x, y = pts[:, 0], pts[:, 1]
    if not np.isfinite(pts).all():
        raise ValueError("fit points must be finite")
    xs = np.sort(x)
    if np.count_nonzero(xs[1:] != xs[:-1]) < 2:
        raise SingularFitError("quadratic fit needs at least 3 distinct beta values")
    m = x.mean()
    s = np.abs(x - m).max()
    t = (x - m) / s
    design = np.column_stack([t * t, t, np.ones_like(t)])
    gram = design.T @ design
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= ev[-1] * 1e-12:
        raise SingularFitError("quadratic design matrix is numerically singular")
    a2, b2, c2 = np.linalg.solve(gram, design.T @ y)
    a = a2 / s**2
    b = b2 / s - 2 * a2 * m / s**2
    c = a2 * m**2 / s**2 - b2 * m / s + c2
    resid = y - design @ np.array([a2, b2, c2])
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return QuadraticFit(float(a), float(b), float(c), r2)


@dataclass(frozen=True)
class ApcConfig:
    eta: float = 0.05
    window_len: int = 50
    update_period: int = 10
    beta_min: float = 0.2
    beta_max: float = 5.0
    explore_scale: float = 0.1
    smooth: bool = False          # fit on a width-5 moving average of credits
    fit_len: int | None = None    # fit only the most recent points of the buffer

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError(f"need 0 < beta_min < beta_max, got {self.beta_min}, {self.beta_max}")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.window_len < 3:
            raise ValueError("window_len must be >= 3")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.explore_scale < 0:
            raise ValueError("explore_scale must be >= 0")
        if self.fit_len is not None and self.fit_len < 3:
            raise ValueError("fit_len must be >= 3")

    def clamp(self, beta: float) -> float:
        return min(max(beta, self.beta_min), self.beta_max)


def _new_rng_state(seed) -> dict:
    return np.random.Philox(seed).state


@dataclass(frozen=True)
class ApcState:
    beta: float
    buffer: tuple[tuple[float, float], ...] = ()
    epoch: int = 0
    rng_state: dict = field(default_factory=lambda: _new_rng_state(0), compare=False, repr=False)
    last_fit: QuadraticFit | None = field(default=None, compare=False)

    @classmethod
    def initial(cls, beta: float, config: ApcConfig, seed=0) -> "ApcState":
        return cls(config.clamp(float(beta)), (), 0, _new_rng_state(seed))


def _uniform(rng_state: dict) -> tuple[float, dict]:
    bitgen = np.random.Philox()
    bitgen.state = rng_state
    u = float(np.random.Generator(bitgen).random())
    return u, bitgen.state


def _smoothed(points: Sequence[tuple[float, float]], width: int = 5) -> list[tuple[float, float]]:
    credits = np.array([c for _, c in points])
    out = []
    for k, (b, _) in enumerate(points):
        out.append((b, float(credits[max(0, k - width + 1):k + 1].mean())))
    return out


def apc_step(state: ApcState, credit: float, config: ApcConfig) -> ApcState:
    """Record the credit observed at ``state.beta`` and possibly adapt beta."""
    if not math.isfinite(credit):
        raise ValueError(f"credit must be finite, got {credit!r}")
    buffer = (state.buffer + ((state.beta, float(credit)),))[-config.window_len:]
    epoch = state.epoch + 1
    beta, rng_state, fit = state.beta, state.rng_state, None
    if epoch % config.update_period == 0:
        points = list(buffer[-config.fit_len:]) if config.fit_len else list(buffer)
        if config.smooth:
            points = _smoothed(points)
        try:
            fit = fit_quadratic(points)
        except ValueError:
            fit = None
        if fit is not None and fit.a < 0:
            beta = config.clamp(beta + config.eta * fit.slope(beta))
        else:
            u, rng_state = _uniform(rng_state)
            beta = config.clamp(beta + config.explore_scale * (u - 0.5))
    return ApcState(beta, buffer, epoch, rng_state, fit if fit is not None else state.last_fit)


def run_apc_on_oracle(credit_fn: Callable[[float, int], float], config: ApcConfig, epochs: int,
                      seed=0, beta0: float = 1.0, noise_std: float = 0.0) -> list[tuple[int, float, float]]:
    """Closed-loop APC against ``credit_fn(beta, epoch)`` plus optional Gaussian noise.

    Returns ``(epoch, beta, credit)`` rows; ``beta`` is the precision at which
    that epoch's credit was observed.
    """
    seeds = np.random.SeedSequence(seed).spawn(2)
    noise = np.random.default_rng(seeds[0])
    state = ApcState.initial(beta0, config, seeds[1])
    rows = []
    for epoch in range(epochs):
        credit = float(credit_fn(state.beta, epoch))
        if noise_std > 0:
            credit += noise_std * float(noise.standard_normal())
        rows.append((epoch, state.beta, credit))
        state = apc_step(state, credit, config)
    return rows


def write_trajectory_csv(path, rows: Iterable[Sequence], header: Sequence[str] = ("epoch", "beta", "credit")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def with_bounds(config: ApcConfig, beta_min: float, beta_max: float) -> ApcConfig:
    return replace(config, beta_min=beta_min, beta_max=beta_max)
