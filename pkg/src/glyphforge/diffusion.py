"""DDPM noise schedule, forward corruption, reverse sampler step, training loss.

Timesteps are indexed 1..T with t = T the noisiest; "early" steps of the
reverse denoising order are therefore the large-t end. Schedule tables are
immutable once built.
"""
from __future__ import annotations

import csv

import numpy as np

from .errors import ShapeError, SizeError, StageRangeError
from .tensor import Grid, grid_mean, mul, scale, sub


class NoiseSchedule:
    """Per-timestep beta/alpha/alpha_bar tables, indexed 1..T."""

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ShapeError("betas must be a 1D array with at least one entry")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise SizeError("betas must lie strictly inside (0, 1)")
        self.T = int(betas.size)
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)

    def beta(self, t):
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t):
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t):
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t):
        if np.any(np.asarray(t) < 1) or np.any(np.asarray(t) > self.T):
            raise SizeError(f"timestep {t} outside [1, {self.T}]")

    def dump_csv(self, path):
        """Write (t, beta, alpha_bar) rows for inspection."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "beta", "alpha_bar"])
            for t in range(1, self.T + 1):
                w.writerow([t, f"{self.betas[t-1]:.12g}", f"{self.alpha_bars[t-1]:.12g}"])


def make_linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Betas linearly interpolated (inclusive of both endpoints) over T steps."""
    if T < 2:
        raise SizeError(f"schedule needs T >= 2, got {T}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise SizeError(f"need 0 < beta_start < beta_end < 1, got [{beta_start}, {beta_end}]")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def strided_timesteps(T, steps):
    """Uniformly strided subsequence of [1..T], always ending at T."""
    steps = min(steps, T)
    ts = np.unique(np.round(np.linspace(T / steps, T, steps)).astype(int))
    ts = ts[ts >= 1]
    return ts


def subsequence_schedule(schedule, ts):
    """Exact sub-schedule over an ascending timestep subsequence.

    The derived alpha_bars coincide with the base schedule's values at the
    selected timesteps, so subsetting never moves the noise levels.
    """
    ts = np.asarray(ts, dtype=np.int64)
    schedule._check_t(ts)
    bars = schedule.alpha_bars[ts - 1]
    prev = np.concatenate([[1.0], bars[:-1]])
    betas = 1.0 - bars / prev
    return NoiseSchedule(betas)


def make_strided_schedule(schedule, steps):
    """Uniformly strided sub-schedule: (sub_ts ascending, derived schedule)."""
    ts = strided_timesteps(schedule.T, steps)
    return ts, subsequence_schedule(schedule, ts)


def q_sample(x0, t, eps, schedule):
    """Corrupt x0 to timestep t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    t may be a single int or one int per batch row of a [N,...] grid.
    """
    if isinstance(x0, Grid) is False:
        x0 = Grid(x0)
    if eps.data.shape != x0.data.shape:
        raise ShapeError(f"eps shape {eps.data.shape} differs from x0 shape {x0.data.shape}")
    tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    schedule._check_t(tarr)
    bars = schedule.alpha_bars[tarr - 1]
    if bars.size == 1:
        a = float(np.sqrt(bars[0]))
        b = float(np.sqrt(1.0 - bars[0]))
        return scale(x0, a) + scale(eps, b)
    if bars.size != x0.data.shape[0]:
        raise ShapeError(f"got {bars.size} timesteps for batch of {x0.data.shape[0]}")
    bshape = (-1,) + (1,) * (x0.data.ndim - 1)
    a = Grid(np.sqrt(bars).reshape(bshape), dtype=x0.dtype)
    b = Grid(np.sqrt(1.0 - bars).reshape(bshape), dtype=x0.dtype)
    return mul(x0, a) + mul(eps, b)


def ddpm_step(x_t, eps_hat, t, schedule, noise=None):
    """One ancestral reverse step x_t -> x_{t-1}.

    Posterior mean (1/sqrt(alpha_t)) * (x_t - beta_t/sqrt(1-abar_t) * eps_hat),
    plus sigma_t * noise with sigma_t^2 = beta_t; at t == 1 the step is
    deterministic and `noise` must be omitted.
    """
    if eps_hat.data.shape != x_t.data.shape:
        raise ShapeError(f"eps_hat shape {eps_hat.data.shape} differs from x_t {x_t.data.shape}")
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    bar = schedule.alpha_bar(t)
    mean = scale(sub(x_t, scale(eps_hat, beta / np.sqrt(1.0 - bar))), 1.0 / np.sqrt(alpha))
    if t == 1 or noise is None:
        return mean
    if noise.data.shape != x_t.data.shape:
        raise ShapeError(f"noise shape {noise.data.shape} differs from x_t {x_t.data.shape}")
    return mean + scale(noise, np.sqrt(beta))


def train_loss(model, x0, t, eps, bundle, stage, schedule, cond=None):
    """Mean squared error between eps and the model's prediction at q_sample(x0,t,eps).

    When `stage` names a control stage, every timestep in t must belong to
    that stage's training range (checked via the model's router); a
    mismatch raises StageRangeError before any compute.
    """
    tarr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if stage is not None:
        router = getattr(model, "route", None)
        if router is not None:
            for tv in tarr:
                got = router(int(tv))
                if got != stage:
                    raise StageRangeError(
                        f"timestep {int(tv)} routes to stage {got} but stage {stage} was requested"
                    )
    x_t = q_sample(x0, t, eps, schedule)
    eps_hat = model(x_t, t, bundle, stage, cond)
    if eps_hat.data.shape != eps.data.shape:
        raise ShapeError(
            f"model output shape {eps_hat.data.shape} differs from eps {eps.data.shape}"
        )
    diff = sub(eps_hat, eps)
    return grid_mean(mul(diff, diff))
