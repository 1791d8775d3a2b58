"""Two-stage timestep routing and the unified generate/edit inference paradigm.

The trajectory [1..T] is split at T*split_frac: timesteps above the split
route to the Global branch (noisy half, structure and placement), the
rest to the Detail branch (clean half, stroke refinement). Generation
denoises from pure noise through both branches in turn; editing re-noises
an original image to edit_noise_frac*T and then runs the same loop, the
Detail branch restoring the background from its masked-image anchor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import StageKind, apply_detail_mask
from .diffusion import (
    ddpm_step,
    q_sample,
    strided_timesteps,
    subsequence_schedule,
)
from .errors import NumericError, ShapeError, SizeError, UsageError
from .tensor import Grid, no_grad


@dataclass
class StageSchedule:
    """Stage boundary and edit re-noising point, as fractions of T."""

    T: int
    split_frac: float = 0.5
    edit_noise_frac: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.split_frac < self.edit_noise_frac <= 1.0):
            raise SizeError(
                f"need 0 < split_frac < edit_noise_frac <= 1, got "
                f"({self.split_frac}, {self.edit_noise_frac})"
            )

    @property
    def split_point(self):
        return self.T * self.split_frac

    @property
    def edit_timestep(self):
        return int(round(self.edit_noise_frac * self.T))


def route(t, stages):
    """Stage owning timestep t: Global iff t > T*split_frac (boundary -> Detail)."""
    if t < 1 or t > stages.T:
        raise SizeError(f"timestep {t} outside [1, {stages.T}]")
    return StageKind.GLOBAL if t > stages.split_point else StageKind.DETAIL


def stage_range(stage, stages):
    """Inclusive integer timestep range trained by a stage."""
    boundary = int(np.floor(stages.split_point))
    if stage is StageKind.GLOBAL:
        return boundary + 1, stages.T
    return 1, boundary


def sample_training_timestep(stage, stages, rng):
    """Uniform draw from the stage's half of the trajectory."""
    lo, hi = stage_range(stage, stages)
    return int(rng.integers(lo, hi + 1))


def window_allows(control_window, t, T):
    """Control on/off rule for ablations: on iff lo*T < t <= hi*T."""
    if control_window is None:
        return True
    lo, hi = control_window
    return lo * T < t <= hi * T


class ControlledModel:
    """Base U-Net plus the two control branches behind one callable.

    The call signature matches the training loss: (x_t, t, bundle, stage,
    cond) -> eps_hat. The base U-Net itself runs unconditionally (the
    class-sequence condition feeds the control branches), mirroring the
    frozen-backbone training discipline.
    """

    def __init__(self, unet, branches=None, stages=None, min_masked_size=16,
                 cond_to_base=False):
        self.unet = unet
        self.branches = branches or {}
        self.stages = stages
        self.min_masked_size = min_masked_size
        self.cond_to_base = cond_to_base

    def route(self, t):
        return route(t, self.stages)

    def branch_for(self, stage):
        return self.branches.get(stage)

    def controls_for(self, x_t, t, bundle, stage, cond):
        branch = self.branch_for(stage)
        if branch is None or bundle is None:
            return None
        controls = branch(bundle, x_t, t, cond)
        if stage is StageKind.DETAIL:
            total = len(controls)
            pos = bundle.batched().position
            controls = [
                apply_detail_mask(c, pos, i, total, self.min_masked_size)
                for i, c in enumerate(controls)
            ]
        return controls

    def __call__(self, x_t, t, bundle=None, stage=None, cond=None, enhance=None):
        controls = None
        if stage is not None:
            controls = self.controls_for(x_t, t, bundle, stage, cond)
        base_cond = cond if self.cond_to_base else None
        return self.unet(x_t, t, base_cond, controls, enhance)


def _tile_bundle(bundle, n):
    if bundle is None:
        return None
    b = bundle.batched()
    if b.glyph.data.shape[0] == n:
        return b
    if b.glyph.data.shape[0] != 1:
        raise ShapeError(
            f"bundle batch {b.glyph.data.shape[0]} incompatible with requested batch {n}"
        )

    def rep(g):
        return None if g is None else Grid(np.repeat(g.data, n, axis=0))

    from .control import ControlBundle

    return ControlBundle(rep(b.glyph), rep(b.position), rep(b.masked_image))


class Pipeline:
    """Sampling façade: strided ancestral sampler with stage switching."""

    def __init__(self, model, schedule, stages, sample_steps=50):
        self.model = model
        self.schedule = schedule
        self.stages = stages
        self.sample_steps = sample_steps

    @property
    def canvas(self):
        return self.model.unet.cfg.canvas

    def _noise(self, rngs, shape, dtype):
        return Grid(np.stack([r.standard_normal(shape) for r in rngs]).astype(dtype))

    def _denoise_loop(self, x, sub_ts, sub_sched, rngs, cond, bundle_global,
                      bundle_detail, enhance, control_window):
        n = x.data.shape[0]
        bg = _tile_bundle(bundle_global, n)
        bd = _tile_bundle(bundle_detail, n)
        shape = x.data.shape[1:]
        for k in range(len(sub_ts), 0, -1):
            t = int(sub_ts[k - 1])
            stage = route(t, self.stages)
            bundle = bg if stage is StageKind.GLOBAL else bd
            if not window_allows(control_window, t, self.stages.T):
                bundle = None
            eps_hat = self.model(x, t, bundle, stage, cond, enhance)
            noise = self._noise(rngs, shape, x.data.dtype) if k > 1 else None
            x = ddpm_step(x, eps_hat, k, sub_sched, noise)
        return x

    def generate(self, cond, bundle_global, bundle_detail, enhance=None, seed=0,
                 batch=1, control_window=None):
        """Sample images from noise; deterministic for a fixed seed.

        Per-image noise streams derive from (seed, image_index), so each
        image in a batch reproduces independently of batch composition.
        """
        dtype = self.model.unet.cfg.np_dtype
        c = self.canvas
        with no_grad():
            sub_ts = strided_timesteps(self.schedule.T, self.sample_steps)
            sub_sched = subsequence_schedule(self.schedule, sub_ts)
            rngs = [np.random.default_rng([seed, i]) for i in range(batch)]
            x = self._noise(rngs, (1, c, c), dtype)
            x = self._denoise_loop(x, sub_ts, sub_sched, rngs, cond, bundle_global,
                                   bundle_detail, enhance, control_window)
        return Grid(np.clip((x.data + 1.0) / 2.0, 0.0, 1.0))

    def generate_uncontrolled(self, cond=None, seed=0, batch=1):
        """Plain sampling: no control branches, no enhancement."""
        return self.generate(cond, None, None, enhance=None, seed=seed, batch=batch)

    def edit(self, original, bundle_detail, bundle_global, enhance=None, seed=0,
             cond=None):
        """Re-noise an original image to edit_noise_frac*T and denoise back.

        Returns (edited image Grid[1,H,W], provenance dict). The detail
        bundle's masked_image must equal original * (1 - position); it is
        derived when absent.
        """
        img = original.data.reshape(original.data.shape[-2:])
        pos = bundle_detail.position.data.reshape(img.shape)
        if pos.sum() == 0:
            raise UsageError("position mask is empty: nothing to edit")
        expected = img * (1.0 - pos)
        if bundle_detail.masked_image is None:
            from .control import ControlBundle

            bundle_detail = ControlBundle(
                bundle_detail.glyph, bundle_detail.position,
                Grid(expected.reshape(bundle_detail.position.data.shape)),
            )
        else:
            got = bundle_detail.masked_image.data.reshape(img.shape)
            if np.abs(got - expected).max() > 1e-6:
                raise NumericError(
                    "masked_image does not equal original * (1 - position)"
                )
        t_star = self.stages.edit_timestep
        ts = strided_timesteps(self.schedule.T, self.sample_steps)
        ts = ts[ts <= t_star]
        if len(ts) == 0 or ts[-1] != t_star:
            ts = np.append(ts, t_star)
        sub_sched = subsequence_schedule(self.schedule, ts)
        dtype = self.model.unet.cfg.np_dtype
        with no_grad():
            rngs = [np.random.default_rng([seed, 0])]
            x0 = Grid((2.0 * img - 1.0)[None, None].astype(dtype))
            eps = self._noise(rngs, (1,) + img.shape, dtype)
            x = q_sample(x0, t_star, eps, self.schedule)
            x = self._denoise_loop(x, ts, sub_sched, rngs, cond, bundle_global,
                                   bundle_detail, enhance, None)
        out = Grid(np.clip((x.data[0] + 1.0) / 2.0, 0.0, 1.0))
        provenance = {
            "t_star": t_star,
            "edit_noise_frac": self.stages.edit_noise_frac,
            "split_frac": self.stages.split_frac,
            "steps_run": int(len(ts)),
            "seed": seed,
        }
        return out, provenance

    def ablate_control_window(self, cond, bundle_global, bundle_detail, t_on_range,
                              enhance=None, seed=0, batch=1):
        """Generation with control active only for t in (lo*T, hi*T]."""
        return self.generate(cond, bundle_global, bundle_detail, enhance=enhance,
                             seed=seed, batch=batch, control_window=t_on_range)
