"""Training loops and checkpoint persistence.

The base U-Net is trained unconditionally over the full timestep range,
then frozen; each control branch trains only on its own half of the
trajectory (the routing discipline is re-checked inside the loss). The
detail branch can warm-start from the trained global branch; its
masked-image pathway starts zeroed either way. Runs are deterministic
per (config, seed): rerunning produces byte-identical checkpoints.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .control import ControlBundle, StageKind
from .diffusion import train_loss
from .errors import DataError
from .stager import ControlledModel, stage_range
from .tensor import Grid
from .tensor.gft import read_gft, write_gft
from .unet import ConditionEmbedding


class Adam:
    """Standard Adam over a list of (name, Grid) parameters."""

    def __init__(self, named_params, lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {n: np.zeros_like(g.data) for n, g in self.params}
        self.v = {n: np.zeros_like(g.data) for n, g in self.params}
        self.t = 0

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(dirpath, name, named_params, meta=None):
    """Write a named-tensor manifest plus one GFT1 file per tensor."""
    os.makedirs(dirpath, exist_ok=True)
    tensors = []
    for i, (pname, grid) in enumerate(named_params):
        fname = f"{name}_{i:04d}.gft"
        write_gft(os.path.join(dirpath, fname), grid)
        tensors.append({"name": pname, "file": fname, "shape": list(grid.data.shape)})
    manifest = {"meta": meta or {}, "tensors": tensors}
    with open(os.path.join(dirpath, f"{name}.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(dirpath, name):
    path = os.path.join(dirpath, f"{name}.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"missing checkpoint manifest: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}")
    state = {}
    for entry in manifest["tensors"]:
        arr = read_gft(os.path.join(dirpath, entry["file"]))
        if list(arr.shape) != entry["shape"]:
            raise DataError(
                f"{entry['file']}: shape {list(arr.shape)} does not match manifest {entry['shape']}"
            )
        state[entry["name"]] = arr
    return state, manifest.get("meta", {})


def apply_state(named_params, state):
    for name, grid in named_params:
        if name not in state:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        if tuple(state[name].shape) != grid.data.shape:
            raise DataError(
                f"tensor {name!r} shape {state[name].shape} does not match model {grid.data.shape}"
            )
        grid.data[...] = state[name].astype(grid.data.dtype)


def checkpoint_exists(dirpath, name):
    return os.path.exists(os.path.join(dirpath, f"{name}.json"))


# -- batching ---------------------------------------------------------------------

def _stack_images(samples, idx, dtype):
    return np.stack([samples[i].image.data for i in idx]).astype(dtype)


def make_batch(samples, idx, dtype, stage=None, rng=None, mask_dropout=0.5):
    """Assemble (x0, bundle, cond) for a batch of corpus samples.

    Images map to [-1, 1]. For the detail stage the masked scene anchor is
    included, dropped to zeros with probability mask_dropout so the branch
    also learns the anchor-free generation mode.
    """
    imgs = _stack_images(samples, idx, dtype)
    x0 = Grid(2.0 * imgs - 1.0)
    glyph = Grid(np.stack([samples[i].glyph_map.data for i in idx]).astype(dtype))
    pos_np = np.stack([samples[i].position_map.data for i in idx]).astype(dtype)
    position = Grid(pos_np)
    masked = None
    if stage is StageKind.DETAIL:
        anchor = imgs * (1.0 - pos_np)
        if rng is not None and mask_dropout > 0:
            drop = rng.random(len(idx)) < mask_dropout
            anchor[drop] = 0.0
        masked = Grid(anchor.astype(dtype))
    bundle = ControlBundle(glyph, position, masked)
    cond = [ConditionEmbedding(samples[i].class_sequences) for i in idx]
    return x0, bundle, cond


class LossLog:
    def __init__(self, path=None):
        self.path = path
        self.rows = []
        if path:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "stage", "loss", "t_min", "t_max"])

    def add(self, step, stage, loss, t_min, t_max):
        row = [step, stage, f"{loss:.6f}", t_min, t_max]
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(row)


# -- training loops -----------------------------------------------------------------

def train_base(unet, samples, schedule, steps, batch=8, lr=2e-3, seed=0, log=None):
    """Unconditional epsilon-prediction training of the base U-Net."""
    rng = np.random.default_rng([seed, 101])
    dtype = unet.cfg.np_dtype
    model = ControlledModel(unet)
    opt = Adam(unet.named_parameters(), lr=lr)
    for step in range(steps):
        idx = rng.integers(0, len(samples), size=batch)
        x0, _, _ = make_batch(samples, idx, dtype)
        ts = rng.integers(1, schedule.T + 1, size=batch)
        eps = Grid(rng.standard_normal(x0.data.shape).astype(dtype))
        loss = train_loss(model, x0, ts, eps, None, None, schedule)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log:
            log.add(step, "base", loss.item(), int(ts.min()), int(ts.max()))
    return unet


def train_control(unet, branch, samples, schedule, stages, stage, steps, batch=8,
                  lr=2e-3, seed=0, mask_dropout=0.5, log=None, min_masked_size=16):
    """Train one control branch on its timestep range with the base frozen."""
    rng = np.random.default_rng([seed, 202 if stage is StageKind.GLOBAL else 303])
    dtype = unet.cfg.np_dtype
    model = ControlledModel(unet, {stage: branch}, stages, min_masked_size=min_masked_size)
    frozen = [p for p in unet.parameters() if p.requires_grad]
    for p in frozen:
        p.requires_grad = False
    try:
        opt = Adam(branch.named_parameters("branch"), lr=lr)
        lo, hi = stage_range(stage, stages)
        for step in range(steps):
            idx = rng.integers(0, len(samples), size=batch)
            x0, bundle, cond = make_batch(samples, idx, dtype, stage, rng, mask_dropout)
            ts = rng.integers(lo, hi + 1, size=batch)
            eps = Grid(rng.standard_normal(x0.data.shape).astype(dtype))
            loss = train_loss(model, x0, ts, eps, bundle, stage, schedule, cond=cond)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log:
                log.add(step, stage.value, loss.item(), int(ts.min()), int(ts.max()))
    finally:
        for p in frozen:
            p.requires_grad = True
    return branch
