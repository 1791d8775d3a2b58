"""Assembly layer: build models from a RunConfig, train/load checkpoints,
and construct control bundles from text requests or corpus samples."""
from __future__ import annotations

import os

import numpy as np

from .config import RunConfig
from .control import ControlBranch, ControlBundle, StageKind
from .diffusion import make_linear_schedule
from .errors import DataError, UsageError
from .glyphdata import TextLine, get_font, line_geometry, render_from_annotations
from .stager import ControlledModel, Pipeline, StageSchedule
from .tensor import Grid
from .train import (
    LossLog,
    apply_state,
    checkpoint_exists,
    load_checkpoint,
    save_checkpoint,
    train_base,
    train_control,
)
from .unet import ConditionEmbedding, UNet

BASE_NAME = "base"
GLOBAL_NAME = "control_global"
DETAIL_NAME = "control_detail"


def build_unet(cfg):
    return UNet(cfg.unet_config(), seed=cfg.seed)


def build_branch(cfg, stage, seed_offset):
    ctl = cfg.values["control"]
    return ControlBranch(
        cfg.unet_config(),
        stage,
        seed=cfg.seed + seed_offset,
        fec_freq_enabled=bool(ctl["fec_freq_enabled"]),
        fec_fuse_mode=ctl["fec_fuse_mode"],
        big_kernel=int(ctl["big_kernel"]),
    )


def build_pipeline(cfg, unet, global_branch=None, detail_branch=None):
    branches = {}
    if global_branch is not None:
        branches[StageKind.GLOBAL] = global_branch
    if detail_branch is not None:
        branches[StageKind.DETAIL] = detail_branch
    stages = cfg.stage_schedule()
    model = ControlledModel(
        unet, branches, stages, min_masked_size=int(cfg.values["stages"]["min_masked_size"])
    )
    schedule = make_linear_schedule(
        int(cfg.values["diffusion"]["timesteps"]),
        float(cfg.values["diffusion"]["beta_start"]),
        float(cfg.values["diffusion"]["beta_end"]),
    )
    return Pipeline(model, schedule, stages, sample_steps=int(cfg.values["diffusion"]["sample_steps"]))


def train_stack(cfg, samples, out_dir, which=("base", "global", "detail"), log_dir=None,
                reuse=True, quiet=False):
    """Train the requested stages, reusing checkpoints already in out_dir.

    Returns a ready Pipeline. Training order is fixed: base first, then
    the global branch, then the detail branch (optionally warm-started
    from the global weights).
    """
    os.makedirs(out_dir, exist_ok=True)
    tr = cfg.values["train"]
    schedule = make_linear_schedule(
        int(cfg.values["diffusion"]["timesteps"]),
        float(cfg.values["diffusion"]["beta_start"]),
        float(cfg.values["diffusion"]["beta_end"]),
    )
    stages = cfg.stage_schedule()
    unet = build_unet(cfg)

    def log_for(name):
        if log_dir is None:
            return None
        os.makedirs(log_dir, exist_ok=True)
        return LossLog(os.path.join(log_dir, f"loss_{name}.csv"))

    if reuse and checkpoint_exists(out_dir, BASE_NAME):
        state, _ = load_checkpoint(out_dir, BASE_NAME)
        apply_state(unet.named_parameters(), state)
    else:  # the base net is a prerequisite for every stage
        if not quiet:
            print(f"training base U-Net for {tr['base_steps']} steps")
        train_base(unet, samples, schedule, int(tr["base_steps"]), batch=int(tr["batch"]),
                   lr=float(tr["lr"]), seed=cfg.seed, log=log_for("base"))
        save_checkpoint(out_dir, BASE_NAME, unet.named_parameters(), {"seed": cfg.seed})

    global_branch = None
    if "global" in which or "detail" in which:
        global_branch = build_branch(cfg, StageKind.GLOBAL, seed_offset=1)
        if reuse and checkpoint_exists(out_dir, GLOBAL_NAME):
            state, _ = load_checkpoint(out_dir, GLOBAL_NAME)
            apply_state(global_branch.named_parameters("branch"), state)
        elif "global" in which:
            if not quiet:
                print(f"training global control branch for {tr['global_steps']} steps")
            train_control(unet, global_branch, samples, schedule, stages, StageKind.GLOBAL,
                          int(tr["global_steps"]), batch=int(tr["batch"]), lr=float(tr["lr"]),
                          seed=cfg.seed, log=log_for("global"),
                          min_masked_size=int(cfg.values["stages"]["min_masked_size"]))
            save_checkpoint(out_dir, GLOBAL_NAME, global_branch.named_parameters("branch"),
                            {"seed": cfg.seed, "stage": "global"})
        else:
            raise DataError(f"required checkpoint {GLOBAL_NAME!r} not found in {out_dir}")

    detail_branch = None
    if "detail" in which:
        detail_branch = build_branch(cfg, StageKind.DETAIL, seed_offset=2)
        if reuse and checkpoint_exists(out_dir, DETAIL_NAME):
            state, _ = load_checkpoint(out_dir, DETAIL_NAME)
            apply_state(detail_branch.named_parameters("branch"), state)
        else:
            if bool(cfg.values["stages"]["warm_start_detail"]) and global_branch is not None:
                detail_branch.warm_start_from(global_branch)
            if not quiet:
                print(f"training detail control branch for {tr['detail_steps']} steps")
            train_control(unet, detail_branch, samples, schedule, stages, StageKind.DETAIL,
                          int(tr["detail_steps"]), batch=int(tr["batch"]), lr=float(tr["lr"]),
                          seed=cfg.seed, mask_dropout=float(cfg.values["stages"]["mask_dropout"]),
                          log=log_for("detail"),
                          min_masked_size=int(cfg.values["stages"]["min_masked_size"]))
            save_checkpoint(out_dir, DETAIL_NAME, detail_branch.named_parameters("branch"),
                            {"seed": cfg.seed, "stage": "detail"})

    return build_pipeline(cfg, unet, global_branch, detail_branch)


def load_stack(cfg, ckpt_dir, need=("base", "global", "detail")):
    """Load a trained pipeline; a missing artifact is an error naming it."""
    unet = build_unet(cfg)
    if not checkpoint_exists(ckpt_dir, BASE_NAME):
        raise DataError(f"required checkpoint {BASE_NAME!r} not found in {ckpt_dir}")
    state, _ = load_checkpoint(ckpt_dir, BASE_NAME)
    apply_state(unet.named_parameters(), state)
    gb = db = None
    if "global" in need:
        if not checkpoint_exists(ckpt_dir, GLOBAL_NAME):
            raise DataError(f"required checkpoint {GLOBAL_NAME!r} not found in {ckpt_dir}")
        gb = build_branch(cfg, StageKind.GLOBAL, 1)
        state, _ = load_checkpoint(ckpt_dir, GLOBAL_NAME)
        apply_state(gb.named_parameters("branch"), state)
    if "detail" in need:
        if not checkpoint_exists(ckpt_dir, DETAIL_NAME):
            raise DataError(f"required checkpoint {DETAIL_NAME!r} not found in {ckpt_dir}")
        db = build_branch(cfg, StageKind.DETAIL, 2)
        state, _ = load_checkpoint(ckpt_dir, DETAIL_NAME)
        apply_state(db.named_parameters("branch"), state)
    return build_pipeline(cfg, unet, gb, db)


# -- bundles ------------------------------------------------------------------------

def layout_lines(texts, cfg, boxes=None):
    """TextLine list for requested strings, centered when boxes are omitted."""
    font = get_font(cfg.values["run"]["font"])
    canvas = int(cfg.values["run"]["canvas"])
    scale = int(cfg.values["run"]["scale"])
    if boxes is not None:
        if len(boxes) != len(texts):
            raise UsageError(f"{len(texts)} texts but {len(boxes)} boxes")
        lines = []
        for text, (x, y, w, h) in zip(texts, boxes):
            if x < 0 or y < 0 or x + w > canvas or y + h > canvas:
                raise UsageError(f"box {(x, y, w, h)} exceeds the {canvas}px canvas")
            lines.append(TextLine(content=text, bbox=(x, y, w, h)))
        return lines
    lines = []
    n = len(texts)
    for i, text in enumerate(texts):
        w, h = line_geometry(len(text), scale, "horizontal", font)
        if w > canvas or h > canvas:
            raise UsageError(f"line {text!r} at scale {scale} does not fit the canvas")
        x = (canvas - w) // 2
        gap = canvas // (n + 1)
        y = max(0, min(canvas - h, (i + 1) * gap - h // 2))
        lines.append(TextLine(content=text, bbox=(x, y, w, h)))
    return lines


def bundles_for_lines(lines, cfg, original=None):
    """(global bundle, detail bundle) for annotated lines.

    The detail bundle's masked image is the original scene with the text
    boxes zeroed when `original` is given (editing), else all zeros
    (generation has no background to anchor).
    """
    canvas = int(cfg.values["run"]["canvas"])
    font_name = cfg.values["run"]["font"]
    glyph, position = render_from_annotations(lines, canvas, font_name)
    g = Grid(glyph[None])
    p = Grid(position[None])
    if original is not None:
        img = original.data.reshape(original.data.shape[-2:])
        masked = Grid((img * (1.0 - position))[None])
    else:
        masked = Grid(np.zeros((1, canvas, canvas)))
    return ControlBundle(g, p), ControlBundle(g.copy(), p.copy(), masked)


def cond_for_lines(lines, cfg):
    font = get_font(cfg.values["run"]["font"])
    return ConditionEmbedding([[font.class_id(c) for c in l.content] for l in lines])


def sample_bundles(sample, original=None):
    """Bundles for an existing corpus sample (used by evaluation probes)."""
    g = Grid(sample.glyph_map.data.copy())
    p = Grid(sample.position_map.data.copy())
    if original is not None:
        img = original.data.reshape(original.data.shape[-2:])
        pos = sample.position_map.data.reshape(img.shape)
        masked = Grid((img * (1.0 - pos))[None])
    else:
        masked = Grid(np.zeros_like(sample.position_map.data))
    return ControlBundle(g, p), ControlBundle(g.copy(), p.copy(), masked)


def sample_cond(sample):
    return ConditionEmbedding(sample.class_sequences)
