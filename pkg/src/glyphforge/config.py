"""Run configuration: plain key=value lines under [section] headers.

A resolved RunConfig fully determines a run; saving and replaying it
reproduces outputs byte for byte. GLYPHFORGE_SEED in the environment
overrides the configured seed at resolve time.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

from .errors import DataError, UsageError
from .freqbalance import FreqEnhanceParams
from .glyphdata import FilterConfig, RenderConfig, get_font
from .stager import StageSchedule
from .unet import UNetConfig

DEFAULTS = {
    "run": {"seed": 0, "canvas": 32, "font": "basic5x7", "classes": "", "scale": 2},
    "unet": {
        "base_channels": 16,
        "levels": 3,
        "time_embed_dim": 32,
        "cond_embed_dim": 16,
        "norm_groups": 4,
        "dtype": "float32",
    },
    "diffusion": {"timesteps": 1000, "beta_start": 1e-4, "beta_end": 0.02, "sample_steps": 50},
    "stages": {
        "split_frac": 0.5,
        "edit_noise_frac": 0.8,
        "warm_start_detail": True,
        "mask_dropout": 0.5,
        "min_masked_size": 16,
    },
    "enhance": {"alpha": 1.4, "beta": 1.2, "s": 0.2, "r_thresh": 0.25},
    "control": {"fec_freq_enabled": True, "fec_fuse_mode": "sum", "big_kernel": 9},
    "train": {"base_steps": 400, "global_steps": 700, "detail_steps": 700, "batch": 8, "lr": 2e-3},
    "render": {"min_lines": 1, "max_lines": 1, "min_chars": 1, "max_chars": 1},
    "filter": {
        "min_width": 256,
        "aspect_min": 0.5,
        "aspect_max": 2.0,
        "max_lines": 10,
        "max_small_lines": 3,
        "small_extent_px": 30,
        "min_rec_score": 0.7,
        "max_low_score_lines": 3,
    },
    "paths": {"dataset": "", "checkpoints": "", "outputs": ""},
}


def _parse_value(text, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {
        sec: dict(kv) for sec, kv in DEFAULTS.items()
    })

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, value):
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise UsageError(f"unknown config key [{section}] {key}")
        self.values[section][key] = value

    # -- resolution -------------------------------------------------------
    def resolve_env(self):
        seed = os.environ.get("GLYPHFORGE_SEED")
        if seed is not None:
            self.values["run"]["seed"] = int(seed)
        return self

    @property
    def seed(self):
        return int(self.values["run"]["seed"])

    def alphabet(self):
        classes = self.values["run"]["classes"]
        return classes if classes else get_font(self.values["run"]["font"]).alphabet

    # -- component builders ------------------------------------------------
    def unet_config(self):
        u = self.values["unet"]
        return UNetConfig(
            in_channels=1,
            base_channels=int(u["base_channels"]),
            levels=int(u["levels"]),
            time_embed_dim=int(u["time_embed_dim"]),
            cond_embed_dim=int(u["cond_embed_dim"]),
            norm_groups=int(u["norm_groups"]),
            num_classes=len(get_font(self.values["run"]["font"]).alphabet),
            canvas=int(self.values["run"]["canvas"]),
            dtype=u["dtype"],
        )

    def stage_schedule(self):
        s = self.values["stages"]
        return StageSchedule(
            T=int(self.values["diffusion"]["timesteps"]),
            split_frac=float(s["split_frac"]),
            edit_noise_frac=float(s["edit_noise_frac"]),
        )

    def enhance_params(self):
        e = self.values["enhance"]
        return FreqEnhanceParams(
            alpha=float(e["alpha"]), beta=float(e["beta"]), s=float(e["s"]),
            r_thresh=float(e["r_thresh"]),
        )

    def filter_config(self):
        f = self.values["filter"]
        return FilterConfig(
            min_width=int(f["min_width"]),
            aspect_min=float(f["aspect_min"]),
            aspect_max=float(f["aspect_max"]),
            max_lines=int(f["max_lines"]),
            max_small_lines=int(f["max_small_lines"]),
            small_extent_px=int(f["small_extent_px"]),
            min_rec_score=float(f["min_rec_score"]),
            max_low_score_lines=int(f["max_low_score_lines"]),
        )

    def render_config(self):
        r = self.values["render"]
        run = self.values["run"]
        return RenderConfig(
            canvas=int(run["canvas"]),
            font=run["font"],
            classes=run["classes"] or None,
            min_lines=int(r["min_lines"]),
            max_lines=int(r["max_lines"]),
            min_chars=int(r["min_chars"]),
            max_chars=int(r["max_chars"]),
            scale=int(run["scale"]),
        )

    # -- serialization -------------------------------------------------------
    def dumps(self):
        out = io.StringIO()
        for sec in DEFAULTS:
            out.write(f"[{sec}]\n")
            for key in DEFAULTS[sec]:
                out.write(f"{key} = {self.values[sec][key]}\n")
            out.write("\n")
        return out.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_string(fh.read(), source=path)
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}")
        except configparser.Error as exc:
            raise DataError(f"{path}: {exc}")
        cfg = cls()
        for sec in parser.sections():
            if sec not in DEFAULTS:
                raise UsageError(f"{path}: unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in DEFAULTS[sec]:
                    raise UsageError(f"{path}: unknown key {key!r} in [{sec}]")
                try:
                    cfg.values[sec][key] = _parse_value(raw, DEFAULTS[sec][key])
                except ValueError as exc:
                    raise UsageError(f"{path}: bad value for [{sec}] {key}: {exc}")
        return cfg
