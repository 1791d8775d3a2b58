"""Command-line entry point.

Subcommands: dataset gen|filter|stats, train, generate, edit, eval,
spectrum, sweep, ablate. Every command echoes its resolved run
configuration; GLYPHFORGE_SEED overrides the configured seed. Exit
codes: 0 ok, 2 usage, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import runtime
from .config import RunConfig
from .diffusion import q_sample
from .errors import GlyphForgeError, UsageError
from .evalkit import (
    TemplateBank,
    evaluate_model,
    radial_log_amplitude,
    spectrum_csv,
    template_scorer,
)
from .freqbalance import FreqEnhanceParams, gamma_modulate, sweep_params
from .glyphdata import (
    dataset_stats,
    filter_sample,
    get_font,
    read_dataset,
    read_manifest,
    render_sample,
    score_lines,
    write_dataset,
)
from .pgm import read_pgm, write_pgm
from .tensor import Grid, no_grad


def _load_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("seed",):
        val = getattr(args, key, None)
        if val is not None:
            cfg.values["run"][key] = val
    for key in ("alpha", "beta", "s", "r_thresh"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.values["enhance"][key] = val
    for key in ("split_frac", "edit_noise_frac"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.values["stages"][key] = val
    if getattr(args, "steps", None) is not None:
        cfg.values["diffusion"]["sample_steps"] = args.steps
    cfg.resolve_env()
    return cfg


def _echo(cfg):
    print("# resolved run configuration")
    print(cfg.dumps())


def _enhance_from(cfg, args):
    if getattr(args, "no_enhance", False):
        return None
    return cfg.enhance_params()


def _parse_boxes(text):
    if text is None:
        return None
    try:
        boxes = json.loads(text)
        return [tuple(int(v) for v in b) for b in boxes]
    except (ValueError, TypeError) as exc:
        raise UsageError(f"malformed box JSON {text!r}: {exc}")


# -- dataset ----------------------------------------------------------------------

def cmd_dataset_gen(args):
    cfg = _load_config(args)
    _echo(cfg)
    rc = cfg.render_config()
    samples = [render_sample([cfg.seed, i], rc) for i in range(args.count)]
    bank = TemplateBank(get_font(rc.font))
    scorer = template_scorer(bank)
    for s in samples:
        score_lines(s, scorer)
    write_dataset(samples, args.out)
    stats = dataset_stats(samples)
    print(f"wrote {stats.image_count} samples ({stats.line_count} lines, "
          f"mean {stats.mean_chars_per_line:.2f} chars/line) to {args.out}")
    return 0


def cmd_dataset_filter(args):
    cfg = _load_config(args)
    _echo(cfg)
    fc = cfg.filter_config()
    samples = read_dataset(args.data)
    manifest = read_manifest(args.data)
    out = args.out or os.path.join(args.data, "filter_report.csv")
    kept = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "accept", "reason"])
        for item, s in zip(manifest["items"], samples):
            h, wd = s.image.data.shape[-2:]
            d = filter_sample({"width": wd, "height": h, "lines": s.lines}, fc)
            kept += int(d.accept)
            w.writerow([item["image"], int(d.accept), d.reason or ""])
    print(f"filter kept {kept}/{len(samples)}; report at {out}")
    return 0


def cmd_dataset_stats(args):
    cfg = _load_config(args)
    _echo(cfg)
    stats = dataset_stats(read_dataset(args.data))
    print(f"image_count={stats.image_count} line_count={stats.line_count} "
          f"mean_chars_per_line={stats.mean_chars_per_line:.4f} "
          f"frac_lines_under_20={stats.frac_lines_under_20:.4f}")
    return 0


# -- training -----------------------------------------------------------------------

def cmd_train(args):
    cfg = _load_config(args)
    _echo(cfg)
    samples = read_dataset(args.data)
    which = {"global": ("base", "global"), "detail": ("base", "detail"),
             "both": ("base", "global", "detail"), "base": ("base",)}[args.stage]
    runtime.train_stack(cfg, samples, args.out, which=which, log_dir=args.out,
                        reuse=not args.fresh)
    cfg.save(os.path.join(args.out, "run_config.ini"))
    print(f"checkpoints in {args.out}")
    return 0


# -- generation / editing --------------------------------------------------------------

def _pipeline(cfg, ckpt):
    return runtime.load_stack(cfg, ckpt)


def cmd_generate(args):
    cfg = _load_config(args)
    _echo(cfg)
    pipe = _pipeline(cfg, args.ckpt)
    lines = runtime.layout_lines(args.text, cfg, _parse_boxes(args.boxes))
    cond = runtime.cond_for_lines(lines, cfg)
    bg, bd = runtime.bundles_for_lines(lines, cfg)
    enhance = _enhance_from(cfg, args)
    img = pipe.generate(cond, bg, bd, enhance=enhance, seed=cfg.seed, batch=args.batch)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    base, ext = os.path.splitext(args.out)
    paths = []
    for i in range(args.batch):
        path = args.out if args.batch == 1 else f"{base}_{i:03d}{ext}"
        write_pgm(path, img.data[i, 0])
        paths.append(path)
    provenance = {
        "command": "generate",
        "text": args.text,
        "boxes": [list(l.bbox) for l in lines],
        "seed": cfg.seed,
        "enhance": None if enhance is None else vars(enhance),
        "sample_steps": pipe.sample_steps,
        "outputs": paths,
    }
    with open(base + ".json", "w") as fh:
        json.dump(provenance, fh, indent=1)
    print(f"wrote {', '.join(paths)}")
    return 0


def cmd_edit(args):
    cfg = _load_config(args)
    _echo(cfg)
    pipe = _pipeline(cfg, args.ckpt)
    original = Grid(read_pgm(args.input)[None])
    boxes = _parse_boxes(args.boxes)
    if not boxes:
        raise UsageError("edit requires at least one box (--boxes JSON)")
    lines = runtime.layout_lines(args.text, cfg, boxes)
    cond = runtime.cond_for_lines(lines, cfg)
    bg, bd = runtime.bundles_for_lines(lines, cfg, original=original)
    enhance = _enhance_from(cfg, args)
    out, provenance = pipe.edit(original, bd, bg, enhance=enhance, seed=cfg.seed, cond=cond)
    write_pgm(args.out, out.data[0])
    base, _ = os.path.splitext(args.out)
    diff = np.abs(out.data[0] - original.data[0])
    write_pgm(base + "_diff.pgm", np.clip(diff, 0.0, 1.0))
    provenance.update({
        "command": "edit",
        "text": args.text,
        "boxes": [list(l.bbox) for l in lines],
        "input": args.input,
        "enhance": None if enhance is None else vars(enhance),
    })
    with open(base + ".json", "w") as fh:
        json.dump(provenance, fh, indent=1)
    print(f"wrote {args.out} (t_star={provenance['t_star']})")
    return 0


# -- evaluation ----------------------------------------------------------------------

def _batched_eval_images(pipe, cfg, samples, enhance, seed, uncontrolled=False,
                         control_window=None):
    """Generate one image per sample (batched), conditioned on its annotations."""
    n = len(samples)
    glyph = Grid(np.stack([s.glyph_map.data for s in samples]))
    pos = Grid(np.stack([s.position_map.data for s in samples]))
    from .control import ControlBundle

    bg = ControlBundle(glyph, pos)
    bd = ControlBundle(
        Grid(glyph.data.copy()), Grid(pos.data.copy()),
        Grid(np.zeros_like(pos.data)),
    )
    conds = [runtime.sample_cond(s) for s in samples]
    if uncontrolled:
        img = pipe.generate_uncontrolled(conds, seed=seed, batch=n)
    else:
        img = pipe.generate(conds, bg, bd, enhance=enhance, seed=seed, batch=n,
                            control_window=control_window)
    return [Grid(img.data[i]) for i in range(n)]


def cmd_eval(args):
    cfg = _load_config(args)
    _echo(cfg)
    samples = read_dataset(args.data)
    if args.limit:
        samples = samples[: args.limit]
    pipe = _pipeline(cfg, args.ckpt)
    bank = TemplateBank(get_font(cfg.values["run"]["font"]))
    enhance = _enhance_from(cfg, args)
    images = _batched_eval_images(pipe, cfg, samples, enhance, cfg.seed,
                                  uncontrolled=args.uncontrolled)
    report = evaluate_model(lambda s, i: images[i], samples, bank)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    report.write_csv(os.path.join(outdir, "eval_lines.csv"),
                     os.path.join(outdir, "eval_summary.csv"))
    print(f"acc={report.acc:.4f} ned={report.ned:.4f} n={report.n}")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    _echo(cfg)
    samples = read_dataset(args.data)[: args.limit or 32]
    pipe = _pipeline(cfg, args.ckpt)
    bank = TemplateBank(get_font(cfg.values["run"]["font"]))

    def eval_fn(params):
        enhance = None if (params.alpha, params.beta, params.s) == (1.0, 1.0, 1.0) else params
        images = _batched_eval_images(pipe, cfg, samples, enhance, cfg.seed)
        report = evaluate_model(lambda s, i: images[i], samples, bank)
        return report.acc, report.ned

    combos = [
        FreqEnhanceParams(a, b, s, r)
        for a in args.alphas for b in args.betas for s in args.ss for r in args.r_threshs
    ]
    rows = sweep_params(eval_fn, combos, csv_path=args.out)
    for r in rows:
        print(f"alpha={r['alpha']} beta={r['beta']} s={r['s']} r_thresh={r['r_thresh']} "
              f"acc={r['acc']:.4f} ned={r['ned']:.4f}")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    _echo(cfg)
    samples = read_dataset(args.data)[: args.count]
    pipe = _pipeline(cfg, args.ckpt)
    bank = TemplateBank(get_font(cfg.values["run"]["font"]))
    enhance = _enhance_from(cfg, args)
    window = (args.t_on_lo, args.t_on_hi)
    full_imgs = _batched_eval_images(pipe, cfg, samples, enhance, cfg.seed)
    win_imgs = _batched_eval_images(pipe, cfg, samples, enhance, cfg.seed,
                                    control_window=window)
    acc_full = evaluate_model(lambda s, i: full_imgs[i], samples, bank).acc
    acc_win = evaluate_model(lambda s, i: win_imgs[i], samples, bank).acc
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_on_lo", "t_on_hi", "acc"])
            w.writerow([0.0, 1.0, f"{acc_full:.6f}"])
            w.writerow([window[0], window[1], f"{acc_win:.6f}"])
    verdict = "LOWER" if acc_win < acc_full else "NOT LOWER"
    print(f"acc_full={acc_full:.4f} acc_window={acc_win:.4f} -> windowed control is {verdict}")
    return 0


def cmd_spectrum(args):
    cfg = _load_config(args)
    _echo(cfg)
    samples = read_dataset(args.data)[: args.limit or 8]
    pipe = _pipeline(cfg, args.ckpt)
    model = pipe.model
    t = args.timestep
    stage = model.route(t)
    enhance = cfg.enhance_params() if args.enhance else None
    rng = np.random.default_rng([cfg.seed, 77])
    dtype = model.unet.cfg.np_dtype
    curves = {"base": [], "skip": [], "control": []}
    with no_grad():
        for s in samples:
            x0 = Grid((2.0 * s.image.data[None] - 1.0).astype(dtype))
            eps = Grid(rng.standard_normal(x0.data.shape).astype(dtype))
            x_t = q_sample(x0, t, eps, pipe.schedule)
            bg, bd = runtime.sample_bundles(s)
            bundle = bg if stage.value == "global" else bd
            cond = runtime.sample_cond(s)
            controls = model.controls_for(x_t, t, bundle, stage, cond)
            _, snaps = model.unet.capture_decoder_features(x_t, t, None, controls)
            snap = snaps[args.layer]
            for source in ("base", "skip", "control"):
                feat = snap[source]
                if feat is None:
                    continue
                feat = feat[0]
                if source == "control" and enhance is not None:
                    feat = gamma_modulate(Grid(feat), enhance).data
                curves[source].append(
                    radial_log_amplitude(feat, anchor=not args.absolute)
                )
    rows = []
    for source, cs in curves.items():
        if not cs:
            continue
        vals = np.mean([c.rel_log_amp for c in cs], axis=0)
        for r, v in zip(cs[0].radial_bins, vals):
            rows.append((source, args.layer, r, v))
    spectrum_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} rows, t={t}, stage={stage.value})")
    return 0


# -- parser -------------------------------------------------------------------------

def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def build_parser():
    p = argparse.ArgumentParser(prog="glyphforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, enhance=False, sampling=False):
        sp.add_argument("--config", help="run config file (key=value sections)")
        sp.add_argument("--seed", type=int, default=None)
        if enhance:
            sp.add_argument("--alpha", type=float, default=None)
            sp.add_argument("--beta", type=float, default=None)
            sp.add_argument("--s", type=float, default=None)
            sp.add_argument("--r-thresh", dest="r_thresh", type=float, default=None)
            sp.add_argument("--no-enhance", action="store_true")
        if sampling:
            sp.add_argument("--steps", type=int, default=None, help="strided sampler steps")
            sp.add_argument("--split-frac", dest="split_frac", type=float, default=None)
            sp.add_argument("--edit-noise-frac", dest="edit_noise_frac", type=float, default=None)

    ds = sub.add_parser("dataset", help="corpus tools").add_subparsers(dest="sub", required=True)
    g = ds.add_parser("gen", help="render a corpus")
    common(g)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_dataset_gen)
    f = ds.add_parser("filter", help="apply admission rules")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--out")
    f.set_defaults(func=cmd_dataset_filter)
    st = ds.add_parser("stats", help="corpus statistics")
    common(st)
    st.add_argument("--data", required=True)
    st.set_defaults(func=cmd_dataset_stats)

    t = sub.add_parser("train", help="train base and control stages")
    common(t)
    t.add_argument("--stage", choices=("base", "global", "detail", "both"), default="both")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample images for requested text")
    common(g, enhance=True, sampling=True)
    g.add_argument("--text", nargs="+", required=True, help="one string per line")
    g.add_argument("--boxes", help="JSON [[x,y,w,h],...] per line")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--batch", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("edit", help="replace text in an existing image")
    common(e, enhance=True, sampling=True)
    e.add_argument("--input", required=True)
    e.add_argument("--text", nargs="+", required=True)
    e.add_argument("--boxes", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_edit)

    ev = sub.add_parser("eval", help="metric report over an annotated corpus")
    common(ev, enhance=True, sampling=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--out")
    ev.add_argument("--limit", type=int, default=0)
    ev.add_argument("--uncontrolled", action="store_true")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="metric grid over enhancement parameters")
    common(sw, sampling=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--ckpt", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--alphas", type=_float_list, default=[1.0, 1.4])
    sw.add_argument("--betas", type=_float_list, default=[1.0, 1.2])
    sw.add_argument("--ss", type=_float_list, default=[0.2, 1.0])
    sw.add_argument("--r-threshs", dest="r_threshs", type=_float_list, default=[0.25])
    sw.add_argument("--limit", type=int, default=16)
    sw.set_defaults(func=cmd_sweep)

    ab = sub.add_parser("ablate", help="control-window ablation")
    common(ab, enhance=True, sampling=True)
    ab.add_argument("--data", required=True)
    ab.add_argument("--ckpt", required=True)
    ab.add_argument("--t-on-lo", dest="t_on_lo", type=float, required=True)
    ab.add_argument("--t-on-hi", dest="t_on_hi", type=float, required=True)
    ab.add_argument("--count", type=int, default=64)
    ab.add_argument("--out")
    ab.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("spectrum", help="radial log-amplitude curves of decoder inputs")
    common(sp, sampling=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--layer", type=int, default=0, help="decoder layer index, deepest first")
    sp.add_argument("--timestep", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=8)
    sp.add_argument("--absolute", action="store_true",
                    help="emit unanchored log amplitudes instead of bin0-relative")
    sp.add_argument("--enhance", action="store_true",
                    help="apply the low-frequency suppression to control curves")
    sp.set_defaults(func=cmd_spectrum)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GlyphForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
