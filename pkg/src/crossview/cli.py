"""Command-line entry point: ``crossview <verb> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save, write_checkpoint
from .config import RunConfig, load_config, parse_overrides
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .flops import cost_report, encoder_flops
from .heads.dense import DenseRegressor
from .io import ensure_dir, read_crdp, read_ppm, write_crdp, write_ppm
from .metrics import metric_aepe, metric_bad3, metric_delta1, metric_l1x1000
from .model import (STREAM_MASK, STREAM_ORDER, STREAM_SWAP, CrossViewNet, ModelConfig, derive_seed,
                    pretrain_step, reconstruct)
from .optim import OptimState, adamw_step
from .pairs.homography import color_jitter
from .pairs.render import orbit_views, shift_pairs, wall_scene
from .pairs.sampling import (PairManifestEntry, load_scene, read_manifest, resolve, sample_pairs,
                             save_view, write_manifest, write_stats_csv)
from .patches import sample_mask

log = logging.getLogger("crossview")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

METRICS = {"aepe": metric_aepe, "delta1": metric_delta1, "bad3": metric_bad3, "l1x1000": metric_l1x1000}


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    return parse_overrides(overrides, cfg)


def _prepare_out(cfg: RunConfig, force: bool) -> Path:
    out = Path(cfg.out)
    ensure_dir(out, force)
    cfg.save(out / "config.txt")
    return out


def _fit_image(img: np.ndarray, size: int, path) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise DataError(f"{path}: image {w}x{h} smaller than the {size}x{size} model input")
    y, x = (h - size) // 2, (w - size) // 2
    return img[y:y + size, x:x + size]


# ---------------------------------------------------------------- pretrain

def load_pairs(manifest: str, size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if not manifest:
        raise ConfigError("pretrain needs a pair manifest (manifest = <path>)")
    if not os.path.isfile(manifest):
        raise DataError(f"{manifest}: manifest not found")
    entries = read_manifest(manifest)
    if not entries:
        raise DataError(f"{manifest}: manifest has no pairs")
    pairs = []
    for e in entries:
        p1, p2 = resolve(manifest, e.path_view1), resolve(manifest, e.path_view2)
        pairs.append((_fit_image(read_ppm(p1), size, p1), _fit_image(read_ppm(p2), size, p2)))
    return pairs


def batch_for_step(pairs, step: int, batch: int, seed: int, swap: bool):
    """Pairs for one optimizer step, from per-epoch permutations and per-step view swaps.

    Everything is keyed by ``step`` so a resumed run draws the same batches.
    """
    n = len(pairs)
    out = []
    flips = np.random.default_rng(derive_seed(seed, STREAM_SWAP, step)).random(batch) < 0.5
    for b in range(batch):
        epoch, pos = divmod(step * batch + b, n)
        order = np.random.default_rng(derive_seed(seed, STREAM_ORDER, epoch)).permutation(n)
        a, r = pairs[order[pos]]
        out.append((r, a) if swap and flips[b] else (a, r))
    return out


def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    pairs = load_pairs(args.manifest or cfg.manifest, cfg.model.img_size)
    if args.resume:
        model, optim, _ = checkpoint_load(args.resume)
        if model.cfg != cfg.model:
            raise DimensionError(f"{args.resume}: checkpoint model config differs from the run config")
        if optim is None:
            raise DataError(f"{args.resume}: checkpoint has no optimizer state to resume from")
        optim.total_steps = cfg.steps
    else:
        model = CrossViewNet(cfg.model, seed=cfg.seed)
        optim = OptimState(base_lr=cfg.lr, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2),
                           warmup_steps=cfg.warmup_steps, total_steps=cfg.steps, warmup_lr=cfg.warmup_lr,
                           clip_norm=cfg.clip_norm or None)
    out = _prepare_out(cfg, args.force)
    loss_path = out / "loss.csv"
    rows = []
    if args.resume and loss_path.exists():
        with open(loss_path) as f:
            rows = [r for r in csv.reader(f)][1:]
        rows = [r for r in rows if int(r[0]) < optim.step]
    with open(loss_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "loss"])
        w.writerows(rows)
        while optim.step < cfg.steps:
            step = optim.step
            lr = optim.lr_at(step)
            batch = batch_for_step(pairs, step, cfg.batch_size, cfg.seed, cfg.swap_views)
            loss = pretrain_step(model, optim, batch, cfg.seed)
            w.writerow([step, repr(lr), repr(loss)])
            f.flush()
            if optim.step % cfg.checkpoint_every == 0:
                checkpoint_save(model, out / f"ckpt_{optim.step:06d}.ckpt", optim, {"seed": cfg.seed})
                log.info("step %d  lr %.3g  loss %.5f", step, lr, loss)
    checkpoint_save(model, out / "last.ckpt", optim, {"seed": cfg.seed})
    return EXIT_OK


# ---------------------------------------------------------------- reconstruct

def cmd_reconstruct(args) -> int:
    cfg = _run_config(args)
    model, _, _ = checkpoint_load(args.checkpoint)
    if args.config and cfg.model != model.cfg:
        raise DimensionError(f"{args.checkpoint}: checkpoint model config differs from {args.config}")
    size = model.cfg.img_size
    img1 = _fit_image(read_ppm(args.pair[0]), size, args.pair[0])
    img2 = _fit_image(read_ppm(args.pair[1]), size, args.pair[1])
    ratio = model.cfg.mask_ratio if args.mask_ratio is None else args.mask_ratio
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1], got {ratio}")
    mask = sample_mask(model.cfg.num_patches, ratio, derive_seed(cfg.seed, STREAM_MASK))
    out = _prepare_out(cfg, args.force)
    for key, img in reconstruct(model, img1, img2, mask).items():
        write_ppm(out / f"{key}.ppm", img)
    return EXIT_OK


# ---------------------------------------------------------------- covis

def cmd_covis(args) -> int:
    cfg = _run_config(args)
    out = _prepare_out(cfg, args.force)
    manifest = out / "pairs.jsonl"
    rows = []
    for k, scene_dir in enumerate(args.scenes):
        views = load_scene(scene_dir)
        by_name = {v.name: v for v in views}
        picked = sample_pairs(views, args.lo, args.hi, args.cap, derive_seed(cfg.seed, STREAM_ORDER, k),
                              args.tau)
        rel = os.path.relpath(os.path.abspath(scene_dir), os.path.abspath(out))
        for e in picked:
            entry = PairManifestEntry(os.path.join(rel, e.path_view1 + ".ppm"),
                                      os.path.join(rel, e.path_view2 + ".ppm"), e.covis)
            rows.append((entry, by_name[e.path_view1], by_name[e.path_view2]))
    entries = [r[0] for r in rows]
    write_manifest(manifest, entries)
    write_stats_csv(out / "pairs.csv", rows)
    print(f"{len(entries)} pairs -> {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------- flops

def cmd_flops(args) -> int:
    base = load_config(args.config).model if args.config else ModelConfig()
    print(f"{'variant':<8} {'component':<10} {'params':>14} {'GFLOPs':>10}")
    N, D = base.num_patches, base.enc_dim
    enc_params = cost_report(base).params["encoder"]
    print(f"{'any':<8} {'enc/view':<10} {enc_params:>14,d} "
          f"{encoder_flops(base.enc_depth, N, D) / 1e9:>10.3f}")
    for variant in ("cross", "cat"):
        cfg = ModelConfig.from_dict({**base.to_dict(), "decoder": variant})
        rep = cost_report(cfg)
        for comp in ("embed", "encoder", "decoder", "head"):
            print(f"{variant:<8} {comp:<10} {rep.params[comp]:>14,d} {rep.flops[comp] / 1e9:>10.3f}")
        print(f"{variant:<8} {'total':<10} {rep.total_params:>14,d} {rep.total_flops / 1e9:>10.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- flow

def load_flow_dir(directory: str, size: int):
    """``<name>_1.ppm``, ``<name>_2.ppm`` and ``<name>.flow`` (two-channel CRDP) triplets."""
    if not directory or not os.path.isdir(directory):
        raise DataError(f"{directory or '<unset>'}: flow directory not found")
    names = sorted(f[:-5] for f in os.listdir(directory) if f.endswith(".flow"))
    if not names:
        raise DataError(f"{directory}: no <name>.flow files")
    out = []
    for n in names:
        base = os.path.join(directory, n)
        img1 = _fit_image(read_ppm(base + "_1.ppm"), size, base + "_1.ppm")
        img2 = _fit_image(read_ppm(base + "_2.ppm"), size, base + "_2.ppm")
        flow = _fit_image(read_crdp(base + ".flow", channels=2), size, base + ".flow")
        out.append((n, img1, img2, flow.astype(np.float64)))
    return out


def cmd_finetune_flow(args) -> int:
    cfg = _run_config(args)
    if args.checkpoint:
        net, _, _ = checkpoint_load(args.checkpoint)
    else:
        net = CrossViewNet(cfg.model, seed=cfg.seed)
    data = load_flow_dir(args.data or cfg.flow_dir, net.cfg.img_size)
    reg = DenseRegressor(net, channels=2, seed=derive_seed(cfg.seed, 1))
    optim = OptimState(base_lr=cfg.flow_lr, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2),
                       warmup_steps=int(cfg.warmup_frac * cfg.flow_steps), total_steps=cfg.flow_steps,
                       warmup_lr=cfg.warmup_lr)
    out = _prepare_out(cfg, args.force)
    params = reg.parameters()
    n = len(data)
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "loss"])
        for step in range(cfg.flow_steps):
            rng = np.random.default_rng(derive_seed(cfg.seed, STREAM_ORDER, step))
            idx = rng.choice(n, size=min(cfg.flow_batch, n), replace=False)
            img1 = np.stack([color_jitter(data[i][1], args.jitter, rng) for i in idx])
            img2 = np.stack([color_jitter(data[i][2], args.jitter, rng) for i in idx])
            gt = np.stack([data[i][3] for i in idx]).astype(ad.default_dtype())
            diff = reg(img1, img2) - gt
            loss = ad.mean(diff * diff)
            ad.check_finite(loss, "flow loss")
            reg.zero_grad()
            loss.backward()
            lr = optim.lr_at(step)
            adamw_step(params, optim, lr)
            w.writerow([step, repr(lr), repr(float(loss.data))])
    write_checkpoint(out / "flow.ckpt", Checkpoint(net.cfg.to_dict(), reg.state_dict(), None,
                                                   {"head_channels": 2}))
    pred_dir = out / "pred"
    pred_dir.mkdir(exist_ok=True)
    errs = []
    for name, img1, img2, flow in data:
        pred = reg.predict(img1, img2)
        write_crdp(pred_dir / f"{name}.flow", pred.astype(np.float32))
        errs.append(metric_aepe(pred, flow))
    print(f"training-set AEPE {np.mean(errs):.4f} px over {n} pairs")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _pred_gt_files(pred: str, gt: str, ext: str):
    if os.path.isdir(pred):
        names = sorted(f for f in os.listdir(pred) if f.endswith(ext))
        if not names:
            raise DataError(f"{pred}: no *{ext} predictions")
        return [(os.path.join(pred, f), os.path.join(gt, f)) for f in names]
    return [(pred, gt)]


def cmd_eval(args) -> int:
    fn = METRICS[args.metric]
    channels = 2 if args.metric == "aepe" else 1
    scores = []
    for p, g in _pred_gt_files(args.pred, args.gt, args.ext):
        if not os.path.isfile(g):
            raise DataError(f"{g}: ground-truth file not found")
        scores.append(fn(read_crdp(p, channels), read_crdp(g, channels)))
    print(f"{args.metric} {float(np.mean(scores)):.6f} over {len(scores)} file(s)")
    return EXIT_OK


# ---------------------------------------------------------------- toy data

def cmd_toy_data(args) -> int:
    cfg = _run_config(args)
    out = _prepare_out(cfg, args.force)
    size = cfg.model.img_size
    rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    if args.kind == "scenes":
        for k in range(args.count):
            d = out / f"scene_{k:03d}"
            d.mkdir(exist_ok=True)
            scene = wall_scene(rng)
            for v in orbit_views(scene, args.views, size, seed=int(rng.integers(2 ** 31))):
                save_view(d, v)
    else:
        for k, (img1, img2, flow) in enumerate(shift_pairs(args.count, cfg.seed, size)):
            write_ppm(out / f"pair_{k:03d}_1.ppm", img1)
            write_ppm(out / f"pair_{k:03d}_2.ppm", img2)
            write_crdp(out / f"pair_{k:03d}.flow", flow.astype(np.float32))
    print(f"wrote {args.count} {args.kind} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _ratio(text: str) -> float:
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= r <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {r}")
    return r


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crossview", description="Cross-view completion pre-training.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="pre-train on a pair manifest")
    p.add_argument("--manifest", help="pair manifest (overrides the config)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("reconstruct", parents=[common], help="write reference/masked/prediction/target PPMs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", nargs=2, required=True, metavar=("FIRST", "REFERENCE"))
    p.add_argument("--mask-ratio", type=_ratio)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("covis", parents=[common], help="co-visibility pair manifest from scene directories")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--lo", type=_ratio, default=0.5)
    p.add_argument("--hi", type=_ratio, default=1.0)
    p.add_argument("--cap", type=int, default=1000)
    p.add_argument("--tau", type=float, default=0.02)
    p.set_defaults(func=cmd_covis)

    p = sub.add_parser("flops", parents=[common], help="parameter and FLOPs table for both decoders")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("finetune-flow", parents=[common], help="fine-tune a dense flow head")
    p.add_argument("--checkpoint", help="pre-trained checkpoint (random init when omitted)")
    p.add_argument("--data", help="directory of flow triplets (overrides flow_dir)")
    p.add_argument("--jitter", type=float, default=0.0, help="colour jitter amount")
    p.set_defaults(func=cmd_finetune_flow)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="CRDP file or directory")
    p.add_argument("--gt", required=True, help="CRDP file or directory")
    p.add_argument("--metric", choices=sorted(METRICS), default="aepe")
    p.add_argument("--ext", default=".flow", help="file extension when comparing directories")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("toy-data", parents=[common], help="render toy scenes or shifted flow pairs")
    p.add_argument("--kind", choices=("scenes", "flow"), default="scenes")
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--views", type=int, default=6)
    p.set_defaults(func=cmd_toy_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, DimensionError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
