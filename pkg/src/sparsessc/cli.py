"""Command line: preprocess, train, infer, eval, export, selfcheck.

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, FormatError, SpecError
from .features import extract_features, write_image_dump
from .fusion import mvf_lift, refine
from .metrics import evaluate, format_report
from .network import BlockConfig, CompletionNet, labels_to_grid
from .scene_io import DenseLabelGrid, read_label_grid, read_scan, write_label_grid
from .sparse import checkpoint
from .sparse.tensor_io import read_tensor, write_tensor
from .training import JsonLog, Trainer, block_config, feature_config, load_config, load_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _config(args):
    cfg = load_config(args.config, args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_values(train={"seed": args.seed})
    return cfg


# ------------------------------------------------------------ checkpoints

def _meta(cfg: BlockConfig) -> dict:
    meta = {"dim": cfg.dim, "in_channels": cfg.in_channels, "num_classes": cfg.num_classes,
            "cam_kernel": cfg.cam_kernel, "reduction": cfg.reduction,
            "spn_iterations": cfg.spn_iterations, "spn_hidden": cfg.spn_hidden}
    for i, c in enumerate(cfg.channels):
        meta[f"channels{i}"] = c
    for i, r in enumerate(cfg.aspp_rates):
        meta[f"rate{i}"] = r
    for i, g in enumerate(cfg.grid_dims):
        meta[f"grid{i}"] = g
    return meta


def save_network(path, net: CompletionNet, extra: dict | None = None) -> None:
    meta = _meta(net.cfg)
    meta.update(extra or {})
    checkpoint.save(path, net, meta)


def load_network(path, expect_dim: int | None = None) -> CompletionNet:
    meta = {r[0][5:]: float(r[5][0]) for r in checkpoint.decode(Path(path).read_bytes())
            if r[0].startswith("meta.")}
    try:
        dim = int(meta["dim"])
        cfg = BlockConfig(
            dim=dim, in_channels=int(meta["in_channels"]), num_classes=int(meta["num_classes"]),
            channels=tuple(int(meta[f"channels{i}"]) for i in range(5)),
            aspp_rates=tuple(int(meta[k]) for k in sorted(meta) if k.startswith("rate")),
            cam_kernel=int(meta["cam_kernel"]), reduction=int(meta["reduction"]),
            spn_iterations=int(meta["spn_iterations"]), spn_hidden=int(meta["spn_hidden"]),
            grid_dims=tuple(int(meta[f"grid{i}"]) for i in range(dim)))
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"{path}: missing architecture entry {exc}") from exc
    if expect_dim is not None and dim != expect_dim:
        raise checkpoint.CheckpointError(f"{path}: holds a {dim}D network, expected {expect_dim}D")
    net = CompletionNet(cfg)
    checkpoint.load(path, net)
    return net.eval()


# --------------------------------------------------------------- commands

def cmd_preprocess(args) -> int:
    cfg = _config(args)
    pc = read_scan(args.scan)
    feats = extract_features(pc, feature_config(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(f"{out}.x3d.sst", feats.x3d)
    write_tensor(f"{out}.x2d.sst", feats.x2d)
    if args.debug:
        write_image_dump(f"{out}.range.dump", feats.range_image)
        write_image_dump(f"{out}.normals.dump", feats.normals)
    print(f"{len(pc)} points -> {len(feats.x3d)} voxels, {len(feats.x2d)} pillars "
          f"(dropped {feats.dropped_fov} outside the image, {feats.dropped_extent} outside the grid)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.network:
        cfg = cfg.with_values(train={"network": args.network})
    if args.epochs is not None:
        cfg = cfg.with_values(train={"epochs": args.epochs})
    samples = load_dataset(args.dataset, cfg)
    log = JsonLog(args.log, echo=None if args.quiet else print)
    try:
        trainer = Trainer(cfg, samples, log)
        trainer.fit()
    finally:
        log.close()
    save_network(args.out, trainer.net, {"epochs": trainer.epoch, "seed": cfg.train.seed})
    return EXIT_OK


def _scan_inputs(path, cfg):
    p = str(path)
    if p.endswith(".x3d.sst"):
        x3d = read_tensor(p)
        sib = Path(p[:-len(".x3d.sst")] + ".x2d.sst")
        return x3d, (read_tensor(sib) if sib.exists() else None)
    feats = extract_features(read_scan(p), feature_config(cfg))
    return feats.x3d, feats.x2d


def cmd_infer(args) -> int:
    if args.fuse and not args.checkpoint_2d:
        raise UsageError("--fuse needs --checkpoint-2d")
    cfg = _config(args)
    geom = cfg.geometry.grid()
    net = load_network(args.checkpoint, expect_dim=3)
    if tuple(net.cfg.grid_dims) != tuple(geom.dims):
        raise checkpoint.CheckpointError(
            f"checkpoint grid {net.cfg.grid_dims} differs from configured grid {geom.dims}")
    x3d, x2d = _scan_inputs(args.scan, cfg)
    out = net(x3d)
    labels = labels_to_grid(out, geom.dims)
    if args.fuse:
        net2 = load_network(args.checkpoint_2d, expect_dim=2)
        if x2d is None:
            raise FormatError(f"{args.scan}: no 2D input tensor next to the 3D one")
        bev = labels_to_grid(net2(x2d), geom.dims[:2])
        labels = mvf_lift(labels, bev)
        if out.features is not None and net.spn.iterations:
            labels = refine(labels, net.spn, out.features)
    grid = DenseLabelGrid(labels, np.zeros(labels.shape, bool), geom)
    write_label_grid(grid, args.out)
    print(f"{int((labels > 0).sum())} occupied voxels written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    geom = cfg.geometry.grid()
    pred = read_label_grid(args.pred, None, geom)
    gt = read_label_grid(args.gt, args.gt_invalid, geom)
    text = format_report(evaluate(pred.labels, gt.labels, gt.invalid), args.format)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def export_points(grid: DenseLabelGrid) -> str:
    ijk = np.argwhere(grid.labels > 0)
    centres = grid.geometry.centers(ijk)
    cls = grid.labels[tuple(ijk.T)] if len(ijk) else np.zeros(0, int)
    return "".join(f"{x:.4f} {y:.4f} {z:.4f} {int(c)}\n" for (x, y, z), c in zip(centres, cls))


def cmd_export(args) -> int:
    cfg = _config(args)
    grid = read_label_grid(args.grid, None, cfg.geometry.grid())
    if args.format == "raw":
        write_label_grid(grid, args.out)
    else:
        Path(args.out).write_text(export_points(grid))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all
    return EXIT_OK if run_all(args.suite) else 1


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsessc", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--preset", help="named configuration preset")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1, help="numerical library threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="scan -> sparse input tensors")
    s.add_argument("scan")
    s.add_argument("out", help="output prefix; writes <out>.x3d.sst and <out>.x2d.sst")
    s.add_argument("--debug", action="store_true", help="also dump range image and normals")
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="train on a scene directory")
    s.add_argument("dataset")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--network", choices=["3d", "2d"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--log", help="write the JSON-lines log here")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="predict a label grid for one scan")
    s.add_argument("checkpoint")
    s.add_argument("scan", help="raw scan (.bin) or preprocessed <name>.x3d.sst")
    s.add_argument("--out", required=True)
    s.add_argument("--fuse", action="store_true", help="lift the 2D prediction and refine")
    s.add_argument("--checkpoint-2d", dest="checkpoint_2d")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="IoU report for a predicted grid")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--gt-invalid", dest="gt_invalid")
    s.add_argument("--format", choices=["text", "csv"], default="text")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("export", parents=[common], help="write a grid as raw labels or a point list")
    s.add_argument("grid")
    s.add_argument("--format", choices=["raw", "points"], default="points")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_export)

    s = sub.add_parser("selfcheck", help="run the oracle suites")
    s.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(fn=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.fn(args)
    except (UsageError, ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataError, checkpoint.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
