"""Command-line surface: generate / train / eval / analyze / export-graph / ablate."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .ablate import AblationSettings, ablation_csv, run_ablation
from .blocks import BlockKind, DimSchedule
from .dataio import load_cloud, load_train_config, save_cloud_ascii, save_cloud_binary
from .errors import (
    ConfigError,
    GenerationError,
    IndexRangeError,
    InputError,
    MetricError,
    NumericError,
    ParseError,
    ShapeError,
)
from .graph import TopologyKind, build_topology, to_dot, to_json
from .metrics import analyze, metrics_csv
from .pointops import thread_cap
from .scene import SceneSpec, generate_scene
from .supervision import SupervisionMode, select_supervised_nodes
from .training import WIDE_EXTRA, train

_ERRORS = (
    ConfigError,
    GenerationError,
    IndexRangeError,
    InputError,
    MetricError,
    NumericError,
    ParseError,
    ShapeError,
    FileNotFoundError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codecforge",
        description="Desk-scale laboratory for nested U-Net point-cloud codecs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic labeled scenes")
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--scenes", type=int, default=4)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--density", type=float, default=60.0)
    gen.add_argument("--extent", default="4,4,2.5", help="room W,D,H in meters")
    gen.add_argument("--small-object-fraction", type=float, default=0.12)
    gen.add_argument("--noise-sigma", type=float, default=0.01)
    gen.add_argument("--color-noise", type=float, default=0.08)
    gen.add_argument("--format", choices=("ascii", "binary"), default="ascii")

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("--config", required=True, type=Path)
    tr.add_argument("--data", required=True, type=Path)
    tr.add_argument("--out", required=True, type=Path)
    tr.add_argument("--resume", type=Path, default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--data", required=True, type=Path)
    ev.add_argument("--csv", type=Path, default=None)

    an = sub.add_parser("analyze", help="parameter/MAC analysis of a topology")
    an.add_argument("--topology", required=True, choices=[k.value for k in TopologyKind])
    an.add_argument("--levels", type=int, required=True)
    an.add_argument("--block", choices=[b.value for b in BlockKind], default="shared_mlp")
    an.add_argument("--points", type=int, default=40960)
    an.add_argument("--classes", type=int, default=6)
    an.add_argument("--k", type=int, default=16)
    an.add_argument("--width-mult", type=int, default=1)
    an.add_argument("--wide", action="store_true", help="add the wide-variant widths")
    an.add_argument(
        "--supervision",
        choices=[m.value for m in SupervisionMode],
        default="multi_level",
    )
    an.add_argument("--csv", type=Path, default=None)

    ex = sub.add_parser("export-graph", help="emit a topology as DOT or JSON")
    ex.add_argument("--topology", required=True, choices=[k.value for k in TopologyKind])
    ex.add_argument("--levels", type=int, required=True)
    ex.add_argument("--format", choices=("dot", "json"), default="dot")
    ex.add_argument("--block", choices=[b.value for b in BlockKind], default="shared_mlp")
    ex.add_argument("--k", type=int, default=16)

    ab = sub.add_parser("ablate", help="topology/supervision sweep, CSV comparison")
    ab.add_argument("--out", required=True, type=Path)
    ab.add_argument("--seeds", type=int, default=5)
    ab.add_argument("--epochs", type=int, default=30)
    ab.add_argument("--levels", type=int, default=2)
    ab.add_argument("--block", choices=[b.value for b in BlockKind], default="shared_mlp")
    ab.add_argument("--train-scenes", type=int, default=4)
    ab.add_argument("--eval-scenes", type=int, default=3)
    ab.add_argument(
        "--arms",
        default="unet:no_ds,unext:no_ds,unext:multi_level",
        help="comma-separated topology:supervision pairs",
    )
    return parser


def _cmd_generate(args) -> int:
    extent = tuple(float(v) for v in args.extent.split(","))
    if len(extent) != 3:
        raise ConfigError(f"--extent needs W,D,H, got {args.extent!r}")
    spec = SceneSpec(
        extent=extent,
        density=args.density,
        small_object_fraction=args.small_object_fraction,
        noise_sigma=args.noise_sigma,
        color_noise=args.color_noise,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    suffix = "pcseg" if args.format == "ascii" else "pcsb"
    save = save_cloud_ascii if args.format == "ascii" else save_cloud_binary

    def build(i: int):
        return generate_scene(spec, seed=args.seed + i)

    workers = thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            clouds = list(pool.map(build, range(args.scenes)))
    else:
        clouds = [build(i) for i in range(args.scenes)]
    for i, cloud in enumerate(clouds):
        save(cloud, args.out / f"scene_{i:03d}.{suffix}", 6)
        print(f"wrote {args.out / f'scene_{i:03d}.{suffix}'} ({len(cloud)} points)")
    return 0


def _load_dataset(data_dir: Path, expected_classes: int):
    files = sorted(data_dir.glob("*.pcseg")) + sorted(data_dir.glob("*.pcsb"))
    if not files:
        raise InputError(f"no .pcseg/.pcsb files in {data_dir}")
    clouds = []
    for f in files:
        cloud, classes = load_cloud(f)
        if classes != expected_classes:
            raise ConfigError(
                f"{f} declares {classes} classes, run expects {expected_classes}"
            )
        clouds.append(cloud)
    return clouds


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    clouds = _load_dataset(args.data, cfg.num_classes)
    result = train(cfg, clouds, args.out, resume=args.resume)
    last = result.history[-1] if result.history else {}
    print(
        f"trained {result.epochs_run} epochs; "
        f"final l_h={last.get('l_h', float('nan')):.4f} "
        f"train_oa={last.get('train_oa', float('nan')):.4f}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    from .training import evaluate, load_checkpoint, restore_model

    cfg, model, _, _ = restore_model(load_checkpoint(args.checkpoint))
    clouds = _load_dataset(args.data, cfg.num_classes)
    cm, report = evaluate(model, clouds, cfg)
    print(json.dumps(report, indent=2))
    if args.csv is not None:
        args.csv.write_text(metrics_csv(cm))
        print(f"metrics csv: {args.csv}")
    return 0


def _cmd_analyze(args) -> int:
    dims = DimSchedule(
        width_mult=args.width_mult, extra=WIDE_EXTRA if args.wide else None
    )
    g = build_topology(
        TopologyKind(args.topology),
        args.levels,
        dims=dims,
        block_kind=BlockKind(args.block),
        k=args.k,
    )
    g.supervised = select_supervised_nodes(g, SupervisionMode(args.supervision))
    report = analyze(g, args.points, classes=args.classes)
    print(f"topology {args.topology} L={args.levels} block={args.block}")
    print(f"total parameters: {report.total_params} ({report.total_params / 1e6:.3f} M)")
    print(f"estimated MACs at {args.points} points: {report.total_macs}")
    print(f"backbone share: {report.backbone_share:.4f}")
    print(f"deepest codec share: {report.deepest_codec_share:.4f}")
    for row in sorted(report.row_fractions):
        print(f"row {row}: params={report.row_params[row]} fraction={report.row_fractions[row]:.4f}")
    if args.csv is not None:
        args.csv.write_text(report.csv())
        print(f"analysis csv: {args.csv}")
    return 0


def _cmd_export_graph(args) -> int:
    g = build_topology(
        TopologyKind(args.topology),
        args.levels,
        block_kind=BlockKind(args.block),
        k=args.k,
    )
    sys.stdout.write(to_dot(g) if args.format == "dot" else to_json(g))
    return 0


def _cmd_ablate(args) -> int:
    arms = []
    for pair in args.arms.split(","):
        topology, _, supervision = pair.partition(":")
        if not supervision:
            raise ConfigError(f"--arms entries are topology:supervision, got {pair!r}")
        arms.append((topology, supervision))
    settings = AblationSettings(
        seeds=tuple(range(args.seeds)),
        arms=tuple(arms),
        levels=args.levels,
        block=args.block,
        epochs=args.epochs,
        train_scenes=args.train_scenes,
        eval_scenes=args.eval_scenes,
    )
    results = run_ablation(settings, args.out)
    csv_text = ablation_csv(results)
    out_csv = Path(args.out) / "ablation.csv"
    out_csv.write_text(csv_text)
    print(csv_text, end="")
    print(f"ablation csv: {out_csv}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "analyze": _cmd_analyze,
    "export-graph": _cmd_export_graph,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def cli(argv) -> int:
    """Functional entry point: argv (without program name) to exit code."""
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
