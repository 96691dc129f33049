"""Command-line entry point: ``instfuse {gen-scene,run,sweep-noise,bench-bandwidth}``.

Exit codes: 0 success, 1 runtime/IO failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema

from .evaluation import DEFAULT_NOISE_GRID, EvalReport, NoiseSpec
from .fusion import AttentionConfig, FusionConfigError, load_weights
from .pipeline import STRATEGIES, PipelineConfig, run_pipeline, transmission_bytes
from .quality import FilterConfig
from .routing import RoutingConfig
from .scenario import PRESET_NAMES, PlacementExhausted, generate_frames, load_scene, preset_layout, save_scene
from .wire import WireError, report_from_bytes, write_msgdump

log = logging.getLogger("instfuse")

ROW_NAMES = {"none": ("No Fusion", "\\"), "late": ("Late Fusion", "\\"), "instance": ("Instance", "Instance")}


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
    return v


def _levels(text: str) -> list[NoiseSpec]:
    try:
        levels = [NoiseSpec.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not levels:
        raise argparse.ArgumentTypeError("at least one noise level is required")
    return levels


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--seed", type=int, default=None, help="run seed (defaults to the scene seed)")
    p.add_argument("--weights", help="projection weights file (enables loaded attention mode)")
    p.add_argument("--out-dir", default=".", help="directory for report files")
    p.add_argument("--jobs", type=_pos_int, default=1, help="frame-parallel workers")
    p.add_argument("--lambda", dest="lam", type=_unit, default=0.1, help="routing IoU threshold")
    p.add_argument("--score-threshold", type=_unit, default=0.1)
    p.add_argument("--beta", type=_positive, default=1.0, help="Gaussian attention range")
    p.add_argument("--residual", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--nms-iou", type=_unit, default=0.15, help="late-fusion NMS threshold")
    p.add_argument("--dedup-iou", type=_unit, default=0.5, help="head duplicate-suppression threshold")
    p.add_argument("--trigger-dist", type=_positive, default=math.inf,
                   help="collaborate only with agents closer than this (m)")
    p.add_argument("--accounting", choices=("feature-only", "full-payload"), default="feature-only")
    p.add_argument("--cogt", action="store_true", help="enable cooperative GT sampling")
    p.add_argument("--cogt-samples", type=_nonneg_int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic scene file")
    g.add_argument("--objects", type=_nonneg_int, default=20, help="objects per frame (mean if poisson)")
    g.add_argument("--agents", type=_pos_int, default=2)
    g.add_argument("--frames", type=_nonneg_int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=PRESET_NAMES, default="default")
    g.add_argument("-o", "--output", required=True)

    r = sub.add_parser("run", help="evaluate strategies on a scene")
    _add_pipeline_args(r)
    r.add_argument("--strategy", choices=(*STRATEGIES, "all"), default="instance")
    r.add_argument("--noise", type=NoiseSpec.parse, default=NoiseSpec(), help="pose noise 'sigma_t/sigma_r'")
    r.add_argument("--dump-messages", help="write received messages to a .msgdump file")

    s = sub.add_parser("sweep-noise", help="evaluate over a grid of pose-noise levels")
    _add_pipeline_args(s)
    s.add_argument("--strategy", choices=(*STRATEGIES, "all"), default="instance")
    s.add_argument("--levels", type=_levels, default=list(DEFAULT_NOISE_GRID),
                   help="comma-separated levels, each 'v' or 'sigma_t/sigma_r'")

    b = sub.add_parser("bench-bandwidth", help="per-strategy transmitted bytes")
    _add_pipeline_args(b)
    return parser


def _config(args) -> PipelineConfig:
    attention = AttentionConfig(beta=args.beta, residual=args.residual)
    if args.weights:
        try:
            d, weights = load_weights(args.weights)
        except OSError as exc:
            raise CliError(f"cannot read weights: {exc}") from exc
        attention = AttentionConfig(d=d, beta=args.beta, mode="loaded", residual=args.residual, weights=weights)
    return PipelineConfig(
        filter=FilterConfig(score_threshold=args.score_threshold),
        routing=RoutingConfig(args.lam),
        attention=attention,
        nms_iou=args.nms_iou,
        dedup_iou=args.dedup_iou,
        collab_trigger_dist=args.trigger_dist,
        accounting=args.accounting,
        cogt=args.cogt,
        cogt_samples_per_frame=args.cogt_samples,
    )


def _load_scene(path):
    try:
        return load_scene(path)
    except OSError as exc:
        raise CliError(f"cannot read scene: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed scene JSON: {exc}") from exc
    except jsonschema.ValidationError as exc:
        raise CliError(f"scene does not match schema: {exc.message}") from exc
    except (ValueError, IndexError, TypeError) as exc:
        raise CliError(f"invalid scene: {exc}") from exc


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output dir: {exc}") from exc
    return out


def _fmt_ap(r) -> str:
    return f"{r.ap50:.4f}/{r.ap70:.4f}"


def format_table(report: EvalReport, by_noise: bool = False) -> str:
    s = report.settings
    lines = [
        "# " + ", ".join(f"{k}={s[k]}" for k in sorted(s)),
    ]
    if by_noise:
        header = f"{'Noise Level (m/deg)':<22}{'Strategy':<14}{'AP@0.5/0.7':<18}{'Comm(log2)':>10}"
        lines += [header, "-" * len(header)]
        for r in report.rows:
            lines.append(f"{r.noise.label:<22}{ROW_NAMES[r.strategy][0]:<14}{_fmt_ap(r):<18}"
                         f"{_comm(r):>10}")
    else:
        header = f"{'Model':<14}{'Fusion Type':<14}{'AP@0.5/0.7':<18}{'Comm(log2)':>10}"
        lines += [header, "-" * len(header)]
        for r in report.rows:
            name, kind = ROW_NAMES[r.strategy]
            lines.append(f"{name:<14}{kind:<14}{_fmt_ap(r):<18}{_comm(r):>10}")
    return "\n".join(lines) + "\n"


def _comm(row) -> str:
    return "0" if row.strategy == "none" else row.bandwidth.log2_text


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen_scene(args) -> int:
    try:
        scene = generate_frames(args.seed, args.objects, args.agents, args.frames, preset_layout(args.preset))
    except PlacementExhausted as exc:
        raise CliError(str(exc)) from exc
    try:
        save_scene(scene, args.output)
    except OSError as exc:
        raise CliError(f"cannot write scene: {exc}") from exc
    n = sum(len(f) for f in scene.frames)
    print(f"wrote {args.output}: {n} objects over {scene.frame_count} frames, "
          f"{len(scene.agents)} agents, seed {scene.seed}, preset {args.preset}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    scene = _load_scene(args.scene)
    out = _out_dir(args.out_dir)
    sink = [] if args.dump_messages else None
    report = run_pipeline(scene, args.strategy, cfg, args.seed, (args.noise,), args.jobs, sink)
    _dump_json(out / "report.json", report.to_dict())
    table = format_table(report)
    (out / "report.txt").write_text(table)
    if sink is not None:
        write_msgdump(args.dump_messages, sink)
    sys.stdout.write(table)
    return 0


def cmd_sweep_noise(args) -> int:
    cfg = _config(args)
    scene = _load_scene(args.scene)
    out = _out_dir(args.out_dir)
    report = run_pipeline(scene, args.strategy, cfg, args.seed, args.levels, args.jobs)
    _dump_json(out / "sweep.json", report.to_dict())
    table = format_table(report, by_noise=True)
    (out / "sweep.txt").write_text(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma_t_m", "sigma_r_deg", "strategy", "ap50", "ap70"])
    for r in report.rows:
        w.writerow([r.noise.sigma_t, r.noise.sigma_r, r.strategy, repr(r.ap50), repr(r.ap70)])
    (out / "sweep.csv").write_text(buf.getvalue())
    sys.stdout.write(table)
    return 0


def cmd_bench_bandwidth(args) -> int:
    cfg = _config(args)
    scene = _load_scene(args.scene)
    out = _out_dir(args.out_dir)
    traffic = transmission_bytes(scene, cfg, args.seed)
    doc = {}
    lines = [f"# frames={scene.frame_count}, feature_dim={cfg.d}, accounting={cfg.accounting}",
             f"{'Strategy':<12}{'log2':>8}{'mean B':>12}{'median B':>12}{'min B':>10}{'max B':>10}{'var B^2':>14}"]
    for strategy in STRATEGIES:
        rep = report_from_bytes(traffic[strategy] or [0], strategy)
        doc[strategy] = rep.to_dict()
        lines.append(f"{strategy:<12}{rep.log2_text:>8}{rep.mean:>12.1f}{rep.median:>12.1f}"
                     f"{rep.min:>10d}{rep.max:>10d}{rep.variance:>14.1f}")
    _dump_json(out / "bandwidth.json", doc)
    text = "\n".join(lines) + "\n"
    (out / "bandwidth.txt").write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "run": cmd_run,
    "sweep-noise": cmd_sweep_noise,
    "bench-bandwidth": cmd_bench_bandwidth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, WireError, FusionConfigError) as exc:
        print(f"instfuse: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
