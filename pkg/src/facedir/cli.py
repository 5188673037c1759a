"""Command-line front end.

Subcommands: simulate (render a scene to WAV + truth sidecar), infer (run
the facing pipeline on rendered observations), aoa (single-device angle),
eval / converge / p2p (CSV study runners). Every run writes a manifest next
to its outputs for reproducibility.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .aoa import estimate_aoa
from .evalkit import (
    SuiteConfig,
    converge_study,
    converge_to_csv,
    pattern_robustness_study,
    run_study,
    summarize,
    trials_to_csv,
)
from .facing import PipelineParams, decision_report, infer
from .locate import (
    LocalizationError,
    align_similarity,
    layout_from_dict,
    layout_from_scene,
    layout_to_dict,
    p2p_localize,
    synth_pairwise_aoas,
    filter_reliable,
)
from .scene import ConfigError, DevicePose, PATTERN_NAMES, builtin_pattern, dumps_canonical, load_scene, scene_to_dict
from .simulate import export_observations, export_truth, load_observations, record


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _write_manifest(out_dir: Path, subcommand: str, args: dict) -> None:
    manifest = {
        "tool": "facedir",
        "version": __version__,
        "subcommand": subcommand,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "params": args,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _pipeline_params(args) -> PipelineParams:
    return PipelineParams(
        delta=args.delta,
        max_iters=args.max_iters,
        reg=args.reg,
        peak_fraction=args.gamma,
        array_radius=args.array_radius,
    )


def _add_pipeline_flags(p):
    p.add_argument("--delta", type=float, default=1e-3,
                   help="convergence threshold on the source estimate (default 1e-3)")
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--reg", type=float, default=1e-3,
                   help="deconvolution regularization (default 1e-3)")
    p.add_argument("--gamma", type=float, default=0.3,
                   help="first-peak threshold fraction (default 0.3)")
    p.add_argument("--array-radius", type=float, default=0.046)


def cmd_simulate(args) -> int:
    scene = load_scene(args.config)
    if args.seed is not None:
        scene.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs, truth = record(scene, reflection_order=args.reflection_order,
                        target_snr_db=args.target_snr)
    export_observations(obs, out)
    export_truth(truth, out / "truth.json")
    (out / "scene.json").write_text(dumps_canonical(scene_to_dict(scene)))
    _write_manifest(out, "simulate", {
        "config": str(args.config), "out": str(out), "seed": scene.seed,
        "reflection_order": args.reflection_order, "target_snr": args.target_snr,
    })
    n = sum(len(row) for row in obs)
    print(f"wrote {n} observation files, truth.json and manifest.json to {out}")
    return 0


def _load_rendered(obs_dir: Path):
    scene = load_scene(obs_dir / "scene.json")
    observations = load_observations(obs_dir, len(scene.devices),
                                     [d.mic_count for d in scene.devices])
    return scene, observations


def cmd_infer(args) -> int:
    obs_dir = Path(args.obs)
    scene, observations = _load_rendered(obs_dir)
    if args.layout is not None:
        layout = layout_from_dict(json.loads(Path(args.layout).read_text()))
    else:
        layout = layout_from_scene(scene)
    decision = infer(observations, layout, builtin_pattern(args.pattern),
                     _pipeline_params(args))
    report = decision_report(decision)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(f"facing device: {decision.device_index}")
        print(f"user location: ({decision.user_location[0]:.3f}, {decision.user_location[1]:.3f}) m")
        print(f"iterations:    {decision.iterations_used}"
              + (" (diverged, best-so-far)" if decision.diverged else ""))
        print("equalized powers: " + " ".join(f"{p:.4g}" for p in decision.equalized_powers))
        print("correlations:     " + " ".join(f"{c:+.3f}" for c in decision.correlations))
    return 0


def cmd_aoa(args) -> int:
    obs_dir = Path(args.obs)
    scene, observations = _load_rendered(obs_dir)
    d = scene.devices[args.device]
    pose = DevicePose(d.position, d.orientation, d.mic_count, d.array_radius)
    est = estimate_aoa(observations[args.device], pose)
    print(f"device {args.device}: aoa {np.degrees(est.angle):.0f} deg "
          f"(confidence {est.confidence:.3f})")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = SuiteConfig(
        rooms=[tuple(args.room)],
        absorption=args.absorption,
        reflection_order=args.reflection_order,
        device_counts=args.devices,
        snr_grid=args.snr,
        trials=args.trials,
        seed=args.seed,
        min_separation_deg=args.min_separation,
        params=_pipeline_params(args),
    )
    rows, pattern_fdes = run_study(suite, jobs=args.jobs)
    (out / "trials.csv").write_text(trials_to_csv(rows, include_runtime=args.timings))
    summary = summarize(rows)
    if pattern_fdes:
        summary["pattern_median_fde_deg"] = {
            name: float(np.median([p[name] for p in pattern_fdes]))
            for name in PATTERN_NAMES
        }
    (out / "summary.json").write_text(dumps_canonical(summary))
    _write_manifest(out, "eval", {
        "room": list(args.room), "absorption": args.absorption,
        "reflection_order": args.reflection_order, "devices": args.devices,
        "snr": args.snr, "trials": args.trials, "seed": args.seed, "jobs": args.jobs,
    })
    print(f"{summary['n_ok']}/{summary['n_trials']} trials ok, "
          f"accuracy {summary['accuracy']:.3f}, median FDE {summary['median_fde_deg']:.1f} deg, "
          f"median loc err {summary['median_loc_err_m']:.3f} m")
    print(f"wrote trials.csv, summary.json, manifest.json to {out}")
    return 0


def cmd_converge(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = converge_study(snr_grid=args.snr, sources=args.sources,
                          n_scenes=args.scenes, n_devices=args.devices,
                          max_iters=args.max_iters, seed=args.seed)
    (out / "converge.csv").write_text(converge_to_csv(rows))
    _write_manifest(out, "converge", {
        "snr": args.snr, "sources": args.sources, "scenes": args.scenes,
        "devices": args.devices, "max_iters": args.max_iters, "seed": args.seed,
    })
    final = {(r["snr_db"], r["source"]): r["correlation"] for r in rows}
    for (snr, src), corr in sorted(final.items()):
        print(f"snr {snr:5.1f} dB  {src:12s} final correlation {corr:.3f}")
    print(f"wrote converge.csv and manifest.json to {out}")
    return 0


def cmd_p2p(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.config is not None:
        scene = load_scene(args.config)
        base_layout = layout_from_scene(scene)
    else:
        base_layout = None
    lines = ["trial,n_devices,noise_deg,residual_rms,rms_err_m"]
    errs = []
    for t in range(args.trials):
        if base_layout is not None:
            layout = base_layout
        else:
            from facedir.evalkit import random_scene

            scene, _ = random_scene(args.seed * 131 + t, n_devices=args.devices)
            layout = layout_from_scene(scene)
        p = synth_pairwise_aoas(layout, noise_deg=args.noise_deg, seed=args.seed * 977 + t)
        p = filter_reliable(p, np.radians(args.reciprocity_tol), layout.orientations)
        est = p2p_localize(
            p,
            anchors={0: (tuple(layout.positions[0]), float(layout.orientations[0]))},
            scale=((0, 1), float(np.linalg.norm(layout.positions[1] - layout.positions[0]))),
            seed=args.seed + t,
        )
        aligned = align_similarity(est.positions, layout.positions)
        rms = float(np.sqrt(np.mean(np.sum((aligned - layout.positions) ** 2, axis=1))))
        errs.append(rms)
        lines.append(f"{t},{layout.n_devices},{args.noise_deg!r},{est.residual_rms!r},{rms!r}")
    (out / "p2p.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "p2p", {
        "config": None if args.config is None else str(args.config),
        "devices": args.devices, "noise_deg": args.noise_deg,
        "trials": args.trials, "seed": args.seed,
    })
    print(f"median residual {np.median([float(l.split(',')[3]) for l in lines[1:]]):.2e}, "
          f"median post-alignment rms error {np.median(errs):.4f} m")
    print(f"wrote p2p.csv and manifest.json to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="facedir",
                     description="Facing-direction inference on multi-device mic recordings")
    parser.add_argument("--version", action="version", version=f"facedir {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a scene config to WAV files + truth")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--reflection-order", type=int, default=2, choices=range(4))
    p.add_argument("--target-snr", type=float, default=None,
                   help="calibrate noise to this SNR~ in dB (overrides noise_floor)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="run the facing pipeline on rendered observations")
    p.add_argument("--obs", required=True, help="directory written by `facedir simulate`")
    p.add_argument("--layout", default=None, help="layout JSON (default: scene ground truth)")
    p.add_argument("--pattern", default="cardioid", choices=PATTERN_NAMES)
    p.add_argument("--json", action="store_true", help="machine-readable report")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("aoa", help="blind AoA of one device from rendered observations")
    p.add_argument("--obs", required=True)
    p.add_argument("--device", type=int, default=0)
    p.set_defaults(func=cmd_aoa)

    p = sub.add_parser("eval", help="Monte-Carlo facing benchmark -> trials.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--room", type=float, nargs=2, default=[5.0, 5.0])
    p.add_argument("--absorption", type=float, default=0.5)
    p.add_argument("--reflection-order", type=int, default=2, choices=range(4))
    p.add_argument("--devices", type=int, nargs="+", default=[4])
    p.add_argument("--snr", type=float, nargs="+", default=[30.0])
    p.add_argument("--trials", type=int, default=50, help="trials per combination")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--min-separation", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=None, help="workers (default: all cores)")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock runtime_ms in trials.csv")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("converge", help="first-tap correlation vs iteration -> converge.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--snr", type=float, nargs="+", default=[30.0, 20.0, 10.0])
    p.add_argument("--sources", nargs="+", default=["gaussian", "speech_like"])
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--devices", type=int, default=4)
    p.add_argument("--max-iters", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("p2p", help="pairwise-AoA device localization study -> p2p.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="scene config for a fixed layout")
    p.add_argument("--devices", type=int, default=6)
    p.add_argument("--noise-deg", type=float, default=0.0)
    p.add_argument("--reciprocity-tol", type=float, default=10.0,
                   help="reciprocity filter tolerance in degrees")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_p2p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (LocalizationError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
