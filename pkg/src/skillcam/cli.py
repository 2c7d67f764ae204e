"""Command-line entry point.

Subcommands: ``synth`` (generate a dataset), ``train`` (one model +
checkpoint), ``loso`` (cross-validated evaluation + metrics), ``cam``
(per-frame feedback exports), ``gradcheck`` (finite-difference self-test).

Outputs are deterministic given identical flags and seeds; wall-clock
metadata goes to a separate ``meta.json`` sidecar so the data files stay
byte-reproducible. Every failure exits non-zero with a single
``skillcam: error[<code>]: ...`` line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import cam as cam_mod
from . import data, gradcheck, metrics, model, training
from .errors import ConfigError, DomainError, SkillcamError

log = logging.getLogger(__name__)


def _write_meta(outdir: Path, args: argparse.Namespace) -> None:
    meta = {
        "argv": sys.argv[1:],
        "flags": {k: str(v) for k, v in vars(args).items() if k != "func"},
        "timestamp_unix": time.time(),
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def _outdir(path_str: str) -> Path:
    outdir = Path(path_str)
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _load_grouping(columns_path: str | None) -> "model.ChannelGrouping":
    if columns_path is None:
        return data.canonical_grouping()
    return data.canonical_grouping(data.load_column_map(columns_path))


def _load_dataset(args) -> tuple[data.Manifest, list[data.Trial]]:
    manifest = data.load_manifest(args.manifest)
    if args.task is not None:
        manifest = manifest.filter_task(data.Task.from_name(args.task))
        if not manifest.entries:
            raise ConfigError(f"no manifest entries for task {args.task!r}")
    return manifest, data.load_trials(manifest)


def _train_config(args, seed: int | None = None) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=args.epochs,
        val_fraction=args.val_fraction,
        seed=args.seed if seed is None else seed,
        normalize=not args.no_normalize,
    )


def cmd_synth(args) -> int:
    outdir = _outdir(args.out)
    manifest, trials = data.synth_generate(
        seed=args.seed,
        n_subjects=args.subjects,
        trials_per_subject=args.trials_per_subject,
        length_range=(args.min_length, args.max_length),
    )
    trial_dir = outdir / "trials"
    trial_dir.mkdir(exist_ok=True)
    entries = []
    windows = {}
    for entry, trial in zip(manifest.entries, trials):
        rel = Path("trials") / entry.path.name
        data.write_kinematics(trial.series, outdir / rel)
        entries.append(
            data.ManifestEntry(
                path=rel,
                subject_id=entry.subject_id,
                task=entry.task,
                trial_index=entry.trial_index,
                skill=entry.skill,
            )
        )
        windows["/".join(map(str, trial.key))] = list(trial.inject_window)
    data.write_manifest(data.Manifest(entries), outdir / "manifest.tsv")
    (outdir / "columns.json").write_text(
        json.dumps(data.default_column_map(), indent=2), encoding="utf-8"
    )
    (outdir / "windows.json").write_text(json.dumps(windows), encoding="utf-8")
    _write_meta(outdir, args)
    print(f"wrote {len(trials)} trials to {outdir}")
    return 0


def cmd_train(args) -> int:
    outdir = _outdir(args.out)
    grouping = _load_grouping(args.columns)
    manifest, trials = _load_dataset(args)
    config = _train_config(args)
    net, report = training.train(grouping, trials, config)
    checkpoint_path = outdir / "checkpoint.json"
    model.save_checkpoint(net, checkpoint_path)
    report.checkpoint_path = str(checkpoint_path)
    report.save(outdir / "train_report.json")
    _write_meta(outdir, args)
    print(
        f"trained on {len(trials)} trials; best epoch {report.best_epoch} "
        f"(val loss {report.val_losses[report.best_epoch - 1]:.4f}); "
        f"checkpoint at {checkpoint_path}"
    )
    return 0


def cmd_loso(args) -> int:
    outdir = _outdir(args.out)
    grouping = _load_grouping(args.columns)
    manifest, trials = _load_dataset(args)
    config = _train_config(args)
    result = training.run_loso(manifest, trials, grouping, config, n_runs=args.runs)
    (outdir / "predictions.tsv").write_text(
        training.prediction_table_tsv(result.predictions), encoding="utf-8"
    )
    summaries = metrics.aggregate_runs(result.predictions)
    (outdir / "metrics.tsv").write_text(
        metrics.summary_tsv(summaries), encoding="utf-8"
    )
    (outdir / "metrics.json").write_text(
        metrics.summary_json(summaries), encoding="utf-8"
    )
    _write_meta(outdir, args)
    for task, s in summaries.items():
        print(
            f"{task}: micro {s.micro_mean:.4f} +/- {s.micro_std:.4f}, "
            f"macro {s.macro_mean:.4f} +/- {s.macro_std:.4f} "
            f"({s.n_runs} runs)"
        )
    return 0


def cmd_cam(args) -> int:
    outdir = _outdir(args.out)
    net = model.load_checkpoint(args.checkpoint)
    series = data.parse_kinematics(args.trial)
    trial = data.Trial(
        subject_id="unknown",
        task=data.Task.SUTURING,
        trial_index=1,
        skill=data.Skill.NOVICE,  # placeholder; exports use predictions only
        series=series,
    )
    cam_map = cam_mod.compute_cam(net, trial)
    if args.cam_class == "pred":
        skill = cam_map.predicted
    else:
        skill = data.Skill.from_letter(args.cam_class)
    if args.channels is not None:
        try:
            c0, c1 = (int(v) for v in args.channels.split(","))
        except ValueError:
            raise ConfigError(
                f"--channels must be two comma-separated indices, got "
                f"{args.channels!r}"
            )
        channels = (c0, c1)
    else:
        ml_cart = net.grouping.clusters[0].subclusters[0].channels
        channels = (ml_cart[0], ml_cart[1])
    stem = Path(args.trial).stem
    cam_mod.export_cam_csv(cam_map, outdir / f"{stem}_cam.csv")
    cam_mod.export_trajectory_svg(
        trial, cam_map, skill, channels=channels, path=outdir / f"{stem}_cam.svg"
    )
    _write_meta(outdir, args)
    print(
        f"predicted {cam_map.predicted.letter}; wrote {stem}_cam.csv and "
        f"{stem}_cam.svg (class {skill.letter}) to {outdir}"
    )
    return 0


def cmd_gradcheck(args) -> int:
    ok, lines = gradcheck.run_suite(
        seed=args.seed,
        n_instances=args.instances,
        samples_per_tensor=args.samples_per_tensor,
    )
    print("\n".join(lines))
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillcam",
        description=(
            "Surgical skill classification from kinematic recordings, with "
            "per-frame activation-map feedback."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_train_flags(p):
        p.add_argument("--manifest", required=True, help="dataset manifest TSV")
        p.add_argument("--columns", default=None, help="column map JSON")
        p.add_argument("--task", default=None, help="restrict to one task")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--epochs",
            type=int,
            default=100,
            help="training epochs (100 suits desk-scale data; the full "
            "protocol uses 1000)",
        )
        p.add_argument("--val-fraction", type=float, default=0.2)
        p.add_argument(
            "--no-normalize",
            action="store_true",
            help="feed raw channels instead of train-fold z-scores",
        )

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--subjects", type=int, default=6)
    p_synth.add_argument("--trials-per-subject", type=int, default=5)
    p_synth.add_argument("--min-length", type=int, default=300)
    p_synth.add_argument("--max-length", type=int, default=600)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one model, write a checkpoint")
    add_common_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_loso = sub.add_parser(
        "loso", help="leave-one-super-trial-out evaluation over N runs"
    )
    add_common_train_flags(p_loso)
    p_loso.add_argument(
        "--runs",
        type=int,
        default=1,
        help="independent runs; run r uses seed SEED+r",
    )
    p_loso.set_defaults(func=cmd_loso)

    p_cam = sub.add_parser("cam", help="export activation-map feedback files")
    p_cam.add_argument("--checkpoint", required=True)
    p_cam.add_argument("--trial", required=True, help="kinematics file")
    p_cam.add_argument("--out", required=True)
    p_cam.add_argument(
        "--class",
        dest="cam_class",
        default="pred",
        choices=["pred", "N", "I", "E"],
        help="which class's map colours the trajectory",
    )
    p_cam.add_argument(
        "--channels", default=None, help="two channel indices for the 2-D trajectory"
    )
    p_cam.set_defaults(func=cmd_cam)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient self-test")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--instances", type=int, default=20)
    p_grad.add_argument("--samples-per-tensor", type=int, default=6)
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SkillcamError as exc:
        print(f"skillcam: error[{exc.code}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
