"""Command-line front end.

Commands mirror the pipeline stages with file handoffs between them:

    synth    generate a synthetic dataset (JSONL) from a config
    pose     augment a dataset with head poses + normalized angles
    train    unsupervised (or ground-truth ablation) classifier training
    predict  per-frame eye-contact predictions from a trained model
    eval     holdout / loocv / cross-dataset evaluation reports
    metrics  attention timelines and attention metrics from predictions

Exit codes: 0 success, 2 input/usage error, 3 completed with per-frame
failures (pose) or skipped malformed lines.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import metrics as metrics_mod
from . import pipeline
from .config import PipelineConfig
from .errors import DatasetError, PipelineError
from .records import (
    FrameRecord,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)
from .synth import SynthConfig, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PARTIAL = 3


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise PipelineError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if getattr(args, "tau", None) is not None:
        overrides["confidence_tau"] = args.tau
    if getattr(args, "min_pts", None) is not None:
        overrides["optics_min_pts"] = args.min_pts
    if getattr(args, "xi", None) is not None:
        overrides["optics_xi"] = args.xi
    if overrides:
        config = PipelineConfig.from_dict(dict(config.to_dict(), **overrides))
    return config.validate()


def _write_meta(out_path, command, config_dict):
    with open(str(out_path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({"command": command, "config": config_dict}, fh, indent=1)
        fh.write("\n")


def _write_report(out_path, obj):
    text = json.dumps(obj, indent=1) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    if args.synth_config:
        with open(args.synth_config, "r", encoding="utf-8") as fh:
            cfg = SynthConfig.from_dict(json.load(fh))
    else:
        cfg = SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    result = generate(cfg)
    write_dataset(result.records, args.out)
    _write_meta(args.out, "synth", cfg.to_dict())
    print(f"wrote {len(result.records)} records to {args.out}")
    return EXIT_OK


def cmd_pose(args) -> int:
    config = _load_config(args)
    bad_lines: list = []
    records = read_dataset(args.input, on_bad_line="skip", bad_lines=bad_lines)
    for lineno, msg in bad_lines:
        print(f"skipped line {lineno}: {msg}", file=sys.stderr)
    augmented, failures = pipeline.augment_poses(records, config, workers=args.workers)
    for rec, msg in failures:
        print(f"pose failed (session={rec.session_id}, t={rec.t}): {msg}", file=sys.stderr)
    write_dataset(augmented, args.out)
    _write_meta(args.out, "pose", config.to_dict())
    n_pose = sum(1 for r in augmented if r.pose is not None)
    print(f"wrote {len(augmented)} records ({n_pose} with pose) to {args.out}")
    return EXIT_PARTIAL if (failures or bad_lines) else EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    records = read_dataset(args.input)
    label_source = "ground_truth" if args.labels == "ground-truth" else "cluster"
    artifact = pipeline.train(records, config, label_source=label_source)
    save_model(artifact, args.out)
    print(
        f"trained on {len(records)} records "
        f"(PCA {artifact.pca.input_dim} -> {artifact.pca.n_components}); wrote {args.out}"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    records = read_dataset(args.input)
    artifact = load_model(args.model)
    preds = pipeline.predict(records, artifact)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec, (label, score) in zip(records, preds):
            obj = {
                "session_id": rec.session_id,
                "participant_id": rec.participant_id,
                "t": float(rec.t),
                "label": label,
            }
            if score is not None:
                obj["score"] = float(score)
            fh.write(json.dumps(obj) + "\n")
    _write_meta(args.out, "predict", artifact.config_snapshot)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    records = read_dataset(args.input)
    label_source = "ground_truth" if args.labels == "ground-truth" else "cluster"

    report: dict = {"protocol": args.protocol}
    if args.protocol == "holdout":
        if not args.model:
            raise PipelineError("--model is required for the holdout protocol")
        artifact = load_model(args.model)
        result = metrics_mod.evaluate_predictions(
            records, pipeline.predict_labels(records, artifact)
        )
        report.update(result.to_dict())
    elif args.protocol == "loocv":
        result = metrics_mod.loocv_by_participant(
            records,
            pipeline.make_train_fn(config, label_source),
            pipeline.make_predict_fn(),
        )
        report.update(result.to_dict())
        ok = [f for f in result.folds if not f.failed]
        print(
            f"loocv: {len(ok)}/{len(result.folds)} folds, "
            f"mean MCC {result.mean_mcc:.4f} (std {result.std_mcc:.4f})"
        )
    elif args.protocol == "cross-dataset":
        if not args.train_input:
            raise PipelineError("--train-in is required for the cross-dataset protocol")
        train_records = read_dataset(args.train_input)
        result = metrics_mod.cross_dataset_eval(
            train_records,
            records,
            pipeline.make_train_fn(config, label_source),
            pipeline.make_predict_fn(),
        )
        report.update(result.to_dict())
        print(f"cross-dataset: MCC {result.mcc:.4f}, TNR {result.tnr}")
    else:
        raise PipelineError(f"unknown protocol {args.protocol!r}")

    report["config"] = config.to_dict()
    _write_report(args.out, report)
    return EXIT_OK


def _read_predictions(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append(obj)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
    return rows


def cmd_metrics(args) -> int:
    config = _load_config(args)
    rows = _read_predictions(args.pred)
    # dummy frame records carry session/timestamp structure for the timeline
    records = [
        FrameRecord(
            session_id=row["session_id"],
            participant_id=row.get("participant_id", ""),
            t=float(row["t"]),
            image_size=(1, 1),
            face_detected=False,
        )
        for row in rows
    ]
    labels = [row["label"] for row in rows]
    timelines = metrics_mod.build_timeline(
        records, labels, max_frame_span=config.max_frame_span, max_gap=config.max_gap
    )
    reports = [metrics_mod.attention_report(tl, config.glance_max) for tl in timelines]

    agg_device = sum(r.device_spans.total for r in reports)
    agg_env = sum(r.environment_spans.total for r in reports)
    if agg_device > agg_env:
        primary = "device"
    elif agg_env > agg_device:
        primary = "environment"
    else:
        primary = "tie"
    out = {
        "attention_reports": [r.to_dict() for r in reports],
        "aggregate": {
            "timelines": len(reports),
            "glances": sum(r.glances for r in reports),
            "shifts_env_to_dev": sum(r.shifts_env_to_dev for r in reports),
            "shifts_dev_to_env": sum(r.shifts_dev_to_env for r in reports),
            "device_total": agg_device,
            "environment_total": agg_env,
            "primary_focus": primary,
        },
        "config": config.to_dict(),
    }
    _write_report(args.out, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eyecontact",
        description="Unsupervised eye-contact detection pipeline and attention analytics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, workers=False):
        p.add_argument("--config", help="pipeline config JSON file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key (repeatable)")
        if seed:
            p.add_argument("--seed", type=int,
                           help="seed override (synth data; training itself "
                                "is deterministic)")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="parallel sessions for pure stages")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--synth-config", help="generator config JSON file")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--out", required=True, help="output dataset JSONL")
    p.set_defaults(func=cmd_synth, config=None, set=None)

    p = sub.add_parser("pose", help="estimate head poses + normalized angles")
    p.add_argument("--in", dest="input", required=True, help="input dataset JSONL")
    p.add_argument("--out", required=True, help="output augmented JSONL")
    common(p, workers=True)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("train", help="train the eye-contact classifier")
    p.add_argument("--in", dest="input", required=True, help="pose-augmented dataset JSONL")
    p.add_argument("--out", required=True, help="output model artifact JSON")
    p.add_argument("--labels", choices=["cluster", "ground-truth"], default="cluster",
                   help="label source: unsupervised clustering or annotation ablation")
    p.add_argument("--tau", type=float, help="face-confidence threshold")
    p.add_argument("--min-pts", dest="min_pts", type=int, help="OPTICS min_pts")
    p.add_argument("--xi", type=float, help="OPTICS xi")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict eye contact per frame")
    p.add_argument("--in", dest="input", required=True, help="dataset JSONL")
    p.add_argument("--model", required=True, help="model artifact JSON")
    p.add_argument("--out", required=True, help="output predictions JSONL")
    p.set_defaults(func=cmd_predict, config=None, set=None, seed=None)

    p = sub.add_parser("eval", help="evaluate predictions or protocols")
    p.add_argument("--in", dest="input", required=True, help="evaluation dataset JSONL")
    p.add_argument("--protocol", choices=["holdout", "loocv", "cross-dataset"],
                   default="holdout")
    p.add_argument("--model", help="model artifact (holdout protocol)")
    p.add_argument("--train-in", dest="train_input",
                   help="training dataset (cross-dataset protocol)")
    p.add_argument("--labels", choices=["cluster", "ground-truth"], default="cluster")
    p.add_argument("--tau", type=float, help="face-confidence threshold")
    p.add_argument("--min-pts", dest="min_pts", type=int, help="OPTICS min_pts")
    p.add_argument("--xi", type=float, help="OPTICS xi")
    p.add_argument("--out", help="report JSON (stdout when omitted)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="attention metrics from predictions")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--out", help="report JSON (stdout when omitted)")
    common(p, seed=False)
    p.set_defaults(func=cmd_metrics, seed=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, PipelineError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
