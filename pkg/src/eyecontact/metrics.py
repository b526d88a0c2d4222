"""Attention timelines, attention metrics, and classifier evaluation.

Timelines are ordered, non-overlapping blocks of device/environment focus
built from sampled frame predictions; the attention metrics (glances,
shifts, spans, primary focus) all derive from the block structure.  The
evaluation side covers confusion counts, MCC, TNR, leave-one-participant-
out cross-validation, and cross-dataset transfer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import PipelineError
from .records import CONTACT


class Focus(Enum):
    DEVICE = "device"
    ENVIRONMENT = "environment"
    TIE = "tie"


@dataclass(frozen=True)
class Block:
    focus: Focus
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Timeline:
    """Maximal alternating attention blocks of one contiguous recording."""

    session_id: str
    blocks: list = field(default_factory=list)

    def validate(self):
        prev = None
        for b in self.blocks:
            if b.start >= b.end:
                raise PipelineError("block must have start < end")
            if prev is not None:
                if b.start < prev.end:
                    raise PipelineError("blocks overlap or are unsorted")
                if b.focus == prev.focus:
                    raise PipelineError("adjacent blocks share the same focus")
            prev = b
        return self


@dataclass
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass
class SpanStats:
    """Attention-span statistics over the blocks of one focus."""

    count: int = 0
    total: float = 0.0
    mean: float = 0.0
    min: float = 0.0
    max: float = 0.0

    @classmethod
    def from_durations(cls, durations):
        durations = list(durations)
        if not durations:
            return cls()
        return cls(
            count=len(durations),
            total=float(sum(durations)),
            mean=float(sum(durations) / len(durations)),
            min=float(min(durations)),
            max=float(max(durations)),
        )

    def to_dict(self):
        return {
            "count": self.count, "total": self.total, "mean": self.mean,
            "min": self.min, "max": self.max,
        }


@dataclass
class AttentionReport:
    session_id: str
    glances: int
    glance_max: float
    shifts_env_to_dev: int
    shifts_dev_to_env: int
    device_spans: SpanStats
    environment_spans: SpanStats
    primary_focus: Focus

    def to_dict(self):
        return {
            "session_id": self.session_id,
            "glances": self.glances,
            "glance_max": self.glance_max,
            "shifts_env_to_dev": self.shifts_env_to_dev,
            "shifts_dev_to_env": self.shifts_dev_to_env,
            "device_spans": self.device_spans.to_dict(),
            "environment_spans": self.environment_spans.to_dict(),
            "primary_focus": self.primary_focus.value,
        }


def build_timeline(records, predictions, max_frame_span: float = 1.0, max_gap: float = 30.0):
    """Attention timelines from per-frame predictions.

    Each frame covers [t, t + min(gap to the next frame, max_frame_span));
    a gap larger than max_gap starts a new timeline; consecutive frames
    with the same focus merge into one block (small sampling holes inside
    a run are absorbed).

    Args:
        records: frame records, grouped by session and sorted by timestamp.
        predictions: "contact"/"no_contact" labels aligned with records.

    Returns:
        list of Timeline, one per contiguous segment.
    """
    records = list(records)
    predictions = list(predictions)
    if len(records) != len(predictions):
        raise PipelineError("records/predictions length mismatch")

    by_session: dict[str, list[tuple]] = {}
    for rec, pred in zip(records, predictions):
        by_session.setdefault(rec.session_id, []).append((rec.t, pred))

    timelines = []
    for session_id, frames in by_session.items():
        ts = [t for t, _ in frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise PipelineError(f"session {session_id!r} is not sorted by timestamp")

        segments = [[frames[0]]]
        for prev, cur in zip(frames, frames[1:]):
            if cur[0] - prev[0] > max_gap:
                segments.append([])
            segments[-1].append(cur)

        for seg in segments:
            blocks = []
            for i, (t, pred) in enumerate(seg):
                gap = seg[i + 1][0] - t if i + 1 < len(seg) else math.inf
                cover_end = t + min(gap, max_frame_span)
                focus = Focus.DEVICE if pred == CONTACT else Focus.ENVIRONMENT
                if blocks and blocks[-1].focus == focus:
                    blocks[-1] = Block(focus, blocks[-1].start, cover_end)
                else:
                    blocks.append(Block(focus, t, cover_end))
            timelines.append(Timeline(session_id=session_id, blocks=blocks).validate())
    return timelines


def attention_report(tl: Timeline, glance_max: float = 1.5) -> AttentionReport:
    """Attention metrics of one timeline.

    Glances are device blocks no longer than glance_max seconds; shifts
    count transitions per direction; span statistics cover block durations
    per focus; the primary focus is the one with the larger total time
    (Tie on exact equality).  An empty timeline gives the all-zero report.
    """
    dev = [b.duration for b in tl.blocks if b.focus == Focus.DEVICE]
    env = [b.duration for b in tl.blocks if b.focus == Focus.ENVIRONMENT]

    e2d = d2e = 0
    for a, b in zip(tl.blocks, tl.blocks[1:]):
        if a.focus == Focus.DEVICE and b.focus == Focus.ENVIRONMENT:
            d2e += 1
        elif a.focus == Focus.ENVIRONMENT and b.focus == Focus.DEVICE:
            e2d += 1

    dev_stats = SpanStats.from_durations(dev)
    env_stats = SpanStats.from_durations(env)
    if dev_stats.total > env_stats.total:
        primary = Focus.DEVICE
    elif env_stats.total > dev_stats.total:
        primary = Focus.ENVIRONMENT
    else:
        primary = Focus.TIE

    return AttentionReport(
        session_id=tl.session_id,
        glances=sum(1 for d in dev if d <= glance_max),
        glance_max=glance_max,
        shifts_env_to_dev=e2d,
        shifts_dev_to_env=d2e,
        device_spans=dev_stats,
        environment_spans=env_stats,
        primary_focus=primary,
    )


def confusion(pred, truth) -> ConfusionMatrix:
    """Confusion counts with eye contact ("contact") as the positive class."""
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise PipelineError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
    cm = ConfusionMatrix()
    for p, t in zip(pred, truth):
        if t == CONTACT:
            if p == CONTACT:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if p == CONTACT:
                cm.fp += 1
            else:
                cm.tn += 1
    return cm


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews Correlation Coefficient; 0 when any denominator factor is
    zero (the uninformative-predictor convention)."""
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def tnr(cm: ConfusionMatrix):
    """True negative rate, or None when the data holds no negatives."""
    if cm.tn + cm.fp == 0:
        return None
    return cm.tn / (cm.tn + cm.fp)


@dataclass
class FoldResult:
    participant: str
    confusion: ConfusionMatrix | None
    mcc: float | None
    failed: bool = False
    error: str | None = None

    def to_dict(self):
        return {
            "participant": self.participant,
            "confusion": self.confusion.to_dict() if self.confusion else None,
            "mcc": self.mcc,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class LoocvResult:
    folds: list
    mean_mcc: float
    std_mcc: float

    def to_dict(self):
        return {
            "folds": [f.to_dict() for f in self.folds],
            "mean_mcc": self.mean_mcc,
            "std_mcc": self.std_mcc,
        }


def _scoreable(records, predictions):
    """Keep (prediction, truth) pairs where ground truth exists."""
    pairs = [(p, r.ground_truth) for r, p in zip(records, predictions) if r.ground_truth]
    return [p for p, _ in pairs], [t for _, t in pairs]


def loocv_by_participant(records, train_fn, predict_fn) -> LoocvResult:
    """Leave-one-participant-out cross-validation.

    One fold per participant: train_fn sees every other participant's
    records (the full unsupervised pipeline, clustering included, runs on
    that split only) and predict_fn scores the held-out participant
    against their ground truth.  A fold whose training fails (e.g. single
    class after labeling) is marked failed and excluded from the mean,
    with a warning.

    Args:
        records: full dataset.
        train_fn: records -> model.
        predict_fn: (model, records) -> list of "contact"/"no_contact".
    """
    records = list(records)
    participants = sorted({r.participant_id for r in records})
    if len(participants) < 2:
        raise PipelineError("leave-one-participant-out needs at least 2 participants")

    folds = []
    for participant in participants:
        train_split = [r for r in records if r.participant_id != participant]
        test_split = [r for r in records if r.participant_id == participant]
        try:
            model = train_fn(train_split)
            preds = predict_fn(model, test_split)
            pred, truth = _scoreable(test_split, preds)
            if not truth:
                raise PipelineError("held-out participant has no ground truth")
            cm = confusion(pred, truth)
            folds.append(FoldResult(participant, cm, mcc(cm)))
        except PipelineError as exc:
            warnings.warn(f"fold {participant!r} failed: {exc}")
            folds.append(FoldResult(participant, None, None, failed=True, error=str(exc)))

    scores = [f.mcc for f in folds if not f.failed]
    if scores:
        mean = float(np.mean(scores))
        std = float(np.std(scores))
    else:
        mean = std = float("nan")
    return LoocvResult(folds=folds, mean_mcc=mean, std_mcc=std)


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    mcc: float
    tnr: float | None
    per_illumination: dict | None = None

    def to_dict(self):
        out = {
            "confusion": self.confusion.to_dict(),
            "mcc": self.mcc,
            "tnr": self.tnr,
        }
        if self.per_illumination is not None:
            out["per_illumination"] = {
                tag: {"confusion": cm.to_dict(), "mcc": m}
                for tag, (cm, m) in self.per_illumination.items()
            }
        return out


def evaluate_predictions(records, predictions) -> EvalResult:
    """Score predictions against record ground truth, with a per-illumination
    breakdown when any record carries a tag."""
    records = list(records)
    pred, truth = _scoreable(records, predictions)
    if not truth:
        raise PipelineError("no ground truth to evaluate against")
    cm = confusion(pred, truth)

    per_illum = None
    tagged = [r for r in records if r.illumination and r.ground_truth]
    if tagged:
        per_illum = {}
        for tag in sorted({r.illumination for r in tagged}):
            sub = [
                (p, r.ground_truth)
                for r, p in zip(records, predictions)
                if r.ground_truth and r.illumination == tag
            ]
            sub_cm = confusion([p for p, _ in sub], [t for _, t in sub])
            per_illum[tag] = (sub_cm, mcc(sub_cm))
    return EvalResult(confusion=cm, mcc=mcc(cm), tnr=tnr(cm), per_illumination=per_illum)


def cross_dataset_eval(train_records, test_records, train_fn, predict_fn) -> EvalResult:
    """Train on one full dataset, evaluate on another.

    Raises PipelineError when the test set has no ground truth at all.
    """
    test_records = list(test_records)
    if not any(r.ground_truth for r in test_records):
        raise PipelineError("test dataset has no ground truth")
    model = train_fn(list(train_records))
    preds = predict_fn(model, test_records)
    return evaluate_predictions(test_records, preds)
