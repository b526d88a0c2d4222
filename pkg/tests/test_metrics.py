import math
import warnings

import numpy as np
import pytest

from eyecontact.errors import PipelineError
from eyecontact.metrics import (
    AttentionReport,
    Block,
    ConfusionMatrix,
    Focus,
    Timeline,
    attention_report,
    build_timeline,
    confusion,
    cross_dataset_eval,
    evaluate_predictions,
    loocv_by_participant,
    mcc,
    tnr,
)
from eyecontact.records import CONTACT, NO_CONTACT, FrameRecord


def frame(session="s0", participant="p0", t=0.0, truth=None, illum=None):
    return FrameRecord(
        session_id=session, participant_id=participant, t=t,
        image_size=(10, 10), face_detected=False,
        ground_truth=truth, illumination=illum,
    )


class TestBuildTimeline:
    def test_merge_by_hand(self):
        records = [frame(t=0.0), frame(t=1.0), frame(t=2.0)]
        tls = build_timeline(records, [CONTACT, CONTACT, NO_CONTACT], max_frame_span=1.0)
        assert len(tls) == 1
        blocks = tls[0].blocks
        assert len(blocks) == 2
        assert blocks[0].focus is Focus.DEVICE and (blocks[0].start, blocks[0].end) == (0.0, 2.0)
        assert blocks[1].focus is Focus.ENVIRONMENT and (blocks[1].start, blocks[1].end) == (2.0, 3.0)

    def test_single_frame(self):
        tls = build_timeline([frame(t=5.0)], [CONTACT], max_frame_span=1.0)
        assert len(tls) == 1
        assert tls[0].blocks == [Block(Focus.DEVICE, 5.0, 6.0)]

    def test_gap_splits_timeline(self):
        records = [frame(t=0.0), frame(t=100.0)]
        tls = build_timeline(records, [CONTACT, CONTACT], max_gap=10.0)
        assert len(tls) == 2

    def test_hole_absorbed_within_run(self):
        # 5 s between same-focus frames, under max_gap: one block bridging
        records = [frame(t=0.0), frame(t=5.0)]
        tls = build_timeline(records, [CONTACT, CONTACT], max_frame_span=1.0, max_gap=30.0)
        assert tls[0].blocks == [Block(Focus.DEVICE, 0.0, 6.0)]

    def test_unsorted_rejected(self):
        records = [frame(t=1.0), frame(t=0.5)]
        with pytest.raises(PipelineError):
            build_timeline(records, [CONTACT, CONTACT])

    def test_sessions_separate(self):
        records = [frame("a", t=0.0), frame("b", t=0.0)]
        tls = build_timeline(records, [CONTACT, NO_CONTACT])
        assert {tl.session_id for tl in tls} == {"a", "b"}

    def test_length_mismatch(self):
        with pytest.raises(PipelineError):
            build_timeline([frame()], [])


def hand_timeline():
    return Timeline(
        session_id="s",
        blocks=[
            Block(Focus.DEVICE, 0.0, 1.0),
            Block(Focus.ENVIRONMENT, 1.0, 5.0),
            Block(Focus.DEVICE, 5.0, 5.5),
            Block(Focus.ENVIRONMENT, 5.5, 8.0),
            Block(Focus.DEVICE, 8.0, 15.0),
        ],
    ).validate()


class TestAttentionReport:
    def test_hand_computed(self):
        rep = attention_report(hand_timeline(), glance_max=2.0)
        assert rep.glances == 2
        assert rep.shifts_dev_to_env == 2
        assert rep.shifts_env_to_dev == 2
        assert rep.device_spans.total == pytest.approx(8.5)
        assert rep.environment_spans.total == pytest.approx(6.5)
        assert rep.primary_focus is Focus.DEVICE
        assert rep.device_spans.mean == pytest.approx(8.5 / 3)
        assert rep.device_spans.min == pytest.approx(0.5)
        assert rep.device_spans.max == pytest.approx(7.0)

    def test_single_long_block(self):
        tl = Timeline("s", [Block(Focus.DEVICE, 0.0, 10.0)])
        rep = attention_report(tl, glance_max=1.5)
        assert rep.glances == 0
        assert rep.shifts_dev_to_env == rep.shifts_env_to_dev == 0
        assert rep.primary_focus is Focus.DEVICE

    def test_exact_tie(self):
        tl = Timeline("s", [Block(Focus.DEVICE, 0.0, 2.0), Block(Focus.ENVIRONMENT, 2.0, 4.0)])
        assert attention_report(tl).primary_focus is Focus.TIE

    def test_empty_timeline(self):
        rep = attention_report(Timeline("s", []))
        assert rep.glances == 0
        assert rep.device_spans.total == 0.0
        assert rep.primary_focus is Focus.TIE

    def test_totals_cover_blocks(self):
        tl = hand_timeline()
        rep = attention_report(tl)
        total_blocks = sum(b.duration for b in tl.blocks)
        assert rep.device_spans.total + rep.environment_spans.total == pytest.approx(total_blocks)

    def test_shift_counts_balance(self):
        tl = hand_timeline()
        rep = attention_report(tl)
        assert rep.shifts_dev_to_env + rep.shifts_env_to_dev == len(tl.blocks) - 1
        assert abs(rep.shifts_dev_to_env - rep.shifts_env_to_dev) <= 1


class TestTimelineValidation:
    def test_overlap_rejected(self):
        tl = Timeline("s", [Block(Focus.DEVICE, 0, 2), Block(Focus.ENVIRONMENT, 1, 3)])
        with pytest.raises(PipelineError):
            tl.validate()

    def test_same_focus_adjacent_rejected(self):
        tl = Timeline("s", [Block(Focus.DEVICE, 0, 1), Block(Focus.DEVICE, 2, 3)])
        with pytest.raises(PipelineError):
            tl.validate()

    def test_empty_block_rejected(self):
        tl = Timeline("s", [Block(Focus.DEVICE, 1, 1)])
        with pytest.raises(PipelineError):
            tl.validate()


class TestConfusion:
    def test_perfect(self):
        pred = [CONTACT, NO_CONTACT, CONTACT]
        cm = confusion(pred, pred)
        assert (cm.fp, cm.fn) == (0, 0)
        assert (cm.tp, cm.tn) == (2, 1)

    def test_all_positive_predictions(self):
        truth = [CONTACT] * 8 + [NO_CONTACT] * 2
        cm = confusion([CONTACT] * 10, truth)
        assert (cm.tp, cm.fp, cm.tn, cm.fn) == (8, 2, 0, 0)

    def test_empty(self):
        cm = confusion([], [])
        assert cm.total == 0

    def test_length_mismatch(self):
        with pytest.raises(PipelineError):
            confusion([CONTACT], [])


class TestMcc:
    def test_perfect_prediction(self):
        assert mcc(ConfusionMatrix(tp=10, tn=10)) == 1.0

    def test_formula_case(self):
        value = mcc(ConfusionMatrix(tp=50, tn=30, fp=10, fn=10))
        assert value == pytest.approx(1400.0 / math.sqrt(60 * 60 * 40 * 40), abs=1e-12)
        assert value == pytest.approx(0.583333333, abs=1e-9)

    def test_degenerate_denominator(self):
        assert mcc(ConfusionMatrix(tp=10, fp=5)) == 0.0
        assert mcc(ConfusionMatrix()) == 0.0

    def test_swap_symmetry(self):
        a = ConfusionMatrix(tp=40, tn=25, fp=9, fn=4)
        b = ConfusionMatrix(tp=25, tn=40, fp=4, fn=9)
        assert mcc(a) == pytest.approx(mcc(b), abs=1e-15)

    def test_negating_predictions_negates(self):
        a = ConfusionMatrix(tp=40, tn=25, fp=9, fn=4)
        flipped = ConfusionMatrix(tp=4, tn=9, fp=25, fn=40)
        assert mcc(flipped) == pytest.approx(-mcc(a), abs=1e-15)

    def test_total_disagreement(self):
        assert mcc(ConfusionMatrix(fp=5, fn=5)) == -1.0


class TestTnr:
    def test_formula(self):
        assert tnr(ConfusionMatrix(tn=30, fp=10)) == pytest.approx(0.75)

    def test_no_false_positives(self):
        assert tnr(ConfusionMatrix(tn=7)) == 1.0

    def test_absent_when_no_negatives(self):
        assert tnr(ConfusionMatrix(tp=5, fn=3)) is None


def simple_dataset(n_participants=3, frames=8):
    records = []
    for p in range(n_participants):
        for i in range(frames):
            truth = CONTACT if i % 2 == 0 else NO_CONTACT
            records.append(frame(f"s{p}", f"p{p}", t=float(i), truth=truth))
    return records


class TestLoocv:
    def test_fold_structure(self):
        records = simple_dataset(3)
        seen = []

        def train_fn(train_split):
            seen.append({r.participant_id for r in train_split})
            return "model"

        def predict_fn(model, test_split):
            return [r.ground_truth for r in test_split]

        result = loocv_by_participant(records, train_fn, predict_fn)
        assert len(result.folds) == 3
        assert seen == [{"p1", "p2"}, {"p0", "p2"}, {"p0", "p1"}]
        assert result.mean_mcc == pytest.approx(1.0)
        assert result.std_mcc == pytest.approx(0.0)

    def test_single_participant_rejected(self):
        with pytest.raises(PipelineError):
            loocv_by_participant(simple_dataset(1), lambda r: None, lambda m, r: [])

    def test_failed_fold_excluded_with_warning(self):
        records = simple_dataset(3)

        def train_fn(train_split):
            if {r.participant_id for r in train_split} == {"p0", "p1"}:
                raise PipelineError("single-class training labels")
            return "model"

        def predict_fn(model, test_split):
            return [r.ground_truth for r in test_split]

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = loocv_by_participant(records, train_fn, predict_fn)
        assert any("failed" in str(w.message) for w in caught)
        failed = [f for f in result.folds if f.failed]
        assert len(failed) == 1 and failed[0].participant == "p2"
        assert result.mean_mcc == pytest.approx(1.0)

    def test_no_test_record_in_training(self):
        records = simple_dataset(4)

        def train_fn(train_split):
            return {id(r) for r in train_split}

        def predict_fn(model, test_split):
            assert all(id(r) not in model for r in test_split)
            return [r.ground_truth for r in test_split]

        loocv_by_participant(records, train_fn, predict_fn)


class TestCrossDataset:
    def test_illumination_strata(self):
        train = simple_dataset(2)
        test = [
            frame("sx", "px", t=float(i), truth=CONTACT if i % 2 else NO_CONTACT,
                  illum="dim" if i < 4 else "bright")
            for i in range(8)
        ]

        def train_fn(records):
            return "m"

        def predict_fn(model, records):
            return [r.ground_truth for r in records]

        result = cross_dataset_eval(train, test, train_fn, predict_fn)
        assert set(result.per_illumination) == {"dim", "bright"}
        assert result.mcc == pytest.approx(1.0)
        for tag, (cm, m) in result.per_illumination.items():
            assert cm.total == 4
            assert m == pytest.approx(1.0)

    def test_test_without_labels_rejected(self):
        train = simple_dataset(2)
        test = [frame("sx", "px", t=0.0)]
        with pytest.raises(PipelineError):
            cross_dataset_eval(train, test, lambda r: "m", lambda m, r: [NO_CONTACT])


class TestEvaluatePredictions:
    def test_counts_all_frames(self):
        records = simple_dataset(1)
        preds = [r.ground_truth for r in records]
        result = evaluate_predictions(records, preds)
        assert result.confusion.total == len(records)
        assert result.tnr == 1.0

    def test_frames_without_truth_skipped(self):
        records = simple_dataset(1) + [frame("s9", "p9", t=0.0)]
        preds = [r.ground_truth or NO_CONTACT for r in records]
        result = evaluate_predictions(records, preds)
        assert result.confusion.total == len(records) - 1
