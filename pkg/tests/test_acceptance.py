"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import contextlib
import json
import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from eyecontact import classify, labeling, metrics, pipeline
from eyecontact.cli import EXIT_OK, main
from eyecontact.config import PipelineConfig
from eyecontact.gaze import (
    GazeAngles,
    GazeSource,
    angles_to_vector,
    apply_threshold,
    intersect_plane,
    vector_to_angles,
)
from eyecontact.headpose import FaceModel3D, default_intrinsics, refine_lm, solve_epnp
from eyecontact.metrics import Block, ConfusionMatrix, Focus, Timeline
from eyecontact.normalize import NormParams, head_frame, normalization_transform
from eyecontact.records import CONTACT, NO_CONTACT
from eyecontact.synth import SynthConfig, generate, generate_pose_scene


@contextlib.contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:2d} FAIL: {description}")
        raise
    print(f"ACCEPTANCE {number:2d} PASS: {description}")


def geodesic_deg(r_a, r_b):
    return math.degrees(np.linalg.norm(Rotation.from_matrix(r_a.T @ r_b).as_rotvec()))


@pytest.fixture(scope="module")
def pose_model():
    rng = np.random.default_rng(2024)
    return FaceModel3D(points=rng.normal(scale=[40.0, 50.0, 25.0], size=(68, 3)))


def test_c01_pose_roundtrip(pose_model):
    with criterion(1, "pose roundtrip: 0.5 deg / 1 mm at zero noise, 3 deg at 1 px, < 10 s"):
        start = time.perf_counter()
        clean = generate_pose_scene(
            100, noise_px=0.0, seed=101, model=pose_model,
            angle_range_deg=60.0, z_range=(200.0, 800.0),
        )
        for lm, truth in zip(clean.landmarks, clean.poses):
            pose = refine_lm(
                solve_epnp(pose_model, lm, clean.intrinsics), pose_model, lm, clean.intrinsics
            )
            assert geodesic_deg(pose.rotation, truth.rotation) <= 0.5
            assert np.linalg.norm(pose.translation - truth.translation) <= 1.0

        noisy = generate_pose_scene(
            100, noise_px=1.0, seed=102, model=pose_model,
            angle_range_deg=60.0, z_range=(200.0, 800.0),
        )
        for lm, truth in zip(noisy.landmarks, noisy.poses):
            pose = refine_lm(
                solve_epnp(pose_model, lm, noisy.intrinsics), pose_model, lm, noisy.intrinsics
            )
            assert geodesic_deg(pose.rotation, truth.rotation) <= 3.0
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_c02_lm_monotonicity(pose_model):
    with criterion(2, "LM refinement never increases reprojection RMSE (1000 instances)"):
        from eyecontact.headpose import reprojection_rmse

        rng = np.random.default_rng(200)
        scene = generate_pose_scene(
            1000, noise_px=2.0, seed=201, model=pose_model,
            angle_range_deg=60.0, z_range=(200.0, 800.0),
        )
        for lm, truth in zip(scene.landmarks, scene.poses):
            initial = solve_epnp(pose_model, lm, scene.intrinsics)
            # also start some refinements from deliberately perturbed poses
            if rng.random() < 0.3:
                bump = Rotation.from_rotvec(rng.normal(scale=0.05, size=3)).as_matrix()
                initial.rotation = initial.rotation @ bump
                initial.reprojection_rmse = reprojection_rmse(
                    pose_model, initial, lm, scene.intrinsics
                )
            out = refine_lm(initial, pose_model, lm, scene.intrinsics)
            assert out.reprojection_rmse <= initial.reprojection_rmse


def test_c03_normalization_invariants(pose_model):
    with criterion(3, "normalization: view rotation + roll cancellation (1e-9), centering (1 px)"):
        rng = np.random.default_rng(300)
        k = default_intrinsics(640, 480)
        params = NormParams()
        done = 0
        while done < 1000:
            r = Rotation.from_euler("xyz", rng.uniform(-60, 60, 3), degrees=True).as_matrix()
            t = np.array([rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(250, 750)])
            from eyecontact.headpose import HeadPose

            frame = head_frame(HeadPose(r, t, 0.0), pose_model)
            if frame.origin[2] <= 1.0:
                continue
            res = normalization_transform(frame, k, params)
            d = np.linalg.norm(frame.origin)
            rc = res.rot @ frame.origin
            assert abs(rc[0]) < 1e-9 * d and abs(rc[1]) < 1e-9 * d
            assert abs(rc[2] - d) < 1e-9 * d
            assert abs((res.rot @ frame.x_axis)[1]) < 1e-9
            # face center through the warp lands on the normalized image center
            px = k.matrix @ (frame.origin / frame.origin[2])
            mapped = res.warp @ px
            mapped = mapped[:2] / mapped[2]
            assert abs(mapped[0] - (params.out_size[0] / 2 - 0.5)) < 1.0
            assert abs(mapped[1] - (params.out_size[1] / 2 - 0.5)) < 1.0
            done += 1


def test_c04_gaze_geometry():
    with criterion(4, "gaze geometry: angle roundtrip 1e-9 x 10000, plane intersection exact"):
        rng = np.random.default_rng(400)
        for _ in range(10000):
            g = GazeAngles(rng.uniform(-math.pi / 2, math.pi / 2), rng.uniform(-math.pi, math.pi))
            v = angles_to_vector(g)
            back = vector_to_angles(v)
            assert abs(back.pitch - g.pitch) < 1e-9
            assert abs(back.yaw - g.yaw) < 1e-9

        for _ in range(1000):
            origin = np.array([rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(50, 900)])
            v = angles_to_vector(
                GazeAngles(rng.uniform(-1.2, 1.2), rng.uniform(-math.pi, math.pi))
            )
            if v[2] >= -1e-6:
                continue
            p = intersect_plane(origin, v)
            reprojected = origin + (-origin[2] / v[2]) * v
            assert abs(reprojected[2]) < 1e-9

        hand = intersect_plane([0, 0, 300], np.array([1.0, 0.0, -1.0]) / math.sqrt(2))
        assert hand.x == pytest.approx(300.0, abs=1e-9)
        assert hand.y == pytest.approx(0.0, abs=1e-9)


def test_c05_threshold_semantics():
    with criterion(5, "adaptive threshold: proxy iff |pitch|>40 deg or |yaw|>40 deg, boundary keeps gaze"):
        gaze = GazeAngles(math.radians(3.0), math.radians(-2.0))
        for pitch_deg in (-41, -40, -39, 39, 40, 41):
            for yaw_deg in (-41, -40, -39, 39, 40, 41):
                head = GazeAngles(math.radians(pitch_deg), math.radians(yaw_deg))
                eff, src = apply_threshold(gaze, head)
                expect_proxy = abs(pitch_deg) > 40 or abs(yaw_deg) > 40
                assert (src is GazeSource.HEAD_POSE_PROXY) == expect_proxy
                assert eff == (head if expect_proxy else gaze)


def test_c06_labeling_oracle():
    with criterion(6, "labeling oracle: planted blobs give 2 clusters, device nearest, >= 99% agreement"):
        rng = np.random.default_rng(0)
        pts = np.vstack([
            rng.normal([0, 0], 10, size=(200, 2)),
            rng.normal([150, 200], 10, size=(200, 2)),
        ])
        assignment = labeling.optics_cluster(pts, min_pts=labeling.auto_min_pts(len(pts)), xi=0.05)
        assert assignment.n_clusters == 2
        device = labeling.select_device_cluster(assignment)
        centroid = assignment.centroids[device]
        assert np.hypot(centroid.x, centroid.y) < 20.0
        correct = 0
        for sl, expect_device in ((slice(0, 200), True), (slice(200, 400), False)):
            seg = assignment.labels[sl]
            target = device if expect_device else next(
                c for c in assignment.centroids if c != device
            )
            correct += int(np.sum(seg == target))
        assert correct / len(pts) >= 0.99


def test_c07_classifier():
    with criterion(7, "classifier: separable 100%, balanced recall, PCA k by variance arithmetic"):
        rng = np.random.default_rng(700)
        pos = rng.normal(scale=0.5, size=(100, 2)) + [3.0, 0.0]
        neg = rng.normal(scale=0.5, size=(100, 2)) + [-3.0, 0.0]
        x = np.vstack([pos, neg])
        y = np.array([1] * 100 + [-1] * 100)
        model = classify.svm_train(x, y, C=1.0)
        labels, _ = classify.svm_predict(model, x)
        assert np.all(labels == y)

        ipos = rng.normal(scale=1.0, size=(190, 2)) + [0.8, 0.0]
        ineg = rng.normal(scale=1.0, size=(10, 2)) + [-0.8, 0.0]
        xi = np.vstack([ipos, ineg])
        yi = np.array([1] * 190 + [-1] * 10)
        balanced = classify.svm_train(xi, yi, weighting="balanced")
        unweighted = classify.svm_train(xi, yi, weighting="none")
        lb, _ = classify.svm_predict(balanced, xi)
        lu, _ = classify.svm_predict(unweighted, xi)
        minority = yi == -1
        assert np.mean(lb[minority] == -1) >= np.mean(lu[minority] == -1)

        # sample covariance exactly diag(9, 1): 9/10 < 0.95 forces k = 2
        raw = rng.normal(size=(500, 2))
        raw -= raw.mean(axis=0)
        cov = np.cov(raw, rowvar=False)
        el, ev = np.linalg.eigh(cov)
        white = raw @ ev @ np.diag(1.0 / np.sqrt(el))
        data = white @ np.diag([3.0, 1.0])
        assert np.allclose(np.cov(data, rowvar=False), np.diag([9.0, 1.0]), atol=1e-9)
        assert classify.pca_fit(data, retain=0.95).n_components == 2
        assert classify.pca_fit(data, retain=0.89).n_components == 1


def test_c08_evaluation_math():
    with criterion(8, "evaluation math: MCC, TNR, degenerate cases, LOOCV fold structure"):
        cm = ConfusionMatrix(tp=50, tn=30, fp=10, fn=10)
        independent = (50 * 30 - 10 * 10) / math.sqrt((50 + 10) * (50 + 10) * (30 + 10) * (30 + 10))
        assert metrics.mcc(cm) == pytest.approx(independent, abs=1e-12)
        assert metrics.mcc(cm) == pytest.approx(0.5833333333, abs=1e-9)
        assert metrics.mcc(ConfusionMatrix(tp=10, tn=10)) == 1.0
        assert metrics.mcc(ConfusionMatrix(tp=20, fp=5)) == 0.0
        assert metrics.tnr(ConfusionMatrix(tn=30, fp=10)) == pytest.approx(0.75)

        from eyecontact.records import FrameRecord

        records = [
            FrameRecord(session_id=f"s{p}", participant_id=f"p{p}", t=float(i),
                        image_size=(8, 8), face_detected=False,
                        ground_truth=CONTACT if i % 2 else NO_CONTACT)
            for p in range(3) for i in range(6)
        ]

        def train_fn(split):
            participants = {r.participant_id for r in split}
            assert len(participants) == 2
            return participants

        def predict_fn(trained_on, split):
            assert {r.participant_id for r in split}.isdisjoint(trained_on)
            return [r.ground_truth for r in split]

        result = metrics.loocv_by_participant(records, train_fn, predict_fn)
        assert len(result.folds) == 3
        assert result.mean_mcc == pytest.approx(1.0)


def test_c09_end_to_end(tmp_path):
    with criterion(9, "end-to-end synthetic: loocv MCC >= 0.9, ablation within 0.05, < 60 s"):
        start = time.perf_counter()
        synth_cfg = tmp_path / "synth.json"
        synth_cfg.write_text(json.dumps({
            "participants": 5, "frames_per_session": 160,
            "feature_separation": 6.0, "seed": 0,
        }))
        data = tmp_path / "data.jsonl"
        posed = tmp_path / "posed.jsonl"
        model = tmp_path / "model.json"
        pred = tmp_path / "pred.jsonl"
        report = tmp_path / "loocv.json"
        assert main(["synth", "--synth-config", str(synth_cfg), "--out", str(data)]) == EXIT_OK
        assert main(["pose", "--in", str(data), "--out", str(posed)]) == EXIT_OK
        assert main(["train", "--in", str(posed), "--out", str(model)]) == EXIT_OK
        assert main(["predict", "--in", str(posed), "--model", str(model), "--out", str(pred)]) == EXIT_OK
        assert main(["eval", "--in", str(posed), "--protocol", "loocv", "--out", str(report)]) == EXIT_OK
        cluster_mcc = json.loads(report.read_text())["mean_mcc"]
        elapsed = time.perf_counter() - start
        assert cluster_mcc >= 0.9, f"cluster-label loocv MCC {cluster_mcc:.4f}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"

        gt_report = tmp_path / "loocv_gt.json"
        assert main([
            "eval", "--in", str(posed), "--protocol", "loocv",
            "--labels", "ground-truth", "--out", str(gt_report),
        ]) == EXIT_OK
        gt_mcc = json.loads(gt_report.read_text())["mean_mcc"]
        assert gt_mcc >= cluster_mcc - 0.05, f"gt {gt_mcc:.4f} vs cluster {cluster_mcc:.4f}"


def test_c10_attention_metrics():
    with criterion(10, "attention metrics: hand timeline gives exact glances/shifts/spans"):
        tl = Timeline("s", [
            Block(Focus.DEVICE, 0.0, 1.0),
            Block(Focus.ENVIRONMENT, 1.0, 5.0),
            Block(Focus.DEVICE, 5.0, 5.5),
            Block(Focus.ENVIRONMENT, 5.5, 8.0),
            Block(Focus.DEVICE, 8.0, 15.0),
        ]).validate()
        rep = metrics.attention_report(tl, glance_max=2.0)
        assert rep.glances == 2
        assert rep.shifts_dev_to_env == 2 and rep.shifts_env_to_dev == 2
        assert rep.device_spans.total == 8.5
        assert rep.environment_spans.total == 6.5
        assert rep.primary_focus is Focus.DEVICE
        assert rep.device_spans.mean == pytest.approx(8.5 / 3)


def test_c11_determinism(tmp_path):
    with criterion(11, "determinism: every command rerun is byte-identical"):
        synth_cfg = tmp_path / "synth.json"
        synth_cfg.write_text(json.dumps({
            "participants": 3, "frames_per_session": 40, "feature_dim": 12, "seed": 4,
        }))

        outputs = {}
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            data, posed = d / "data.jsonl", d / "posed.jsonl"
            model, pred = d / "model.json", d / "pred.jsonl"
            report, mrep = d / "eval.json", d / "metrics.json"
            assert main(["synth", "--synth-config", str(synth_cfg), "--out", str(data)]) == EXIT_OK
            assert main(["pose", "--in", str(data), "--out", str(posed)]) == EXIT_OK
            assert main(["train", "--in", str(posed), "--out", str(model)]) == EXIT_OK
            assert main(["predict", "--in", str(posed), "--model", str(model), "--out", str(pred)]) == EXIT_OK
            assert main(["eval", "--in", str(posed), "--protocol", "loocv", "--out", str(report)]) == EXIT_OK
            assert main(["metrics", "--pred", str(pred), "--out", str(mrep)]) == EXIT_OK
            outputs[run] = [p.read_bytes() for p in (data, posed, model, pred, report, mrep)]
        for a_bytes, b_bytes in zip(outputs["a"], outputs["b"]):
            assert a_bytes == b_bytes
