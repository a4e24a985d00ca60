"""Exporter round trips against the installed harness.

The harness is consumed strictly through its external interfaces: the
FEATv1/MTCHv1 byte layouts and the `matchbench` command line.
"""
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import export  # noqa: E402

cv2 = pytest.importorskip("cv2")


def write_p5(path: Path, arr: np.ndarray) -> None:
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + arr.tobytes())


def textured(seed: int, size: int = 160) -> np.ndarray:
    rng = np.random.RandomState(seed)
    levels = rng.randint(0, 256, (size // 16, size // 16)).astype(np.uint8)
    img = np.repeat(np.repeat(levels, 16, axis=0), 16, axis=1)
    return cv2.GaussianBlur(img, (5, 5), 1.0)


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory):
    """One six-image sequence; targets are exact integer translations."""
    root = tmp_path_factory.mktemp("dataset")
    seq = root / "v_export"
    seq.mkdir()
    base = textured(3)
    write_p5(seq / "1.ppm", base)
    for k in range(2, 7):
        shift = k - 1
        img = np.roll(base, shift, axis=1)
        write_p5(seq / f"{k}.ppm", img)
        (seq / f"H_1_{k}").write_text(f"1 0 {shift}\n0 1 0\n0 0 1\n")
    return root


def run_harness(*args):
    return subprocess.run(
        [sys.executable, "-m", "matchbench", *map(str, args)],
        capture_output=True,
        text=True,
    )


class TestFeatureExport:
    def test_sift_export_round_trip(self, dataset_root, tmp_path):
        out = tmp_path / "sift"
        code = export.main(
            ["--method", "sift", "--dataset", str(dataset_root), "--out", str(out)]
        )
        assert code == 0
        files = sorted(out.glob("*.feat"))
        assert [p.name for p in files] == [f"v_export_{k}.feat" for k in range(1, 7)]

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["method"] == "sift"
        assert "opencv" in manifest["upstream_versions"]

        # Every exported file must pass the harness load invariants, which
        # `convert` exercises; keypoint coordinates must round-trip at
        # float32 precision against a direct OpenCV run.
        img = cv2.imread(str(dataset_root / "v_export" / "1.ppm"), cv2.IMREAD_GRAYSCALE)
        kps, desc = cv2.SIFT_create().detectAndCompute(img, None)
        as_json = tmp_path / "check.json"
        proc = run_harness("convert", files[0], as_json)
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(as_json.read_text())
        assert doc["descriptors"]["kind"] == "float32"
        assert doc["descriptors"]["dim"] == 128
        got = {(np.float32(k["x"]), np.float32(k["y"])) for k in doc["keypoints"]}
        want = {(np.float32(k.pt[0]), np.float32(k.pt[1])) for k in kps}
        assert got == want

    def test_exported_features_flow_through_evaluate(self, dataset_root, tmp_path):
        out = tmp_path / "sift"
        assert export.main(
            ["--method", "sift", "--dataset", str(dataset_root), "--out", str(out)]
        ) == 0
        report = tmp_path / "report"
        proc = run_harness(
            "evaluate",
            "--dataset", dataset_root,
            "--features", out,
            "--method", "ratio",
            "--threshold", "0.8",
            "--no-exclusions",
            "--jobs", "1",
            "--out", report,
        )
        assert proc.returncode == 0, proc.stderr
        assert (report / "sift_sweep.json").exists()

    def test_orb_export_is_hamming_compatible(self, dataset_root, tmp_path):
        out = tmp_path / "orb"
        assert export.main(
            ["--method", "orb", "--dataset", str(dataset_root), "--out", str(out)]
        ) == 0
        as_json = tmp_path / "orb.json"
        proc = run_harness("convert", out / "v_export_1.feat", as_json)
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(as_json.read_text())
        assert doc["descriptors"]["kind"] == "packed_binary"
        assert doc["descriptors"]["dim"] == 256
        report = tmp_path / "orb_report"
        proc = run_harness(
            "evaluate",
            "--dataset", dataset_root,
            "--features", out,
            "--method", "ratio",
            "--threshold", "0.9",
            "--no-exclusions",
            "--jobs", "1",
            "--out", report,
        )
        assert proc.returncode == 0, proc.stderr

    def test_reexport_is_byte_stable(self, dataset_root, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        for out in (out1, out2):
            assert export.main(
                ["--method", "sift", "--dataset", str(dataset_root), "--out", str(out)]
            ) == 0
        for p in sorted(out1.glob("*.feat")):
            assert p.read_bytes() == (out2 / p.name).read_bytes()

    def test_angles_are_radians(self, dataset_root, tmp_path):
        out = tmp_path / "sift"
        export.main(["--method", "sift", "--dataset", str(dataset_root), "--out", str(out)])
        as_json = tmp_path / "a.json"
        run_harness("convert", out / "v_export_1.feat", as_json)
        doc = json.loads(as_json.read_text())
        angles = [k["angle"] for k in doc["keypoints"] if k["angle"] is not None]
        assert angles and all(0.0 <= a < 2 * math.pi for a in angles)


class TestScoredMatchExport:
    def test_one_file_per_pair_and_evaluate(self, dataset_root, tmp_path):
        out = tmp_path / "matches"
        code = export.main(
            ["--method", "sift_mnn", "--dataset", str(dataset_root), "--out", str(out)]
        )
        assert code == 0
        files = sorted(out.glob("*.match"))
        assert [p.name for p in files] == [f"v_export_1_{k}.match" for k in range(2, 7)]
        report = tmp_path / "report"
        proc = run_harness(
            "evaluate",
            "--dataset", dataset_root,
            "--matches", out,
            "--method", "confidence",
            "--threshold", "1.0",
            "--no-exclusions",
            "--jobs", "1",
            "--out", report,
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads((report / "matches_sweep.json").read_text())
        assert doc["entries"][0]["mean_matches"] > 4

    def test_confidence_clipping(self):
        clipped = export.clip_confidences(np.array([-0.2, 0.5, 1.3]))
        assert clipped.tolist() == [0.0, 0.5, 1.0]


class TestErrors:
    def test_unbundled_method_names_hint(self, dataset_root, tmp_path, capsys):
        code = export.main(
            ["--method", "superglue", "--dataset", str(dataset_root), "--out", str(tmp_path / "x")]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "superglue" in err and "repo" in err

    def test_unknown_method(self, dataset_root, tmp_path, capsys):
        code = export.main(
            ["--method", "nope", "--dataset", str(dataset_root), "--out", str(tmp_path / "x")]
        )
        assert code == 2
        assert "known" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        code = export.main(
            ["--method", "sift", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path / "x")]
        )
        assert code == 2

    def test_dependency_missing_when_factory_absent(self, dataset_root, tmp_path, capsys):
        if hasattr(cv2, "KAZE_create"):
            pytest.skip("this OpenCV build ships KAZE")
        code = export.main(
            ["--method", "kaze", "--dataset", str(dataset_root), "--out", str(tmp_path / "x")]
        )
        assert code == 2
        assert "KAZE" in capsys.readouterr().err

    def test_bad_params(self, dataset_root, tmp_path, capsys):
        code = export.main(
            ["--method", "sift", "--dataset", str(dataset_root), "--out", str(tmp_path / "x"),
             "--params", "noequals"]
        )
        assert code == 2
