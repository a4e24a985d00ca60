"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The external-data gate
at the end needs real dataset paths via environment variables and is
skipped otherwise.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from conftest import synthetic_dataset
from matchbench.cli import main as cli_main
from matchbench.dataset import Dataset, generate_synthetic_sequence, random_block_texture, save_sequence_dir
from matchbench.features import DescriptorMatrix, Metric
from matchbench.geometry import (
    Homography,
    RansacConfig,
    apply_homography_array,
    corner_transfer_error,
    ransac_homography,
    reprojection_errors,
)
from matchbench.matching import MethodKind, effective_thresholds, match_mnns_brt
from matchbench.rng import derive_pair_seed
from matchbench.sweep import (
    auc,
    best_threshold,
    extract_dataset_features,
    in_memory_features,
    run_sweep,
    sweep_from_json_doc,
    FeatureDirSource,
)

SWEEP_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


def report(name: str, detail: str = ""):
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


# ---------------------------------------------------------------------------
# Criterion 1: matcher oracle equivalence


def _oracle_top2(queries: np.ndarray, targets: np.ndarray, metric: Metric):
    nn, d1, d2 = [], [], []
    n = targets.shape[0]
    for q in queries:
        if metric is Metric.L2:
            row = np.linalg.norm(targets.astype(np.float64) - q.astype(np.float64), axis=1)
        else:
            row = np.unpackbits(np.bitwise_xor(targets, q), axis=1).sum(axis=1).astype(float)
        order = sorted(range(n), key=lambda j: (row[j], j))
        nn.append(order[0])
        d1.append(row[order[0]])
        d2.append(row[order[1]] if n > 1 else math.inf)
    return nn, d1, d2


def _oracle_ratio(d1: float, d2: float) -> float:
    if math.isinf(d2):
        return 0.0
    if d2 == 0.0:
        return 1.0
    return d1 / d2


def _oracle_pairs(a: np.ndarray, b: np.ndarray, metric: Metric, r: float) -> set:
    nn_ab, d1_ab, d2_ab = _oracle_top2(a, b, metric)
    nn_ba, d1_ba, d2_ba = _oracle_top2(b, a, metric)
    out = set()
    for i, j in enumerate(nn_ab):
        if nn_ba[j] != i:
            continue
        if _oracle_ratio(d1_ab[i], d2_ab[i]) <= r and _oracle_ratio(d1_ba[j], d2_ba[j]) <= r:
            out.add((i, j))
    return out


def test_matcher_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.RandomState(20240817)
    checked = 0
    for pair_idx in range(200):
        na, nb = rng.randint(1, 201, size=2)
        flavor = pair_idx % 3
        if flavor == 0:
            a = rng.randn(na, 8).astype(np.float32)
            b = rng.randn(nb, 8).astype(np.float32)
            da, db = DescriptorMatrix.float32(a), DescriptorMatrix.float32(b)
            metric = Metric.L2
        elif flavor == 1:
            a = rng.randn(na, 128).astype(np.float32)
            b = rng.randn(nb, 128).astype(np.float32)
            da, db = DescriptorMatrix.float32(a), DescriptorMatrix.float32(b)
            metric = Metric.L2
        else:
            a = rng.randint(0, 256, (na, 32)).astype(np.uint8)
            b = rng.randint(0, 256, (nb, 32)).astype(np.uint8)
            da, db = (
                DescriptorMatrix.packed_binary(a, 256),
                DescriptorMatrix.packed_binary(b, 256),
            )
            metric = Metric.HAMMING
        previous = None
        for r in SWEEP_GRID:
            got = set(match_mnns_brt(da, db, r, metric).pairs())
            assert got == _oracle_pairs(a, b, metric, r), (pair_idx, r)
            if previous is not None:
                assert previous <= got, f"monotonicity broken at r={r}"
            previous = got
            checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"matcher oracle run took {elapsed:.1f}s"
    report("matcher oracle equivalence", f"200 pairs x {len(SWEEP_GRID)} thresholds in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: DLT exactness


def test_dlt_exactness():
    from matchbench.geometry import dlt_homography

    start = time.monotonic()
    rng = np.random.RandomState(77)
    worst = 0.0
    for _ in range(1000):
        m = np.array(
            [
                [1 + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-40, 40)],
                [rng.uniform(-0.3, 0.3), 1 + rng.uniform(-0.3, 0.3), rng.uniform(-40, 40)],
                [rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), 1.0],
            ]
        )
        h_true = Homography.from_matrix(m)
        ref = rng.uniform(0, 240, size=(8, 2))
        tgt = apply_homography_array(h_true, ref)
        h = dlt_homography(ref, tgt)
        worst = max(worst, float(reprojection_errors(h, ref, tgt).max()))
    elapsed = time.monotonic() - start
    assert worst < 1e-6, f"max reprojection error {worst}"
    assert elapsed < 10.0, f"DLT suite took {elapsed:.1f}s"
    report("DLT exactness", f"1000 fits, worst error {worst:.2e} px in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 3: RANSAC robustness


def test_ransac_robustness():
    start = time.monotonic()
    theta = math.radians(8.0)
    successes = 0
    for trial in range(100):
        rs = np.random.RandomState(1000 + trial)
        h_true = Homography.from_matrix(
            [
                [math.cos(theta), -math.sin(theta), 40.0],
                [math.sin(theta), math.cos(theta), -25.0],
                [1.5e-4, -1e-4, 1.0],
            ]
        )
        ref_in = rs.uniform([0, 0], [640, 480], size=(100, 2))
        tgt_in = apply_homography_array(h_true, ref_in) + rs.normal(0, 0.5, (100, 2))
        ref_out = rs.uniform([0, 0], [640, 480], size=(100, 2))
        tgt_out = rs.uniform([0, 0], [640, 480], size=(100, 2))
        ref = np.vstack([ref_in, ref_out])
        tgt = np.vstack([tgt_in, tgt_out])
        res = ransac_homography(ref, tgt, RansacConfig(seed=trial))
        if corner_transfer_error(res.homography, h_true, (640, 480)) < 1.0:
            successes += 1
    elapsed = time.monotonic() - start
    assert successes >= 95, f"only {successes}/100 seeds under 1.0 px"
    assert elapsed < 60.0, f"RANSAC suite took {elapsed:.1f}s"
    report("RANSAC robustness", f"{successes}/100 seeds < 1 px in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 4: metric oracle on a synthetic dataset


def _oracle_apply(m: np.ndarray, x: float, y: float):
    den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den,
    )


def test_metric_oracle_agreement():
    ds = synthetic_dataset(n_sequences=3, seed=5, warp_magnitude=10.0, size=128, n_targets=5)
    feats = extract_dataset_features(ds)
    master_seed = 31
    sweep_values = (0.5, 0.8, 1.0)
    grid = tuple(float(e) for e in range(1, 11))
    result = run_sweep(
        ds,
        in_memory_features(feats),
        MethodKind.RATIO_TEST,
        sweep_values=sweep_values,
        ransac_cfg=RansacConfig(seed=master_seed),
        grid=grid,
        method_name="orblite",
    )

    # Brute force: direct loops over every pair and match, with an
    # independent homography application.
    seqs = sorted(ds.sequences, key=lambda s: s.name)
    for ti, t in enumerate(sweep_values):
        per_pair = []
        ordinal = 0
        for seq in seqs:
            fa = feats[f"{seq.name}_1"]
            for k in range(2, 7):
                fb = feats[f"{seq.name}_{k}"]
                gt = seq.gt_homographies[k - 2].matrix
                ms = match_mnns_brt(fa, fb, t)
                mma_counts = [0] * len(grid)
                for ia, ib in ms.pairs():
                    x1, y1 = (float(v) for v in fa.keypoints[ia, :2])
                    x2, y2 = (float(v) for v in fb.keypoints[ib, :2])
                    px, py = _oracle_apply(gt, x1, y1)
                    err = math.hypot(px - x2, py - y2)
                    for gi, eps in enumerate(grid):
                        if err <= eps:
                            mma_counts[gi] += 1
                n = len(ms)
                mma = [c / n if n else 0.0 for c in mma_counts]
                coords = np.column_stack(
                    [fa.keypoints[ms.index_a, :2], fb.keypoints[ms.index_b, :2]]
                ).astype(np.float64)
                if n < 4:
                    hea_err = math.inf
                else:
                    cfg = RansacConfig(seed=derive_pair_seed(master_seed, ordinal))
                    est = ransac_homography(coords[:, :2], coords[:, 2:], cfg).homography
                    w, h = seq.images[0].size
                    corners = [(0.0, 0.0), (w - 1.0, 0.0), (0.0, h - 1.0), (w - 1.0, h - 1.0)]
                    dists = []
                    for cx, cy in corners:
                        ax, ay = _oracle_apply(est.matrix, cx, cy)
                        bx, by = _oracle_apply(gt, cx, cy)
                        dists.append(math.hypot(ax - bx, ay - by))
                    hea_err = sum(dists) / 4.0
                per_pair.append((seq.subset.value, n, mma, hea_err))
                ordinal += 1

        entry = result.entries[ti]
        for scope in ("overall", "illumination", "viewpoint"):
            rows = [p for p in per_pair if scope == "overall" or p[0] == scope]
            for gi in range(len(grid)):
                want_mma = sum(p[2][gi] for p in rows) / len(rows) if rows else 0.0
                want_hea = (
                    sum(1 for p in rows if p[3] < grid[gi]) / len(rows) if rows else 0.0
                )
                assert abs(entry.curve("mma", scope).values[gi] - want_mma) <= 1e-12
                assert abs(entry.curve("hea", scope).values[gi] - want_hea) <= 1e-12
        want_mean_matches = sum(p[1] for p in per_pair) / len(per_pair)
        assert abs(entry.mean_matches - want_mean_matches) <= 1e-12
    report("metric oracle agreement", "3 synthetic sequences, 3 sweep values, <= 1e-12")


# ---------------------------------------------------------------------------
# Criterion 5: curve properties and byte-identical reports


def test_curve_properties_and_determinism(tmp_path):
    root = tmp_path / "data"
    ds = synthetic_dataset(n_sequences=2, seed=13, warp_magnitude=10.0, size=128, n_targets=5)
    for seq in ds.sequences:
        save_sequence_dir(seq, root)

    def run(out, jobs):
        code = cli_main(
            [
                "sweep",
                "--dataset", str(root),
                "--builtin",
                "--no-exclusions",
                "--sweep", "0.1:1.0:0.1",
                "--seed", "21",
                "--jobs", str(jobs),
                "--out", str(out),
            ]
        )
        assert code == 0
        return (out / "orblite_sweep.json").read_bytes()

    run1 = run(tmp_path / "r1", 1)
    run2 = run(tmp_path / "r2", 1)
    runj = run(tmp_path / "rj", 4)
    assert run1 == run2, "same-seed runs differ"
    assert run1 == runj, "--jobs 1 vs --jobs N differ"

    s = sweep_from_json_doc(json.loads(run1.decode()))
    for e in s.entries:
        for c in e.curves:
            assert all(b >= a for a, b in zip(c.values, c.values[1:])), (
                f"{c.metric}/{c.scope} not non-decreasing at t={e.sweep_value}"
            )
            a = auc(c)
            assert min(c.values) <= a <= max(c.values)
    report("curve properties and determinism", "byte-identical JSON across runs and job counts")


# ---------------------------------------------------------------------------
# Criterion 6: threshold-semantics conformance


def test_threshold_semantics():
    for t in SWEEP_GRID:
        ratio = effective_thresholds(MethodKind.RATIO_TEST, t)
        assert ratio.ratio == t
        conf = effective_thresholds(MethodKind.CONFIDENCE_FILTER, t)
        assert abs(conf.confidence_cutoff - (1.0 - t)) < 1e-9
        sched = effective_thresholds(MethodKind.DFM_SCHEDULE, t).schedule
        assert len(sched) == 5 and sched[3:] == (0.90, 0.95)
    assert effective_thresholds(MethodKind.DFM_SCHEDULE, 0.5).schedule == (
        0.80,
        0.80,
        0.80,
        0.90,
        0.95,
    )
    assert effective_thresholds(MethodKind.CONFIDENCE_FILTER, 0.3).confidence_cutoff == 0.7
    assert effective_thresholds(MethodKind.DFM_SCHEDULE, 1.0).schedule[0] == 1.0
    report("threshold semantics", "ratio, confidence and layered schedule rows conform")


# ---------------------------------------------------------------------------
# Criterion 7: end-to-end synthetic sweep


def test_end_to_end_synthetic_sweep():
    start = time.monotonic()
    base = random_block_texture(256, 256, seed=11)
    seq = generate_synthetic_sequence(base, seed=7, n_targets=5, warp_magnitude=20.0)
    ds = Dataset((seq,))
    feats = extract_dataset_features(ds)
    result = run_sweep(
        ds,
        in_memory_features(feats),
        MethodKind.RATIO_TEST,
        sweep_values=SWEEP_GRID,
        ransac_cfg=RansacConfig(seed=123),
        method_name="orblite",
    )
    counts = [e.mean_matches for e in result.entries]
    assert all(b >= a for a, b in zip(counts, counts[1:])), f"match counts not monotone: {counts}"

    best_t, best_mma3 = best_threshold(result, "mma", eps=3.0)
    assert best_mma3 >= 0.5, f"best MMA@3px {best_mma3:.3f} at t={best_t}"
    hea5_at_1 = result.entry(1.0).curve("hea").values[result.grid.index(5.0)]
    assert hea5_at_1 >= 0.8, f"HEA@5px at t=1.0 is {hea5_at_1:.3f}"
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"end-to-end sweep took {elapsed:.1f}s"
    report(
        "end-to-end synthetic sweep",
        f"MMA@3px {best_mma3:.2f} at t={best_t}, HEA@5px@1.0 {hea5_at_1:.2f} in {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Optional external-data gate (real dataset + exported SIFT features)

HPATCHES_ROOT = os.environ.get("HPATCHES_ROOT")
SIFT_FEATURES_DIR = os.environ.get("SIFT_FEATURES_DIR")


@pytest.mark.skipif(
    not (HPATCHES_ROOT and SIFT_FEATURES_DIR),
    reason="set HPATCHES_ROOT and SIFT_FEATURES_DIR to run the external-data gate",
)
def test_external_data_gate():
    from matchbench.dataset import load_dataset

    ds = load_dataset(HPATCHES_ROOT)  # default exclusion list
    counts = ds.subset_counts()
    assert len(ds) == 108 and counts[list(counts)[0]] in (52, 56)
    result = run_sweep(
        ds,
        FeatureDirSource(SIFT_FEATURES_DIR),
        MethodKind.RATIO_TEST,
        sweep_values=SWEEP_GRID,
        ransac_cfg=RansacConfig(seed=0),
        jobs=os.cpu_count() or 1,
        method_name="sift",
    )
    t_mma, v_mma = best_threshold(result, "mma", eps=None)
    assert abs(100.0 * v_mma - 89.6) <= 2.0, f"best MMA AUC {100 * v_mma:.1f}"
    assert t_mma == 0.3, f"best MMA AUC threshold {t_mma}"
    mma1_at_03 = result.entry(0.3).curve("mma").values[result.grid.index(1.0)]
    assert abs(mma1_at_03 - 0.60) <= 0.03, f"MMA@1px at 0.3 is {mma1_at_03:.3f}"
    _, v_hea = best_threshold(result, "hea", eps=None)
    assert abs(100.0 * v_hea - 82.1) <= 4.0, f"best HEA AUC {100 * v_hea:.1f}"
    report("external-data gate", "SIFT features on full dataset within stated tolerances")
