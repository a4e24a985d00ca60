#!/usr/bin/env python3
"""Export features or scored matches from external extractors into the
harness interchange formats.

Usage:
    export.py --method <name> --dataset <hpatches-root> --out <dir>
              [--params k=v ...] [--jobs N]

Feature methods (one FEATv1 file per image, named <seq>_<k>.feat):
    sift, orb, kaze, akaze, surf        (OpenCV, default parameters)

Scored-match methods (one MTCHv1 file per pair, named <seq>_1_<k>.match):
    sift_mnn, orb_mnn                   (mutual NN ratio confidence)
    superglue, patch2pix, dfm           (not bundled; named install hint)

Descriptors are written verbatim, never re-normalized. Keypoint angles are
converted from OpenCV degrees to radians in [0, 2*pi); the undefined angle
(-1) becomes NaN. A manifest.json sidecar records the upstream version and
parameters. Exit codes: 0 success, 1 some images/pairs failed and were
skipped, 2 dependency or usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import struct
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"FEATv1\x00\x00"
MATCH_MAGIC = b"MTCHv1\x00\x00"
IMAGE_EXTENSIONS = (".ppm", ".png", ".jpg")


class DependencyMissing(RuntimeError):
    """An upstream library or model is not available."""


class UsageError(RuntimeError):
    pass


def _import_cv2():
    try:
        import cv2
    except ImportError as e:
        raise DependencyMissing(
            "OpenCV is required; install opencv-python or opencv-python-headless"
        ) from e
    return cv2


def _cv2_factory(name: str):
    cv2 = _import_cv2()
    factories = {
        "sift": ("SIFT_create", "opencv-python>=4.4 ships SIFT in the main module"),
        "orb": ("ORB_create", "opencv-python ships ORB in the main module"),
        "kaze": ("KAZE_create", "KAZE needs an OpenCV build with features2d KAZE (<5.0)"),
        "akaze": ("AKAZE_create", "AKAZE needs an OpenCV build with features2d AKAZE (<5.0)"),
        "surf": (
            "xfeatures2d",
            "SURF needs opencv-contrib-python<=3.4 (non-free xfeatures2d module)",
        ),
    }
    attr, hint = factories[name]
    if name == "surf":
        contrib = getattr(cv2, "xfeatures2d", None)
        if contrib is None or not hasattr(contrib, "SURF_create"):
            raise DependencyMissing(f"method surf: {hint}")
        return contrib.SURF_create
    factory = getattr(cv2, attr, None)
    if factory is None:
        raise DependencyMissing(f"method {name}: {hint}")
    return factory


FEATURE_METHODS = ("sift", "orb", "kaze", "akaze", "surf")
MATCH_METHODS = ("sift_mnn", "orb_mnn")
UNBUNDLED = {
    "superglue": "clone the SuperGlue inference repo and export with its weights",
    "patch2pix": "clone the Patch2Pix repo and export with its released checkpoint",
    "dfm": "clone the DFM repo (pre-trained VGG backbone) and export per threshold",
}


# ---------------------------------------------------------------------------
# Interchange format writers (byte layout per the harness README)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_feature_file(
    path: Path,
    image_id: str,
    size: tuple[int, int],
    keypoints: np.ndarray,
    descriptors: np.ndarray,
) -> None:
    """keypoints: (n, 5) float32 x, y, scale, angle, score.
    descriptors: (n, dim) float32 or (n, row_bytes) uint8 (verbatim)."""
    if descriptors.dtype == np.uint8:
        kind, dim = 1, descriptors.shape[1] * 8
    else:
        kind, dim = 0, descriptors.shape[1]
        descriptors = descriptors.astype("<f4", copy=False)
    out = bytearray()
    out += FEATURE_MAGIC
    out += bytes((kind, 0, 0, 0))
    out += _pack_str(image_id)
    out += struct.pack("<IIII", size[0], size[1], keypoints.shape[0], dim)
    out += keypoints.astype("<f4", copy=False).tobytes()
    out += descriptors.tobytes()
    path.write_bytes(bytes(out))


def write_match_file(path: Path, id_a: str, id_b: str, entries: np.ndarray) -> None:
    out = bytearray()
    out += MATCH_MAGIC
    out += _pack_str(id_a)
    out += _pack_str(id_b)
    out += struct.pack("<I", entries.shape[0])
    out += entries.astype("<f4", copy=False).tobytes()
    path.write_bytes(bytes(out))


# ---------------------------------------------------------------------------
# Extraction


def _angle_to_radians(deg: float) -> float:
    if deg < 0:
        return math.nan
    return math.radians(deg) % (2.0 * math.pi)


def _keypoints_to_rows(cv_keypoints, width: int, height: int):
    rows = np.zeros((len(cv_keypoints), 5), np.float32)
    for i, kp in enumerate(cv_keypoints):
        rows[i] = (kp.pt[0], kp.pt[1], kp.size, _angle_to_radians(kp.angle), kp.response)
    inside = (
        (rows[:, 0] >= -0.5)
        & (rows[:, 0] <= width - 0.5)
        & (rows[:, 1] >= -0.5)
        & (rows[:, 1] <= height - 0.5)
    )
    dropped = int((~inside).sum())
    if dropped:
        print(f"  warning: dropped {dropped} out-of-bounds keypoints", file=sys.stderr)
    return rows, inside


def extract_image(method: str, image_path: Path, params: dict):
    cv2 = _import_cv2()
    img = cv2.imread(str(image_path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise RuntimeError(f"cannot read image {image_path}")
    detector = _cv2_factory(method)(**params)
    kps, desc = detector.detectAndCompute(img, None)
    if desc is None:
        kps = []
        desc = np.empty((0, 128), np.float32)
    h, w = img.shape[:2]
    rows, inside = _keypoints_to_rows(kps, w, h)
    return (w, h), rows[inside], np.asarray(desc)[inside]


def _sequence_dirs(root: Path):
    dirs = sorted(
        p for p in root.iterdir() if p.is_dir() and (p.name.startswith(("i_", "v_")))
    )
    if not dirs:
        raise UsageError(f"no sequences under {root}")
    return dirs


def _image_path(seq_dir: Path, k: int) -> Path:
    for ext in IMAGE_EXTENSIONS:
        p = seq_dir / f"{k}{ext}"
        if p.exists():
            return p
    raise RuntimeError(f"{seq_dir.name}: missing image {k}")


def _export_one_image(args):
    method, seq_name, k, image_path, out_dir, params = args
    image_id = f"{seq_name}_{k}"
    try:
        size, rows, desc = extract_image(method, image_path, params)
        write_feature_file(Path(out_dir) / f"{image_id}.feat", image_id, size, rows, desc)
        return image_id, len(rows), None
    except DependencyMissing:
        raise
    except Exception as e:  # per-image failure: log and skip
        return image_id, 0, str(e)


def export_features(method: str, root: Path, out_dir: Path, params: dict, jobs: int) -> int:
    _cv2_factory(method)  # fail fast with the install hint
    tasks = []
    for seq_dir in _sequence_dirs(root):
        for k in range(1, 7):
            tasks.append((method, seq_dir.name, k, _image_path(seq_dir, k), out_dir, params))
    if jobs > 1:
        with Pool(jobs) as pool:
            results = pool.map(_export_one_image, tasks)
    else:
        results = [_export_one_image(t) for t in tasks]
    failures = 0
    written = []
    for image_id, n, err in results:
        if err is None:
            print(f"  {image_id}: {n} keypoints")
            written.append(f"{image_id}.feat")
        else:
            failures += 1
            print(f"  {image_id}: FAILED ({err})", file=sys.stderr)
    _write_manifest(out_dir, method, "features", params, written)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Scored matches (mutual NN ratio confidence over an OpenCV extractor)


def _mutual_nn_with_ratios(da: np.ndarray, db: np.ndarray, binary: bool):
    def top2(q, s):
        # Blocked over queries to bound the (block, ns, dim) temporary.
        step = max(1, (1 << 25) // max(1, s.shape[0] * s.shape[1] * 8))
        nn = np.empty(len(q), np.int64)
        first = np.empty(len(q))
        second = np.empty(len(q))
        for lo in range(0, len(q), step):
            qb = q[lo : lo + step]
            if binary:
                d = np.unpackbits(qb[:, None, :] ^ s[None, :, :], axis=2).sum(axis=2).astype(float)
            else:
                diff = qb[:, None, :].astype(np.float64) - s[None, :, :].astype(np.float64)
                d = np.sqrt((diff * diff).sum(axis=2))
            rows = np.arange(d.shape[0])
            idx = d.argmin(axis=1)
            best = d[rows, idx]
            if s.shape[0] == 1:
                nxt = np.full(d.shape[0], np.inf)
            else:
                d[rows, idx] = np.inf
                nxt = d.min(axis=1)
            nn[lo : lo + step] = idx
            first[lo : lo + step] = best
            second[lo : lo + step] = nxt
        return nn, first, second

    nn_ab, d1_ab, d2_ab = top2(da, db)
    nn_ba, d1_ba, d2_ba = top2(db, da)
    ia = np.arange(len(da))
    mutual = nn_ba[nn_ab] == ia

    def ratios(d1, d2):
        out = np.where(np.isinf(d2), 0.0, np.where(d2 == 0, 1.0, d1 / np.where(d2 == 0, 1, d2)))
        return out

    ra = ratios(d1_ab, d2_ab)[mutual]
    rb = ratios(d1_ba, d2_ba)[nn_ab[mutual]]
    return ia[mutual], nn_ab[mutual], np.maximum(ra, rb)


def clip_confidences(conf: np.ndarray) -> np.ndarray:
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        print("  warning: confidences outside [0, 1] were clipped", file=sys.stderr)
    return np.clip(conf, 0.0, 1.0)


def export_scored_matches(method: str, root: Path, out_dir: Path, params: dict, jobs: int) -> int:
    base_method = method.removesuffix("_mnn")
    _cv2_factory(base_method)
    failures = 0
    written = []
    for seq_dir in _sequence_dirs(root):
        seq = seq_dir.name
        try:
            size1, rows1, desc1 = extract_image(base_method, _image_path(seq_dir, 1), params)
        except Exception as e:
            print(f"  {seq}: FAILED reference image ({e})", file=sys.stderr)
            failures += 1
            continue
        binary = desc1.dtype == np.uint8
        for k in range(2, 7):
            pair_id = f"{seq}_1_{k}"
            try:
                _, rows2, desc2 = extract_image(base_method, _image_path(seq_dir, k), params)
                if len(desc1) == 0 or len(desc2) == 0:
                    entries = np.empty((0, 5), np.float32)
                else:
                    ia, ib, rmax = _mutual_nn_with_ratios(desc1, desc2, binary)
                    conf = clip_confidences(1.0 - rmax)
                    entries = np.column_stack(
                        [rows1[ia, :2], rows2[ib, :2], conf.astype(np.float32)]
                    )
                write_match_file(
                    Path(out_dir) / f"{pair_id}.match", f"{seq}_1", f"{seq}_{k}", entries
                )
                print(f"  {pair_id}: {entries.shape[0]} matches")
                written.append(f"{pair_id}.match")
            except Exception as e:
                failures += 1
                print(f"  {pair_id}: FAILED ({e})", file=sys.stderr)
    _write_manifest(out_dir, method, "matches", params, written)
    return 1 if failures else 0


def _write_manifest(out_dir: Path, method: str, kind: str, params: dict, files: list) -> None:
    try:
        import cv2

        upstream = {"opencv": cv2.__version__}
    except ImportError:
        upstream = {}
    doc = {
        "method": method,
        "output_kind": kind,
        "params": params,
        "upstream_versions": upstream,
        "files": sorted(files),
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def parse_params(pairs) -> dict:
    params = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--params entries must be k=v, got {pair!r}")
        key, value = pair.split("=", 1)
        for cast in (int, float):
            try:
                value = cast(value)
                break
            except ValueError:
                continue
        params[key] = value
    return params


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--method", required=True)
    ap.add_argument("--dataset", required=True, help="HPatches-style dataset root")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--params", nargs="*", default=None, help="k=v passed to the upstream factory")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    method = args.method.lower()
    root = Path(args.dataset)
    out_dir = Path(args.out)
    try:
        if not root.is_dir():
            raise UsageError(f"dataset root does not exist: {root}")
        out_dir.mkdir(parents=True, exist_ok=True)
        params = parse_params(args.params)
        if method in UNBUNDLED:
            raise DependencyMissing(f"method {method} is not bundled: {UNBUNDLED[method]}")
        if method in FEATURE_METHODS:
            return export_features(method, root, out_dir, params, args.jobs)
        if method in MATCH_METHODS:
            return export_scored_matches(method, root, out_dir, params, args.jobs)
        known = ", ".join(FEATURE_METHODS + MATCH_METHODS + tuple(UNBUNDLED))
        raise UsageError(f"unknown method {method!r}; known: {known}")
    except (DependencyMissing, UsageError) as e:
        print(f"export.py: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
