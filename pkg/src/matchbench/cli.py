"""Command-line interface.

Commands: extract, match, evaluate, sweep, report, convert. Exit codes:
0 success, 2 configuration error (bad flags, malformed specs, undecodable
or malformed inputs), 3 missing inputs (dataset, feature or match files),
4 I/O failure while writing outputs, 1 any other harness error.

Every flag mirrors a JSON config key one-to-one (dashes become
underscores); ``--config file.json`` merges with the command line, with
explicit flags winning. The merged configuration is echoed into the
output directory as ``run_config.json``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_dataset, load_exclusion_list
from .errors import (
    BadMagic,
    DecodeError,
    DegenerateWarp,
    EmptyDataset,
    ImageTooSmall,
    InvariantViolation,
    MatchbenchError,
    MetricMismatch,
    MissingFeatures,
    MissingFile,
    OutOfRange,
    ParseError,
    TruncatedFile,
    VersionUnsupported,
)
from .extractor import FastConfig
from .features import (
    ScoredMatchFile,
    load_features,
    load_scored_matches,
    save_features,
    save_scored_matches,
)
from .geometry import RansacConfig
from .matching import MethodKind, mutual_candidates
from .sweep import (
    REPORT_FORMATS,
    FeatureDirSource,
    MatchDirSource,
    emit_report,
    extract_dataset_features,
    format_table,
    in_memory_features,
    run_sweep,
    sweep_from_csv_text,
    sweep_from_json_doc,
)


class ConfigError(MatchbenchError):
    """Bad command line or config file."""


_CODE2 = (
    ConfigError,
    OutOfRange,
    DecodeError,
    ParseError,
    BadMagic,
    VersionUnsupported,
    TruncatedFile,
    InvariantViolation,
    MetricMismatch,
    DegenerateWarp,
    ImageTooSmall,
)
_CODE3 = (MissingFile, MissingFeatures, EmptyDataset)


def _exit_code(e: Exception) -> int:
    if isinstance(e, _CODE2):
        return 2
    if isinstance(e, _CODE3):
        return 3
    if isinstance(e, OSError):
        return 4
    return 1


def parse_span(spec: str, what: str, integer: bool = False) -> list[float]:
    """'start:stop:step' -> inclusive ascending list."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{what} spec {spec!r} must be start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{what} spec {spec!r} has non-numeric parts") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"{what} spec {spec!r} must ascend with positive step")
    values = []
    k = 0
    while True:
        v = round(start + k * step, 10)
        if v > stop + 1e-9:
            break
        values.append(int(v) if integer else v)
        k += 1
    if not values:
        raise ConfigError(f"{what} spec {spec!r} produced no values")
    return values


# ---------------------------------------------------------------------------
# Argument plumbing: defaults live in _DEFAULTS so that --config can merge
# beneath explicitly-given flags.

_EXTRACTOR_DEFAULTS = {
    "fast_threshold": 20,
    "arc_length": 9,
    "nms_radius": 3,
    "border": 16,
    "max_keypoints": 2000,
    "pattern_seed": 42,
}

_DATASET_DEFAULTS = {"exclusions": None, "no_exclusions": False}

_RANSAC_DEFAULTS = {
    "ransac_threshold": 3.0,
    "ransac_iters": 5000,
    "ransac_confidence": 0.9999,
    "seed": 0,
}

_DEFAULTS = {
    "extract": {"dataset": None, "out": None, "jobs": None, **_EXTRACTOR_DEFAULTS, **_DATASET_DEFAULTS},
    "match": {
        "dataset": None,
        "features": None,
        "out": None,
        "ratio": 0.8,
        "jobs": None,
        **_DATASET_DEFAULTS,
    },
    "evaluate": {
        "dataset": None,
        "features": None,
        "matches": None,
        "builtin": False,
        "method": "ratio",
        "threshold": 0.8,
        "pooled_mma": False,
        "grid": "1:10:1",
        "out": None,
        "name": None,
        "jobs": None,
        **_EXTRACTOR_DEFAULTS,
        **_RANSAC_DEFAULTS,
        **_DATASET_DEFAULTS,
    },
    "sweep": {
        "dataset": None,
        "features": None,
        "matches": None,
        "builtin": False,
        "method": "ratio",
        "sweep": "0.1:1.0:0.1",
        "pooled_mma": False,
        "grid": "1:10:1",
        "out": None,
        "name": None,
        "jobs": None,
        **_EXTRACTOR_DEFAULTS,
        **_RANSAC_DEFAULTS,
        **_DATASET_DEFAULTS,
    },
    "report": {"input": None, "format": None, "out": None},
    "convert": {},
}


def _add_dataset_flags(p):
    p.add_argument("--dataset", default=None, help="dataset root directory")
    p.add_argument("--exclusions", default=None, help="exclusion list file (default: packaged list)")
    p.add_argument(
        "--no-exclusions",
        dest="no_exclusions",
        action="store_const",
        const=True,
        default=None,
        help="evaluate every sequence, ignoring exclusion lists",
    )


def _add_extractor_flags(p):
    p.add_argument("--fast-threshold", type=int, default=None, help="segment-test intensity threshold")
    p.add_argument("--arc-length", type=int, default=None, help="required contiguous circle pixels (1..16)")
    p.add_argument("--nms-radius", type=int, default=None, help="Chebyshev non-max suppression radius")
    p.add_argument("--border", type=int, default=None, help="detection border in px (>= 16)")
    p.add_argument("--max-keypoints", type=int, default=None, help="keep at most this many keypoints")
    p.add_argument("--pattern-seed", type=int, default=None, help="binary test pattern seed")


def _add_ransac_flags(p):
    p.add_argument("--ransac-threshold", type=float, default=None, help="inlier reprojection threshold px")
    p.add_argument("--ransac-iters", type=int, default=None, help="maximum RANSAC iterations")
    p.add_argument("--ransac-confidence", type=float, default=None, help="RANSAC confidence in (0,1)")
    p.add_argument("--seed", type=int, default=None, help="master seed (per-pair seeds derive from it)")


def _add_source_flags(p):
    p.add_argument("--features", default=None, help="directory of per-image feature files")
    p.add_argument("--matches", default=None, help="directory of per-pair scored-match files")
    p.add_argument(
        "--builtin",
        action="store_const",
        const=True,
        default=None,
        help="extract features with the built-in detector/descriptor",
    )
    p.add_argument("--method", default=None, choices=["ratio", "confidence", "dfm"], help="threshold semantics")
    p.add_argument("--name", default=None, help="method name used in reports")
    p.add_argument("--grid", default=None, help="pixel threshold grid spec start:stop:step")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument(
        "--pooled-mma",
        dest="pooled_mma",
        action="store_const",
        const=True,
        default=None,
        help="pool matching accuracy over all matches instead of averaging per pair",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="matchbench", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"matchbench {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write built-in extractor features for every image")
    _add_dataset_flags(p)
    _add_extractor_flags(p)
    p.add_argument("--out", default=None, help="output directory for .feat files")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
    p.add_argument("--config", default=None, help="JSON config file merged beneath flags")

    p = sub.add_parser("match", help="write scored-match files from feature files")
    _add_dataset_flags(p)
    p.add_argument("--features", default=None, help="directory of per-image feature files")
    p.add_argument("--out", default=None, help="output directory for .match files")
    p.add_argument("--ratio", type=float, default=None, help="bidirectional ratio-test threshold")
    p.add_argument("--jobs", type=int, default=None, help="worker processes")
    p.add_argument("--config", default=None)

    for cmd, help_text in (
        ("evaluate", "evaluate one threshold and write reports"),
        ("sweep", "sweep thresholds and write reports"),
    ):
        p = sub.add_parser(cmd, help=help_text)
        _add_dataset_flags(p)
        _add_source_flags(p)
        _add_extractor_flags(p)
        _add_ransac_flags(p)
        if cmd == "evaluate":
            p.add_argument("--threshold", type=float, default=None, help="single sweep value in [0.1, 1.0]")
        else:
            p.add_argument("--sweep", default=None, help="sweep spec start:stop:step in [0.1, 1.0]")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
        p.add_argument("--config", default=None, help="JSON config file merged beneath flags")

    p = sub.add_parser("report", help="re-emit reports from a saved sweep result")
    p.add_argument("--input", default=None, help="saved sweep result (.json or .csv)")
    p.add_argument(
        "--format",
        action="append",
        default=None,
        choices=list(REPORT_FORMATS),
        help="format to emit (repeatable; default: all)",
    )
    p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("convert", help="convert feature/match files between binary and JSON")
    p.add_argument("input", help="input file (.feat/.match/.json)")
    p.add_argument("output", help="output file (.feat/.match/.json)")

    return ap


def _merge_config(args: argparse.Namespace, command: str) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(_DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise MissingFile(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path}: {e}") from None
        unknown = set(doc) - set(merged)
        if unknown:
            raise ConfigError(f"config file {config_path}: unknown keys {sorted(unknown)}")
        merged.update(doc)
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"--{key.replace('_', '-')} is required")


def _exclusion_names(cfg: dict):
    if cfg["no_exclusions"]:
        return []
    if cfg["exclusions"]:
        return load_exclusion_list(cfg["exclusions"])
    return None  # packaged default list


def _fast_config(cfg: dict) -> FastConfig:
    fc = FastConfig(
        intensity_threshold=int(cfg["fast_threshold"]),
        arc_length=int(cfg["arc_length"]),
        nms_radius=int(cfg["nms_radius"]),
        border=int(cfg["border"]),
        max_keypoints=int(cfg["max_keypoints"]),
    )
    fc.validate()
    return fc


def _ransac_config(cfg: dict) -> RansacConfig:
    rc = RansacConfig(
        reproj_threshold=float(cfg["ransac_threshold"]),
        max_iters=int(cfg["ransac_iters"]),
        confidence=float(cfg["ransac_confidence"]),
        seed=int(cfg["seed"]),
    )
    rc.validate()
    return rc


def _jobs(cfg: dict) -> int:
    if cfg.get("jobs") is None:
        return os.cpu_count() or 1
    j = int(cfg["jobs"])
    if j < 1:
        raise ConfigError("--jobs must be >= 1")
    return j


def _echo_config(cfg: dict, command: str, out_dir: Path) -> None:
    doc = {"command": command}
    doc.update({k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(cfg.items())})
    (out_dir / "run_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands


def _cmd_extract(cfg: dict) -> int:
    _require(cfg, "dataset", "out")
    dataset = load_dataset(cfg["dataset"], _exclusion_names(cfg))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    features = extract_dataset_features(
        dataset, _fast_config(cfg), int(cfg["pattern_seed"]), jobs=_jobs(cfg)
    )
    for image_id in sorted(features):
        save_features(features[image_id], out_dir / f"{image_id}.feat")
        print(f"extracted {image_id}: {len(features[image_id])} keypoints")
    _echo_config(cfg, "extract", out_dir)
    return 0


def _cmd_match(cfg: dict) -> int:
    _require(cfg, "dataset", "features", "out")
    ratio = float(cfg["ratio"])
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"--ratio must lie in (0, 1], got {ratio}")
    dataset = load_dataset(cfg["dataset"], _exclusion_names(cfg))
    src = FeatureDirSource(Path(cfg["features"]))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for seq in sorted(dataset.sequences, key=lambda s: s.name):
        fa = src(f"{seq.name}_1")
        for k in range(2, 2 + seq.n_pairs):
            fb = src(f"{seq.name}_{k}")
            cand = mutual_candidates(fa, fb)
            keep = np.maximum(cand.ratio_a, cand.ratio_b) <= ratio
            conf = np.clip(1.0 - np.maximum(cand.ratio_a, cand.ratio_b)[keep], 0.0, 1.0)
            entries = np.column_stack(
                [
                    fa.keypoints[cand.index_a[keep], 0:2],
                    fb.keypoints[cand.index_b[keep], 0:2],
                    conf.astype(np.float32),
                ]
            )
            m = ScoredMatchFile(f"{seq.name}_1", f"{seq.name}_{k}", entries)
            save_scored_matches(m, out_dir / f"{seq.name}_1_{k}.match")
            print(f"matched {seq.name}_1_{k}: {len(m)} matches")
    _echo_config(cfg, "match", out_dir)
    return 0


def _source_and_kind(cfg: dict, dataset, sweep_values, jobs: int):
    chosen = [k for k in ("features", "matches", "builtin") if cfg.get(k)]
    if len(chosen) != 1:
        raise ConfigError("exactly one of --features, --matches, --builtin is required")
    mode = chosen[0]
    kind = MethodKind(cfg["method"])
    if kind is MethodKind.RATIO_TEST and mode == "matches":
        raise ConfigError("--method ratio needs --features or --builtin")
    if kind in (MethodKind.CONFIDENCE_FILTER, MethodKind.DFM_SCHEDULE) and mode != "matches":
        raise ConfigError(f"--method {kind.value} needs --matches")
    if mode == "builtin":
        feats = extract_dataset_features(
            dataset, _fast_config(cfg), int(cfg["pattern_seed"]), jobs=jobs
        )
        return in_memory_features(feats), kind, cfg.get("name") or "orblite"
    if mode == "features":
        return (
            FeatureDirSource(Path(cfg["features"])),
            kind,
            cfg.get("name") or Path(cfg["features"]).name,
        )
    return (
        MatchDirSource(Path(cfg["matches"]), per_sweep_value=kind is MethodKind.DFM_SCHEDULE),
        kind,
        cfg.get("name") or Path(cfg["matches"]).name,
    )


def _run_evaluation(cfg: dict, command: str, sweep_values) -> int:
    _require(cfg, "dataset", "out")
    dataset = load_dataset(cfg["dataset"], _exclusion_names(cfg))
    jobs = _jobs(cfg)
    source, kind, name = _source_and_kind(cfg, dataset, sweep_values, jobs)
    grid = parse_span(cfg["grid"], "grid")
    result = run_sweep(
        dataset,
        source,
        kind,
        sweep_values=sweep_values,
        ransac_cfg=_ransac_config(cfg),
        grid=grid,
        jobs=jobs,
        method_name=name,
        pooled_mma=bool(cfg["pooled_mma"]),
    )
    out_dir = Path(cfg["out"])
    emit_report(result, REPORT_FORMATS, out_dir)
    _echo_config(cfg, command, out_dir)
    sys.stdout.write(format_table(result))
    return 0


def _cmd_evaluate(cfg: dict) -> int:
    t = float(cfg["threshold"])
    if not 0.1 - 1e-9 <= t <= 1.0 + 1e-9:
        raise ConfigError(f"--threshold must lie in [0.1, 1.0], got {t}")
    return _run_evaluation(cfg, "evaluate", [t])


def _cmd_sweep(cfg: dict) -> int:
    values = parse_span(cfg["sweep"], "sweep")
    if values[0] < 0.1 - 1e-9 or values[-1] > 1.0 + 1e-9:
        raise ConfigError(f"sweep values must lie within [0.1, 1.0]: {values}")
    return _run_evaluation(cfg, "sweep", values)


def _cmd_report(cfg: dict) -> int:
    _require(cfg, "input", "out")
    path = Path(cfg["input"])
    if not path.exists():
        raise MissingFile(f"sweep result not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        result = sweep_from_json_doc(json.loads(text))
    elif path.suffix == ".csv":
        result = sweep_from_csv_text(text)
    else:
        raise ConfigError(f"--input must be .json or .csv, got {path.suffix!r}")
    formats = cfg.get("format") or list(REPORT_FORMATS)
    emit_report(result, formats, Path(cfg["out"]))
    if "table" in formats:
        sys.stdout.write(format_table(result))
    return 0


def _sniff_kind(path: Path) -> str:
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if "keypoints" in doc:
            return "features"
        if "entries" in doc:
            return "matches"
        raise ConfigError(f"{path}: JSON is neither a feature nor a match document")
    head = path.open("rb").read(8)
    if head[:4] == b"FEAT":
        return "features"
    if head[:4] == b"MTCH":
        return "matches"
    raise BadMagic(f"{path}: unknown magic {head!r}")


def _cmd_convert(args: argparse.Namespace) -> int:
    src = Path(args.input)
    dst = Path(args.output)
    if not src.exists():
        raise MissingFile(f"input file not found: {src}")
    kind = _sniff_kind(src)
    if kind == "features":
        if dst.suffix not in (".feat", ".json"):
            raise ConfigError(f"feature output must be .feat or .json, got {dst.suffix!r}")
        save_features(load_features(src), dst)
    else:
        if dst.suffix not in (".match", ".json"):
            raise ConfigError(f"match output must be .match or .json, got {dst.suffix!r}")
        save_scored_matches(load_scored_matches(src), dst)
    print(f"converted {kind}: {src} -> {dst}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convert":
            return _cmd_convert(args)
        cfg = _merge_config(args, args.command)
        if args.command == "extract":
            return _cmd_extract(cfg)
        if args.command == "match":
            return _cmd_match(cfg)
        if args.command == "evaluate":
            return _cmd_evaluate(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        if args.command == "report":
            return _cmd_report(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (MatchbenchError, OSError) as e:
        print(f"matchbench {args.command}: error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    raise SystemExit(main())
