"""Per-pair metrics, dataset aggregation, threshold sweeps and reports.

The evaluation engine computes, for every image pair and every sweep
value, a matching-accuracy vector over the pixel-threshold grid (mma) and
a robust homography estimate whose corner-transfer error against ground
truth yields a correctness flag per grid entry (hea). Per-pair results
aggregate into overall / illumination / viewpoint curves; the area under
a curve is its mean over the grid. Reports are emitted as a text table,
a lossless CSV, a lossless JSON document, and plot-ready CSV series.
"""
from __future__ import annotations

import concurrent.futures
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, GrayImage, Subset, image_size
from .errors import EmptyResults, MissingFeatures, NoModel, OutOfRange, TooFewMatches
from .features import FeatureSet, ScoredMatchFile, load_features, load_scored_matches
from .geometry import (
    Homography,
    RansacConfig,
    corner_transfer_error,
    ransac_homography,
    reprojection_errors,
)
from .matching import MethodKind, mutual_candidates
from .rng import derive_pair_seed

DEFAULT_GRID = tuple(float(e) for e in range(1, 11))
DEFAULT_SWEEP_VALUES = tuple(round(0.1 * k, 1) for k in range(1, 11))
METRICS = ("mma", "hea")
SCOPES = ("overall", "illumination", "viewpoint")
TABLE_EPS = (1.0, 3.0, 5.0, 10.0)

CSV_COLUMNS = (
    "method",
    "sweep_value",
    "metric",
    "subset",
    "eps",
    "accuracy",
    "mean_matches",
    "mean_features",
)


@dataclass(frozen=True)
class Curve:
    metric: str  # "mma" | "hea"
    scope: str  # "overall" | "illumination" | "viewpoint"
    values: tuple[float, ...]  # one accuracy in [0, 1] per grid entry


@dataclass(frozen=True)
class PairResult:
    pair_id: str
    subset: Subset
    n_matches: int
    mma: tuple[float, ...]
    hea_error: float  # corner-transfer error in px, +inf on failure

    def hea_correct(self, grid) -> tuple[bool, ...]:
        return tuple(self.hea_error < eps for eps in grid)


@dataclass(frozen=True)
class SweepEntry:
    sweep_value: float
    curves: tuple[Curve, ...]  # canonical order: metric-major, scope-minor
    mean_matches: float
    mean_features: float | None

    def curve(self, metric: str, scope: str = "overall") -> Curve:
        for c in self.curves:
            if c.metric == metric and c.scope == scope:
                return c
        raise KeyError((metric, scope))


@dataclass(frozen=True)
class SweepResult:
    method: str
    grid: tuple[float, ...]
    entries: tuple[SweepEntry, ...]

    @property
    def sweep_values(self) -> tuple[float, ...]:
        return tuple(e.sweep_value for e in self.entries)

    def entry(self, sweep_value: float) -> SweepEntry:
        for e in self.entries:
            if e.sweep_value == sweep_value:
                return e
        raise KeyError(sweep_value)


# ---------------------------------------------------------------------------
# Per-pair metrics


def _coords(correspondences) -> np.ndarray:
    arr = np.asarray(correspondences, dtype=np.float64)
    return arr.reshape(-1, 4)


def mma_for_pair(correspondences, gt: Homography, grid=DEFAULT_GRID) -> tuple[float, ...]:
    """Fraction of matches whose ground-truth reprojection error is within
    each grid threshold; a pair with zero matches scores 0 everywhere."""
    coords = _coords(correspondences)
    if coords.shape[0] == 0:
        return (0.0,) * len(grid)
    errs = reprojection_errors(gt, coords[:, :2], coords[:, 2:])
    return tuple(float((errs <= eps).mean()) for eps in grid)


def hea_for_pair(
    correspondences,
    gt: Homography,
    size: tuple[int, int],
    ransac_cfg: RansacConfig,
    grid=DEFAULT_GRID,
) -> tuple[float, tuple[bool, ...]]:
    """Corner-transfer error of the RANSAC estimate vs ground truth, plus
    the strict-inequality correctness flag per grid entry. Estimation
    failure (including < 4 matches) is the value +inf, not an error."""
    coords = _coords(correspondences)
    if coords.shape[0] < 4:
        err = math.inf
    else:
        try:
            res = ransac_homography(coords[:, :2], coords[:, 2:], ransac_cfg)
            err = corner_transfer_error(res.homography, gt, size)
        except (TooFewMatches, NoModel):
            err = math.inf
    return err, tuple(err < eps for eps in grid)


# ---------------------------------------------------------------------------
# Aggregation


def _scope_results(results, scope: str):
    if scope == "overall":
        return results
    want = Subset.ILLUMINATION if scope == "illumination" else Subset.VIEWPOINT
    return [r for r in results if r.subset is want]


def aggregate(results, grid=DEFAULT_GRID, pooled_mma: bool = False) -> tuple[Curve, ...]:
    """Six curves (mma/hea x overall/illumination/viewpoint).

    The mma curve is the unweighted mean of per-pair accuracy vectors by
    default; ``pooled_mma`` switches to pooling over all matches instead
    (per-pair accuracies weighted by match count), kept behind a flag for
    study. The hea curve is the fraction of pairs whose estimate is
    correct at each grid entry. A scope with no pairs yields zeros.
    """
    results = list(results)
    if not results:
        raise EmptyResults("aggregate called with no pair results")
    curves = []
    for metric in METRICS:
        for scope in SCOPES:
            rs = _scope_results(results, scope)
            if not rs:
                values = (0.0,) * len(grid)
            elif metric == "mma" and pooled_mma:
                total = float(sum(r.n_matches for r in rs))
                values = tuple(
                    float(sum(r.mma[i] * r.n_matches for r in rs)) / total if total else 0.0
                    for i in range(len(grid))
                )
            elif metric == "mma":
                values = tuple(
                    float(np.mean([r.mma[i] for r in rs])) for i in range(len(grid))
                )
            else:
                values = tuple(
                    float(np.mean([r.hea_error < eps for r in rs])) for eps in grid
                )
            assert all(
                b >= a - 1e-15 for a, b in zip(values, values[1:])
            ), f"{metric}/{scope} curve not non-decreasing: {values}"
            curves.append(Curve(metric, scope, values))
    return tuple(curves)


def auc(curve: Curve) -> float:
    """Mean accuracy over the grid (normalized area under the curve)."""
    return float(np.mean(curve.values))


def best_threshold(
    s: SweepResult, metric: str = "mma", eps: float | None = None, scope: str = "overall"
) -> tuple[float, float]:
    """Sweep value maximizing accuracy at ``eps`` (or AUC when eps is None);
    ties resolve toward the smaller threshold."""
    if not s.entries:
        raise EmptyResults("empty sweep result")
    best_t, best_v = None, -math.inf
    for e in s.entries:
        c = e.curve(metric, scope)
        v = auc(c) if eps is None else c.values[list(s.grid).index(eps)]
        if v > best_v:
            best_t, best_v = e.sweep_value, v
    return best_t, best_v


# ---------------------------------------------------------------------------
# Input sources


def _load_by_ext(base: Path, stem: str, exts, loader, what: str):
    for ext in exts:
        p = base / f"{stem}{ext}"
        if p.exists():
            return loader(p)
    raise MissingFeatures(f"no {what} file for {stem!r} under {base}")


@dataclass(frozen=True)
class FeatureDirSource:
    """Feature files named <image_id>.feat (or .json) in one directory."""

    root: Path

    def __call__(self, image_id: str) -> FeatureSet:
        return _load_by_ext(Path(self.root), image_id, (".feat", ".json"), load_features, "feature")


@dataclass(frozen=True)
class MatchDirSource:
    """Scored-match files named <pair_id>.match (or .json).

    With ``per_sweep_value`` the directory contains one subdirectory per
    formatted sweep value (str(t) with trailing-zero trim, e.g. "0.5"),
    which is how layered-schedule methods deliver per-threshold outputs.
    """

    root: Path
    per_sweep_value: bool = False

    def __call__(self, pair_id: str, sweep_value: float | None = None) -> ScoredMatchFile:
        base = Path(self.root)
        if self.per_sweep_value:
            if sweep_value is None:
                raise MissingFeatures("per-sweep-value source needs a sweep value")
            base = base / format_sweep_value(sweep_value)
        return _load_by_ext(base, pair_id, (".match", ".json"), load_scored_matches, "match")


def format_sweep_value(t: float) -> str:
    return f"{t:g}"


def in_memory_features(mapping: dict) -> "FeatureSourceFn":
    def source(image_id: str) -> FeatureSet:
        try:
            return mapping[image_id]
        except KeyError:
            raise MissingFeatures(f"no features for image {image_id!r}") from None

    return source


def in_memory_matches(mapping: dict) -> "MatchSourceFn":
    """mapping: pair_id -> ScoredMatchFile, or (pair_id, sweep_value) -> file."""

    def source(pair_id: str, sweep_value: float | None = None) -> ScoredMatchFile:
        if pair_id in mapping:
            return mapping[pair_id]
        key = (pair_id, sweep_value)
        if key in mapping:
            return mapping[key]
        raise MissingFeatures(f"no matches for pair {pair_id!r}")

    return source


# ---------------------------------------------------------------------------
# Sweep engine


def _validate_sweep_values(sweep_values) -> tuple[float, ...]:
    vals = tuple(float(t) for t in sweep_values)
    if not vals:
        raise OutOfRange("sweep value list is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise OutOfRange(f"sweep values must be strictly ascending: {vals}")
    if vals[0] < 0.1 - 1e-9 or vals[-1] > 1.0 + 1e-9:
        raise OutOfRange(f"sweep values must lie within [0.1, 1.0]: {vals}")
    return vals


def _validate_grid(grid) -> tuple[float, ...]:
    g = tuple(float(e) for e in grid)
    if not g or any(e <= 0 for e in g) or any(b <= a for a, b in zip(g, g[1:])):
        raise OutOfRange(f"grid must be strictly increasing and positive: {g}")
    return g


@dataclass(frozen=True)
class _PairSpec:
    ordinal: int
    pair_id: str
    sequence_name: str
    target_index: int
    subset: Subset
    gt: np.ndarray  # (3, 3)
    ref_size: tuple[int, int]


def _pair_specs(dataset: Dataset, ref_sizes: dict[str, tuple[int, int]]) -> list[_PairSpec]:
    specs = []
    ordinal = 0
    for seq in sorted(dataset.sequences, key=lambda s: s.name):
        size = ref_sizes[seq.name]
        for i, gt in enumerate(seq.gt_homographies):
            k = i + 2
            specs.append(
                _PairSpec(ordinal, f"{seq.name}_1_{k}", seq.name, k, seq.subset, gt.matrix, size)
            )
            ordinal += 1
    return specs


def _ref_sizes(dataset: Dataset) -> dict[str, tuple[int, int]]:
    sizes = {}
    for seq in dataset.sequences:
        if seq.images is not None:
            sizes[seq.name] = seq.images[0].size
        else:
            sizes[seq.name] = image_size(seq.image_paths[0])
    return sizes


def _evaluate_pair_worker(payload: dict):
    """Evaluate one pair at every sweep value. Top-level for pickling."""
    grid = payload["grid"]
    sweep_values = payload["sweep_values"]
    gt = Homography.from_matrix(payload["gt"])
    cfg = RansacConfig(
        reproj_threshold=payload["reproj_threshold"],
        max_iters=payload["max_iters"],
        confidence=payload["confidence"],
        seed=payload["pair_seed"],
    )
    size = payload["ref_size"]

    if payload["mode"] == "features":
        fa: FeatureSet = payload["features_a"]
        fb: FeatureSet = payload["features_b"]
        cand = mutual_candidates(fa, fb)
        coords_all = np.column_stack(
            [
                fa.keypoints[cand.index_a, 0:2].astype(np.float64),
                fb.keypoints[cand.index_b, 0:2].astype(np.float64),
            ]
        )
        rmax = np.maximum(cand.ratio_a, cand.ratio_b)
        per_value = [coords_all[rmax <= t] for t in sweep_values]
    else:
        per_value = payload["per_value_coords"]

    out = []
    for coords in per_value:
        mma = mma_for_pair(coords, gt, grid)
        err, _ = hea_for_pair(coords, gt, size, cfg, grid)
        out.append((int(coords.shape[0]), mma, err))
    return payload["ordinal"], out


def _run_tasks(payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [_evaluate_pair_worker(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate_pair_worker, payloads))


def run_sweep(
    dataset: Dataset,
    source,
    kind: MethodKind,
    sweep_values=DEFAULT_SWEEP_VALUES,
    ransac_cfg: RansacConfig | None = None,
    grid=DEFAULT_GRID,
    jobs: int = 1,
    method_name: str = "method",
    pooled_mma: bool = False,
) -> SweepResult:
    """Evaluate every pair at every sweep value and aggregate.

    ``source`` is called as source(image_id) for ratio-test methods (one
    FeatureSet per image) and as source(pair_id, sweep_value) otherwise
    (one ScoredMatchFile per pair, per sweep value for layered schedules).
    Deterministic given the master seed in ``ransac_cfg``: each pair uses
    seed XOR pair_ordinal, and aggregation runs in canonical pair order
    whatever the worker count.
    """
    sweep_vals = _validate_sweep_values(sweep_values)
    grid = _validate_grid(grid)
    cfg = ransac_cfg or RansacConfig()
    cfg.validate()

    ref_sizes = _ref_sizes(dataset)
    specs = _pair_specs(dataset, ref_sizes)
    if not specs:
        raise EmptyResults("dataset has no pairs")

    base = {
        "grid": grid,
        "sweep_values": sweep_vals,
        "reproj_threshold": cfg.reproj_threshold,
        "max_iters": cfg.max_iters,
        "confidence": cfg.confidence,
    }

    mean_features: float | None = None
    payloads = []
    if kind is MethodKind.RATIO_TEST:
        feature_cache: dict[str, FeatureSet] = {}

        def features_for(image_id: str) -> FeatureSet:
            if image_id not in feature_cache:
                feature_cache[image_id] = source(image_id)
            return feature_cache[image_id]

        for spec in specs:
            try:
                fa = features_for(f"{spec.sequence_name}_1")
                fb = features_for(f"{spec.sequence_name}_{spec.target_index}")
            except MissingFeatures as e:
                raise MissingFeatures(f"pair {spec.pair_id}: {e}") from e
            payloads.append(
                dict(
                    base,
                    mode="features",
                    ordinal=spec.ordinal,
                    gt=spec.gt,
                    ref_size=spec.ref_size,
                    pair_seed=derive_pair_seed(cfg.seed, spec.ordinal),
                    features_a=fa,
                    features_b=fb,
                )
            )
        mean_features = float(np.mean([len(f) for f in feature_cache.values()]))
    else:
        from .matching import filter_scored_matches

        per_value = kind is MethodKind.DFM_SCHEDULE
        for spec in specs:
            try:
                if per_value:
                    files = [source(spec.pair_id, t) for t in sweep_vals]
                    coords = [f.entries[:, :4].astype(np.float64) for f in files]
                else:
                    m = source(spec.pair_id, None)
                    coords = [filter_scored_matches(m, t) for t in sweep_vals]
            except MissingFeatures as e:
                raise MissingFeatures(f"pair {spec.pair_id}: {e}") from e
            payloads.append(
                dict(
                    base,
                    mode="matches",
                    ordinal=spec.ordinal,
                    gt=spec.gt,
                    ref_size=spec.ref_size,
                    pair_seed=derive_pair_seed(cfg.seed, spec.ordinal),
                    per_value_coords=coords,
                )
            )

    raw = dict(_run_tasks(payloads, jobs))

    entries = []
    for ti, t in enumerate(sweep_vals):
        results = []
        for spec in specs:
            n_matches, mma, err = raw[spec.ordinal][ti]
            results.append(PairResult(spec.pair_id, spec.subset, n_matches, mma, err))
        curves = aggregate(results, grid, pooled_mma=pooled_mma)
        entries.append(
            SweepEntry(
                sweep_value=t,
                curves=curves,
                mean_matches=float(np.mean([r.n_matches for r in results])),
                mean_features=mean_features,
            )
        )
    return SweepResult(method_name, grid, tuple(entries))


# ---------------------------------------------------------------------------
# Report emission


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def sweep_to_csv_text(s: SweepResult) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for e in s.entries:
        for c in e.curves:
            for eps, accuracy in zip(s.grid, c.values):
                lines.append(
                    ",".join(
                        (
                            s.method,
                            _fmt(e.sweep_value),
                            c.metric,
                            c.scope,
                            _fmt(eps),
                            _fmt(accuracy),
                            _fmt(e.mean_matches),
                            _fmt(e.mean_features),
                        )
                    )
                )
    return "\n".join(lines) + "\n"


def sweep_from_csv_text(text: str) -> SweepResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != ",".join(CSV_COLUMNS):
        raise OutOfRange("not a sweep CSV: bad header")
    method = None
    grid_seen: list[float] = []
    data: dict[float, dict] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        method = parts[0]
        t = float(parts[1])
        metric, scope = parts[2], parts[3]
        eps, accuracy = float(parts[4]), float(parts[5])
        entry = data.setdefault(
            t,
            {
                "mean_matches": float(parts[6]),
                "mean_features": None if parts[7] == "" else float(parts[7]),
                "curves": {},
            },
        )
        entry["curves"].setdefault((metric, scope), []).append(accuracy)
        if eps not in grid_seen:
            grid_seen.append(eps)
    grid = tuple(sorted(grid_seen))
    entries = []
    for t in sorted(data):
        curves = tuple(
            Curve(m, sc, tuple(data[t]["curves"][(m, sc)]))
            for m in METRICS
            for sc in SCOPES
            if (m, sc) in data[t]["curves"]
        )
        entries.append(
            SweepEntry(t, curves, data[t]["mean_matches"], data[t]["mean_features"])
        )
    return SweepResult(method, grid, tuple(entries))


def sweep_to_json_doc(s: SweepResult) -> dict:
    return {
        "method": s.method,
        "grid": list(s.grid),
        "entries": [
            {
                "sweep_value": e.sweep_value,
                "mean_matches": e.mean_matches,
                "mean_features": e.mean_features,
                "curves": [
                    {"metric": c.metric, "scope": c.scope, "values": list(c.values)}
                    for c in e.curves
                ],
            }
            for e in s.entries
        ],
    }


def sweep_to_json_text(s: SweepResult) -> str:
    return json.dumps(sweep_to_json_doc(s), sort_keys=True, indent=2) + "\n"


def sweep_from_json_doc(doc: dict) -> SweepResult:
    entries = tuple(
        SweepEntry(
            sweep_value=float(e["sweep_value"]),
            curves=tuple(
                Curve(c["metric"], c["scope"], tuple(float(v) for v in c["values"]))
                for c in e["curves"]
            ),
            mean_matches=float(e["mean_matches"]),
            mean_features=None if e["mean_features"] is None else float(e["mean_features"]),
        )
        for e in doc["entries"]
    )
    return SweepResult(doc["method"], tuple(float(g) for g in doc["grid"]), entries)


def format_table(s: SweepResult) -> str:
    """Best-accuracy table: per metric, the best value and its threshold at
    eps in {1, 3, 5, 10} px, then the best AUC with its threshold and the
    mean match count at that threshold."""
    eps_cols = [e for e in TABLE_EPS if e in s.grid] or list(s.grid)
    feat = s.entries[0].mean_features if s.entries else None
    lines = [
        f"method: {s.method}",
        "mean features per image: " + (f"{feat:.1f}" if feat is not None else "-"),
        "",
    ]
    header = ["metric"] + [f"best@{eps:g}px (thr)" for eps in eps_cols] + [
        "best AUC% (thr, matches)"
    ]
    rows = [header]
    for metric in METRICS:
        row = [metric.upper()]
        for eps in eps_cols:
            t, v = best_threshold(s, metric, eps=eps)
            row.append(f"{v:.2f} ({t:g})")
        t, v = best_threshold(s, metric, eps=None)
        matches = s.entry(t).mean_matches
        row.append(f"{100.0 * v:.1f} ({t:g}, {matches:.1f})")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def plot_threshold_series_csv(s: SweepResult) -> str:
    """Accuracy vs sweep value, one row per (metric, eps, sweep value),
    overall scope: the data behind per-pixel-threshold curve plots."""
    lines = ["method,metric,eps,sweep_value,accuracy"]
    for metric in METRICS:
        for gi, eps in enumerate(s.grid):
            for e in s.entries:
                acc = e.curve(metric, "overall").values[gi]
                lines.append(
                    f"{s.method},{metric},{_fmt(eps)},{_fmt(e.sweep_value)},{_fmt(acc)}"
                )
    return "\n".join(lines) + "\n"


def plot_best_curves_csv(s: SweepResult) -> str:
    """Accuracy vs eps at each metric's AUC-optimal threshold; both metric
    curves are emitted at each optimizing threshold."""
    lines = ["method,optimized_metric,threshold,curve_metric,eps,accuracy"]
    for opt_metric in METRICS:
        t, _ = best_threshold(s, opt_metric, eps=None)
        entry = s.entry(t)
        for curve_metric in METRICS:
            values = entry.curve(curve_metric, "overall").values
            for eps, acc in zip(s.grid, values):
                lines.append(
                    f"{s.method},{opt_metric},{_fmt(t)},{curve_metric},{_fmt(eps)},{_fmt(acc)}"
                )
    return "\n".join(lines) + "\n"


REPORT_FORMATS = ("table", "csv", "json", "plotdata")


def emit_report(s: SweepResult, formats, out_dir) -> dict[str, list[Path]]:
    """Write the requested report formats; returns format -> written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in s.method) or "sweep"
    written: dict[str, list[Path]] = {}
    for fmt in formats:
        if fmt == "table":
            p = out_dir / f"{stem}_table.txt"
            p.write_text(format_table(s))
            written[fmt] = [p]
        elif fmt == "csv":
            p = out_dir / f"{stem}_sweep.csv"
            p.write_text(sweep_to_csv_text(s))
            written[fmt] = [p]
        elif fmt == "json":
            p = out_dir / f"{stem}_sweep.json"
            p.write_text(sweep_to_json_text(s))
            written[fmt] = [p]
        elif fmt == "plotdata":
            p1 = out_dir / f"{stem}_threshold_series.csv"
            p1.write_text(plot_threshold_series_csv(s))
            p2 = out_dir / f"{stem}_best_curves.csv"
            p2.write_text(plot_best_curves_csv(s))
            written[fmt] = [p1, p2]
        else:
            raise OutOfRange(f"unknown report format {fmt!r}")
    return written


# ---------------------------------------------------------------------------
# Built-in extraction over a dataset


def _extract_image_worker(args):
    image_id, pixels, cfg, pattern_seed = args
    from .extractor import extract

    return image_id, extract(GrayImage(pixels), cfg, pattern_seed, image_id=image_id)


def extract_dataset_features(
    dataset: Dataset, cfg=None, pattern_seed: int = 42, jobs: int = 1
) -> dict[str, FeatureSet]:
    """Run the built-in extractor on every image; keys are '<seq>_<k>'."""
    from .dataset import _sequence_images
    from .extractor import FastConfig

    cfg = cfg or FastConfig()
    tasks = []
    for seq in sorted(dataset.sequences, key=lambda s: s.name):
        for k, img in enumerate(_sequence_images(seq), start=1):
            tasks.append((f"{seq.name}_{k}", img.pixels, cfg, pattern_seed))
    if jobs <= 1 or len(tasks) <= 1:
        done = [_extract_image_worker(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_extract_image_worker, tasks))
    return dict(done)
