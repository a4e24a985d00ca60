"""Homography-annotated image-sequence datasets.

Loads HPatches-style directory trees (``<root>/<seq>/{1..6}.(ppm|png|jpg)``
plus ``H_1_2 .. H_1_6`` ASCII homography files), applies a versioned
exclusion list, enumerates evaluation pairs (image 1 against images 2..6),
and generates synthetic warped sequences with exact ground truth for tests
and demos.

Pixel convention: origin at the center of the top-left pixel, x rightward,
y downward, 0-based. Color images are converted to 8-bit gray with
integer-rounded Rec.601 luma.
"""
from __future__ import annotations

import enum
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    DegenerateConfiguration,
    DegenerateWarp,
    EmptyDataset,
    InvariantViolation,
    MissingFile,
    ParseError,
)
from .geometry import Homography, _any_three_collinear, dlt_homography
from .rng import Lcg

IMAGE_EXTENSIONS = (".ppm", ".png", ".jpg")
IMAGES_PER_SEQUENCE = 6
TARGET_INDICES = tuple(range(2, IMAGES_PER_SEQUENCE + 1))


class Subset(enum.Enum):
    ILLUMINATION = "illumination"
    VIEWPOINT = "viewpoint"


def subset_for_name(name: str) -> Subset:
    if name.startswith("i_"):
        return Subset.ILLUMINATION
    if name.startswith("v_"):
        return Subset.VIEWPOINT
    raise ParseError(f"sequence name {name!r} must start with 'i_' or 'v_'")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 8-bit grayscale raster."""

    pixels: np.ndarray  # (height, width) uint8, read-only

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.uint8))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvariantViolation("gray image must be a 2-d array with positive size")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class SequenceRecord:
    """One sequence: a reference image, its targets and exact homographies.

    Disk-backed records carry ``image_paths``; synthetic records carry the
    decoded ``images`` directly. Ground-truth homography k maps reference
    pixel coordinates to target image (k+2) pixel coordinates.
    """

    name: str
    subset: Subset
    image_paths: tuple[Path, ...] = ()
    gt_homographies: tuple[Homography, ...] = ()
    images: tuple[GrayImage, ...] | None = None

    def __post_init__(self):
        n_img = len(self.images) if self.images is not None else len(self.image_paths)
        if n_img != len(self.gt_homographies) + 1:
            raise InvariantViolation(
                f"sequence {self.name}: {n_img} images need "
                f"{n_img - 1} homographies, got {len(self.gt_homographies)}"
            )

    @property
    def n_pairs(self) -> int:
        return len(self.gt_homographies)


@dataclass(frozen=True)
class ExcludedSequence:
    name: str
    reason: str


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[SequenceRecord, ...]
    excluded: tuple[ExcludedSequence, ...] = ()

    def __len__(self) -> int:
        return len(self.sequences)

    def subset_counts(self) -> dict[Subset, int]:
        counts = {Subset.ILLUMINATION: 0, Subset.VIEWPOINT: 0}
        for s in self.sequences:
            counts[s.subset] += 1
        return counts


@dataclass(frozen=True)
class ImagePair:
    """One evaluation pair: image 1 of a sequence against image k (2..6)."""

    sequence_name: str
    target_index: int
    ref_image: GrayImage
    target_image: GrayImage
    gt: Homography
    subset: Subset
    ref_index: int = 1

    @property
    def pair_id(self) -> str:
        return f"{self.sequence_name}_1_{self.target_index}"


# ---------------------------------------------------------------------------
# Image decoding


def _rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    # Integer Rec.601 with half-up rounding: (299R + 587G + 114B + 500) // 1000
    r = rgb[:, :, 0].astype(np.uint32)
    g = rgb[:, :, 1].astype(np.uint32)
    b = rgb[:, :, 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def load_gray_image(path) -> GrayImage:
    """Decode an image file to 8-bit gray."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.uint8)
            else:
                arr = _rgb_to_luma(np.asarray(img.convert("RGB"), dtype=np.uint8))
    except FileNotFoundError as e:
        raise MissingFile(f"image file not found: {path}") from e
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DecodeError(f"cannot decode image {path}: {e}") from e
    return GrayImage(arr)


def image_size(path) -> tuple[int, int]:
    """(width, height) from the file header without a full decode."""
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError as e:
        raise MissingFile(f"image file not found: {path}") from e
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"cannot decode image {path}: {e}") from e


# ---------------------------------------------------------------------------
# Exclusion lists


def load_exclusion_list(path) -> list[str]:
    """One sequence name per line; '#' starts a comment."""
    names = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


def default_exclusions() -> list[str]:
    ref = importlib.resources.files("matchbench.data") / "default_exclusions.txt"
    names = []
    for line in ref.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


# ---------------------------------------------------------------------------
# Loading


def _parse_homography_file(path: Path) -> Homography:
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise MissingFile(f"homography file not found: {path}") from e
    tokens = text.split()
    if len(tokens) != 9:
        raise ParseError(f"{path}: expected 9 numbers, found {len(tokens)}")
    try:
        values = [float(t) for t in tokens]
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric token ({e})") from e
    m = np.array(values, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise ParseError(f"{path}: homography entries must be finite")
    if abs(m[2, 2]) < 1e-12:
        raise ParseError(f"{path}: cannot renormalize, |h33| < 1e-12")
    try:
        return Homography.from_matrix(m)
    except InvariantViolation as e:
        raise ParseError(f"{path}: {e}") from e


def _find_image(seq_dir: Path, index: int) -> Path:
    for ext in IMAGE_EXTENSIONS:
        candidate = seq_dir / f"{index}{ext}"
        if candidate.exists():
            return candidate
    raise MissingFile(f"sequence {seq_dir.name}: no image {index}.(ppm|png|jpg)")


def load_dataset(root, exclusions: list[str] | None = None) -> Dataset:
    """Load all non-excluded sequences under ``root``, sorted by name.

    ``exclusions`` is a list of sequence names; None selects the packaged
    default list (pass [] to disable exclusions entirely). Images are
    decoded lazily by :func:`iterate_pairs`, not here.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"dataset root does not exist: {root}")
    if exclusions is None:
        exclusions = default_exclusions()
    excluded_names = set(exclusions)

    sequences = []
    excluded = []
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        name = seq_dir.name
        if not (name.startswith("i_") or name.startswith("v_")):
            continue
        if name in excluded_names:
            excluded.append(ExcludedSequence(name, "listed in exclusion list"))
            continue
        paths = tuple(_find_image(seq_dir, k) for k in range(1, IMAGES_PER_SEQUENCE + 1))
        gts = tuple(_parse_homography_file(seq_dir / f"H_1_{k}") for k in TARGET_INDICES)
        sequences.append(SequenceRecord(name, subset_for_name(name), paths, gts))

    if not sequences:
        raise EmptyDataset(f"no sequences found under {root}")
    return Dataset(tuple(sequences), tuple(excluded))


def _sequence_images(seq: SequenceRecord) -> tuple[GrayImage, ...]:
    if seq.images is not None:
        return seq.images
    return tuple(load_gray_image(p) for p in seq.image_paths)


def iterate_pairs(dataset: Dataset) -> list[ImagePair]:
    """All evaluation pairs, ordered by (sequence name, target index)."""
    pairs = []
    for seq in sorted(dataset.sequences, key=lambda s: s.name):
        images = _sequence_images(seq)
        ref = images[0]
        for i, gt in enumerate(seq.gt_homographies):
            pairs.append(
                ImagePair(
                    sequence_name=seq.name,
                    target_index=i + 2,
                    ref_image=ref,
                    target_image=images[i + 1],
                    gt=gt,
                    subset=seq.subset,
                )
            )
    return pairs


# ---------------------------------------------------------------------------
# Synthetic sequences


def warp_image(base: GrayImage, h: Homography) -> GrayImage:
    """Resample ``base`` through ``h`` (reference -> output coordinates).

    Inverse mapping with bilinear interpolation; pixels sampling outside
    the base image become 0. Values round half-up to 8 bits.
    """
    hh, ww = base.height, base.width
    inv = np.linalg.inv(h.matrix)
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    safe = np.abs(den) > 1e-12
    den = np.where(safe, den, 1.0)
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    inside = safe & (sx >= 0) & (sx <= ww - 1) & (sy >= 0) & (sy <= hh - 1)

    x0 = np.clip(np.floor(sx), 0, ww - 1).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, hh - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, ww - 1)
    y1 = np.minimum(y0 + 1, hh - 1)
    fx = sx - x0
    fy = sy - y0
    img = base.pixels.astype(np.float64)
    val = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    out = np.floor(val + 0.5).clip(0, 255).astype(np.uint8)
    out[~inside] = 0
    return GrayImage(out)


def generate_synthetic_sequence(
    base: GrayImage,
    seed: int,
    n_targets: int,
    warp_magnitude: float,
    name: str | None = None,
) -> SequenceRecord:
    """Warp ``base`` through ``n_targets`` random homographies.

    Corner perturbations are uniform in +-warp_magnitude px and drawn from
    the shared LCG, so output is bit-identical for a given (base, seed).
    The homography used to resample each target is stored as its exact
    ground truth. With warp_magnitude = 0 every ground truth is identity.
    """
    if n_targets < 1:
        raise InvariantViolation("n_targets must be >= 1")
    if warp_magnitude < 0:
        raise InvariantViolation("warp_magnitude must be >= 0")
    rng = Lcg(seed)
    images = [base]
    gts = []
    for _ in range(n_targets):
        if warp_magnitude == 0:
            h = Homography.identity()  # exact, so targets equal the base
        else:
            h = _sample_corner_warp(rng, base.width, base.height, warp_magnitude)
        gts.append(h)
        images.append(warp_image(base, h))
    name = name or f"v_synthetic_{seed}"
    return SequenceRecord(
        name=name,
        subset=subset_for_name(name),
        gt_homographies=tuple(gts),
        images=tuple(images),
    )


def _sample_corner_warp(rng: Lcg, width: int, height: int, magnitude: float) -> Homography:
    ref_corners = np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [0.0, height - 1.0], [width - 1.0, height - 1.0]]
    )
    for _ in range(100):
        pert = ref_corners + np.array(
            [[rng.uniform_signed(magnitude), rng.uniform_signed(magnitude)] for _ in range(4)]
        )
        if _any_three_collinear(pert):
            continue
        try:
            return dlt_homography(ref_corners, pert)
        except DegenerateConfiguration:
            continue
    raise DegenerateWarp("100 corner samples were collinear or degenerate")


def random_block_texture(width: int, height: int, seed: int, cell: int = 16) -> GrayImage:
    """Deterministic high-contrast test texture: random gray per cell.

    Cell junctions form strong corners, which makes the texture a good
    fixture for corner detection and matching tests.
    """
    rng = Lcg(seed)
    cols = (width + cell - 1) // cell
    rows = (height + cell - 1) // cell
    levels = np.array(
        [[rng.next_u32() % 256 for _ in range(cols)] for _ in range(rows)], dtype=np.uint8
    )
    full = np.repeat(np.repeat(levels, cell, axis=0), cell, axis=1)
    return GrayImage(full[:height, :width])


# ---------------------------------------------------------------------------
# Writing sequences to disk (test fixtures and demos)


def write_pgm(path, img: GrayImage) -> None:
    """Binary P5 grayscale file; readable regardless of extension."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def save_sequence_dir(record: SequenceRecord, root) -> Path:
    """Materialize a sequence as an HPatches-style directory."""
    root = Path(root)
    seq_dir = root / record.name
    seq_dir.mkdir(parents=True, exist_ok=True)
    images = _sequence_images(record)
    for i, img in enumerate(images, start=1):
        write_pgm(seq_dir / f"{i}.ppm", img)
    for k, h in zip(TARGET_INDICES, record.gt_homographies):
        rows = [" ".join(repr(float(v)) for v in row) for row in h.matrix]
        (seq_dir / f"H_1_{k}").write_text("\n".join(rows) + "\n")
    return seq_dir
