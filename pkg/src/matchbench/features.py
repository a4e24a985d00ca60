"""Feature and scored-match interchange formats plus descriptor metrics.

Two little-endian binary containers are defined here.

Feature files (``.feat``)::

    magic "FEATv1\\0\\0" (8 bytes)
    kind u8 (0 = float32, 1 = packed binary), 3 reserved bytes
    image id: u16 length + UTF-8 bytes
    width u32, height u32, rows u32, dim u32
    rows x 5 float32 keypoint fields (x, y, scale, angle, score)
    descriptor payload (rows x dim float32, or rows x ceil(dim/8) bytes)

Scored-match files (``.match``)::

    magic "MTCHv1\\0\\0" (8 bytes)
    image id a, image id b (u16 length + UTF-8 each)
    count u32
    count x 5 float32 (x1, y1, x2, y2, confidence)

A JSON mirror of each container (same field names) is read and written when
the file extension is ``.json``; it exists for hand-written fixtures.

Packed-binary descriptor rows occupy ceil(dim / 8) bytes; bit i of a row is
bit (i mod 8) of byte (i div 8), LSB first, and padding bits are zero.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvariantViolation,
    MetricMismatch,
    TruncatedFile,
    VersionUnsupported,
)

FEATURE_MAGIC = b"FEATv1\x00\x00"
MATCH_MAGIC = b"MTCHv1\x00\x00"

KEYPOINT_FIELDS = ("x", "y", "scale", "angle", "score")


class DescriptorKind(enum.Enum):
    FLOAT32 = "float32"
    PACKED_BINARY = "packed_binary"


class Metric(enum.Enum):
    L2 = "l2"
    HAMMING = "hamming"


def metric_for(kind: DescriptorKind) -> Metric:
    """The only metric valid for a descriptor kind."""
    return Metric.L2 if kind is DescriptorKind.FLOAT32 else Metric.HAMMING


@dataclass(frozen=True)
class Keypoint:
    """One detected location; angle is NaN when orientation is unknown."""

    x: float
    y: float
    scale: float = 0.0
    angle: float = math.nan
    score: float = 0.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DescriptorMatrix:
    """Row-major descriptor block; one row per keypoint."""

    kind: DescriptorKind
    dim: int
    data: np.ndarray  # (rows, dim) float32 or (rows, ceil(dim/8)) uint8

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def row_bytes(self) -> int:
        return (self.dim + 7) // 8

    def row(self, i: int) -> np.ndarray:
        return self.data[i]

    @classmethod
    def float32(cls, data) -> "DescriptorMatrix":
        arr = _readonly(np.asarray(data, dtype=np.float32))
        if arr.ndim != 2:
            raise InvariantViolation("float descriptor data must be 2-d")
        return cls(DescriptorKind.FLOAT32, arr.shape[1], arr)

    @classmethod
    def packed_binary(cls, data, dim: int) -> "DescriptorMatrix":
        arr = _readonly(np.asarray(data, dtype=np.uint8))
        if arr.ndim != 2:
            raise InvariantViolation("packed descriptor data must be 2-d")
        return cls(DescriptorKind.PACKED_BINARY, dim, arr)

    def validate(self) -> None:
        if self.dim < 1:
            raise InvariantViolation("descriptor dim must be >= 1")
        if self.kind is DescriptorKind.FLOAT32:
            if self.data.dtype != np.float32 or self.data.shape[1] != self.dim:
                raise InvariantViolation("float32 descriptor shape/dtype mismatch")
        else:
            if self.data.dtype != np.uint8 or self.data.shape[1] != self.row_bytes:
                raise InvariantViolation("packed descriptor shape/dtype mismatch")
            pad_bits = self.row_bytes * 8 - self.dim
            if pad_bits and self.rows:
                mask = (0xFF << (8 - pad_bits)) & 0xFF
                if np.any(self.data[:, -1] & mask):
                    raise InvariantViolation("packed descriptor padding bits not zero")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DescriptorMatrix):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.dim == other.dim
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoints plus their descriptor matrix for one image."""

    image_id: str
    image_size: tuple[int, int]  # (width, height) in pixels
    keypoints: np.ndarray  # (n, 5) float32 columns x, y, scale, angle, score
    descriptors: DescriptorMatrix

    def __post_init__(self):
        object.__setattr__(
            self, "keypoints", _readonly(np.asarray(self.keypoints, np.float32).reshape(-1, 5))
        )

    def __len__(self) -> int:
        return self.keypoints.shape[0]

    def keypoint(self, i: int) -> Keypoint:
        x, y, scale, angle, score = (float(v) for v in self.keypoints[i])
        return Keypoint(x, y, scale, angle, score)

    def validate(self) -> None:
        self.descriptors.validate()
        w, h = self.image_size
        if w < 1 or h < 1:
            raise InvariantViolation("image size must be positive")
        if self.descriptors.rows != len(self):
            raise InvariantViolation("keypoint count does not match descriptor rows")
        if len(self) == 0:
            return
        xs, ys = self.keypoints[:, 0], self.keypoints[:, 1]
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise InvariantViolation("keypoint coordinates must be finite")
        if np.any(xs < -0.5) or np.any(xs > w - 0.5) or np.any(ys < -0.5) or np.any(ys > h - 0.5):
            raise InvariantViolation("keypoint outside image bounds")
        scales = self.keypoints[:, 2]
        if np.any(scales < 0):
            raise InvariantViolation("keypoint scale must be >= 0")
        angles = self.keypoints[:, 3]
        known = ~np.isnan(angles)
        if np.any(angles[known] < 0) or np.any(angles[known] >= 2 * math.pi + 1e-6):
            raise InvariantViolation("keypoint angle must be NaN or in [0, 2*pi)")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and tuple(self.image_size) == tuple(other.image_size)
            and self.keypoints.shape == other.keypoints.shape
            and np.array_equal(self.keypoints, other.keypoints, equal_nan=True)
            and self.descriptors == other.descriptors
        )


@dataclass(frozen=True, eq=False)
class ScoredMatchFile:
    """Coordinate matches with confidences, as emitted by end-to-end methods."""

    image_id_a: str
    image_id_b: str
    entries: np.ndarray  # (n, 5) float32: x1, y1, x2, y2, confidence

    def __post_init__(self):
        object.__setattr__(
            self, "entries", _readonly(np.asarray(self.entries, np.float32).reshape(-1, 5))
        )

    def __len__(self) -> int:
        return self.entries.shape[0]

    def validate(self) -> None:
        if len(self) == 0:
            return
        if not np.all(np.isfinite(self.entries[:, :4])):
            raise InvariantViolation("match coordinates must be finite")
        conf = self.entries[:, 4]
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise InvariantViolation("confidence must lie in [0, 1]")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoredMatchFile):
            return NotImplemented
        return (
            self.image_id_a == other.image_id_a
            and self.image_id_b == other.image_id_b
            and self.entries.shape == other.entries.shape
            and np.array_equal(self.entries, other.entries)
        )


# ---------------------------------------------------------------------------
# Binary encoding / decoding helpers


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvariantViolation("image id longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedFile(f"{self.path}: expected {n} more bytes at offset {self.off}")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        (n,) = struct.unpack("<H", self.take(2))
        return self.take(n).decode("utf-8")

    def done(self) -> None:
        if self.off != len(self.buf):
            raise InvariantViolation(
                f"{self.path}: {len(self.buf) - self.off} trailing bytes after payload"
            )


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 8:
        raise TruncatedFile(f"{path}: shorter than the 8-byte magic")
    if buf[:8] == magic:
        return
    if buf[:4] == magic[:4]:
        raise VersionUnsupported(f"{path}: container version {buf[4:8]!r} not supported")
    raise BadMagic(f"{path}: unknown magic {buf[:8]!r}")


def feature_file_bytes(fs: FeatureSet) -> bytes:
    """Canonical binary encoding of a feature set."""
    fs.validate()
    kind_code = 0 if fs.descriptors.kind is DescriptorKind.FLOAT32 else 1
    out = bytearray()
    out += FEATURE_MAGIC
    out += bytes((kind_code, 0, 0, 0))
    out += _encode_str(fs.image_id)
    out += struct.pack(
        "<IIII", fs.image_size[0], fs.image_size[1], len(fs), fs.descriptors.dim
    )
    out += fs.keypoints.astype("<f4", copy=False).tobytes()
    if kind_code == 0:
        out += fs.descriptors.data.astype("<f4", copy=False).tobytes()
    else:
        out += fs.descriptors.data.tobytes()
    return bytes(out)


def _feature_set_from_bytes(buf: bytes, path) -> FeatureSet:
    _check_magic(buf, FEATURE_MAGIC, path)
    r = _Reader(buf, path)
    r.take(8)
    kind_code = r.take(4)[0]
    if kind_code not in (0, 1):
        raise InvariantViolation(f"{path}: unknown descriptor kind {kind_code}")
    image_id = r.string()
    width, height, rows, dim = struct.unpack("<IIII", r.take(16))
    kps = np.frombuffer(r.take(rows * 20), dtype="<f4").reshape(rows, 5).copy()
    if kind_code == 0:
        data = np.frombuffer(r.take(rows * dim * 4), dtype="<f4").reshape(rows, dim).copy()
        desc = DescriptorMatrix.float32(data)
    else:
        row_bytes = (dim + 7) // 8
        data = np.frombuffer(r.take(rows * row_bytes), dtype=np.uint8)
        desc = DescriptorMatrix.packed_binary(data.reshape(rows, row_bytes).copy(), dim)
    r.done()
    fs = FeatureSet(image_id, (width, height), kps, desc)
    fs.validate()
    return fs


def match_file_bytes(m: ScoredMatchFile) -> bytes:
    """Canonical binary encoding of a scored-match file."""
    m.validate()
    out = bytearray()
    out += MATCH_MAGIC
    out += _encode_str(m.image_id_a)
    out += _encode_str(m.image_id_b)
    out += struct.pack("<I", len(m))
    out += m.entries.astype("<f4", copy=False).tobytes()
    return bytes(out)


def _match_file_from_bytes(buf: bytes, path) -> ScoredMatchFile:
    _check_magic(buf, MATCH_MAGIC, path)
    r = _Reader(buf, path)
    r.take(8)
    id_a = r.string()
    id_b = r.string()
    count = r.u32()
    entries = np.frombuffer(r.take(count * 20), dtype="<f4").reshape(count, 5).copy()
    r.done()
    m = ScoredMatchFile(id_a, id_b, entries)
    m.validate()
    return m


# ---------------------------------------------------------------------------
# JSON mirrors (same field names; selected by .json extension)


def _angle_to_json(a: float):
    return None if math.isnan(a) else a


def feature_set_to_json(fs: FeatureSet) -> dict:
    fs.validate()
    kps = [
        {
            "x": float(k[0]),
            "y": float(k[1]),
            "scale": float(k[2]),
            "angle": _angle_to_json(float(k[3])),
            "score": float(k[4]),
        }
        for k in fs.keypoints
    ]
    return {
        "image_id": fs.image_id,
        "image_size": [int(fs.image_size[0]), int(fs.image_size[1])],
        "keypoints": kps,
        "descriptors": {
            "kind": fs.descriptors.kind.value,
            "dim": fs.descriptors.dim,
            "data": [[v.item() for v in row] for row in fs.descriptors.data],
        },
    }


def feature_set_from_json(doc: dict, path="<json>") -> FeatureSet:
    try:
        kps = np.array(
            [
                [
                    k["x"],
                    k["y"],
                    k.get("scale", 0.0),
                    math.nan if k.get("angle") is None else k["angle"],
                    k.get("score", 0.0),
                ]
                for k in doc["keypoints"]
            ],
            dtype=np.float32,
        ).reshape(-1, 5)
        d = doc["descriptors"]
        kind = DescriptorKind(d["kind"])
        dim = int(d["dim"])
        if kind is DescriptorKind.FLOAT32:
            desc = DescriptorMatrix.float32(np.array(d["data"], np.float32).reshape(-1, dim))
        else:
            rb = (dim + 7) // 8
            desc = DescriptorMatrix.packed_binary(
                np.array(d["data"], np.uint8).reshape(-1, rb), dim
            )
        fs = FeatureSet(doc["image_id"], tuple(doc["image_size"]), kps, desc)
    except (KeyError, TypeError, ValueError) as e:
        raise InvariantViolation(f"{path}: malformed feature JSON ({e})") from e
    fs.validate()
    return fs


def match_file_to_json(m: ScoredMatchFile) -> dict:
    m.validate()
    return {
        "image_id_a": m.image_id_a,
        "image_id_b": m.image_id_b,
        "entries": [[v.item() for v in row] for row in m.entries],
    }


def match_file_from_json(doc: dict, path="<json>") -> ScoredMatchFile:
    try:
        entries = np.array(doc["entries"], dtype=np.float32).reshape(-1, 5)
        m = ScoredMatchFile(doc["image_id_a"], doc["image_id_b"], entries)
    except (KeyError, TypeError, ValueError) as e:
        raise InvariantViolation(f"{path}: malformed match JSON ({e})") from e
    m.validate()
    return m


# ---------------------------------------------------------------------------
# Public save / load entry points


def _is_json(path) -> bool:
    return str(path).lower().endswith(".json")


def save_features(fs: FeatureSet, path) -> None:
    path = Path(path)
    if _is_json(path):
        path.write_text(json.dumps(feature_set_to_json(fs), indent=1, sort_keys=True) + "\n")
    else:
        path.write_bytes(feature_file_bytes(fs))


def load_features(path) -> FeatureSet:
    path = Path(path)
    if _is_json(path):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise BadMagic(f"{path}: not valid JSON ({e})") from e
        return feature_set_from_json(doc, path)
    return _feature_set_from_bytes(path.read_bytes(), path)


def save_scored_matches(m: ScoredMatchFile, path) -> None:
    path = Path(path)
    if _is_json(path):
        path.write_text(json.dumps(match_file_to_json(m), indent=1, sort_keys=True) + "\n")
    else:
        path.write_bytes(match_file_bytes(m))


def load_scored_matches(path) -> ScoredMatchFile:
    path = Path(path)
    if _is_json(path):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise BadMagic(f"{path}: not valid JSON ({e})") from e
        return match_file_from_json(doc, path)
    return _match_file_from_bytes(path.read_bytes(), path)


# ---------------------------------------------------------------------------
# Distances


def distance(a: np.ndarray, b: np.ndarray, metric: Metric) -> float:
    """Distance between two descriptor rows.

    L2 is the true Euclidean norm computed in double precision and applies
    to float rows only; Hamming is the popcount of the XOR of packed rows.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise MetricMismatch(f"rows differ in shape: {a.shape} vs {b.shape}")
    if metric is Metric.L2:
        if a.dtype.kind not in "f" or b.dtype.kind not in "f":
            raise MetricMismatch("L2 requires float descriptor rows")
        d = a.astype(np.float64) - b.astype(np.float64)
        return float(np.sqrt(np.sum(d * d)))
    if metric is Metric.HAMMING:
        if a.dtype != np.uint8 or b.dtype != np.uint8:
            raise MetricMismatch("Hamming requires packed uint8 descriptor rows")
        return float(np.bitwise_count(np.bitwise_xor(a, b)).sum())
    raise MetricMismatch(f"unknown metric {metric!r}")
