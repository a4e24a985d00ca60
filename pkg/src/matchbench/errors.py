"""Exception types shared across the matchbench package."""


class MatchbenchError(Exception):
    """Base class for all matchbench errors."""


# Dataset loading and synthesis.
class MissingFile(MatchbenchError):
    """A sequence lacks a required image or homography file."""


class ParseError(MatchbenchError):
    """A homography file does not contain 9 finite numbers (or h33 ~ 0)."""


class EmptyDataset(MatchbenchError):
    """No sequences were found under the dataset root."""


class DecodeError(MatchbenchError):
    """An image file could not be decoded."""


class DegenerateWarp(MatchbenchError):
    """Synthetic corner sampling kept producing collinear corners."""


# Feature / match interchange files.
class BadMagic(MatchbenchError):
    """File does not start with a known container magic."""


class VersionUnsupported(MatchbenchError):
    """Known container family but unsupported version."""


class TruncatedFile(MatchbenchError):
    """File ended before the declared payload was complete."""


class InvariantViolation(MatchbenchError):
    """A value violates a structural invariant (bounds, ranges, padding)."""


class MetricMismatch(MatchbenchError):
    """Distance metric incompatible with the descriptor kind."""


# Matching.
class EmptySet(MatchbenchError):
    """Nearest-neighbor query against an empty descriptor set."""


class OutOfRange(MatchbenchError):
    """Sweep or threshold value outside its documented range."""


# Built-in extractor.
class ImageTooSmall(MatchbenchError):
    """Image smaller than twice the detector border."""


class OutOfBounds(MatchbenchError):
    """Keypoint support region leaves the image."""


# Homography geometry.
class PointAtInfinity(MatchbenchError):
    """Projective denominator vanished while applying a homography."""


class DegenerateConfiguration(MatchbenchError):
    """Correspondences too degenerate for a unique homography."""


class TooFewMatches(MatchbenchError):
    """Fewer than 4 correspondences supplied to RANSAC."""


class NoModel(MatchbenchError):
    """Every RANSAC sample was degenerate; no model produced."""


# Evaluation.
class MissingFeatures(MatchbenchError):
    """An evaluation pair lacks its feature or match inputs."""


class EmptyResults(MatchbenchError):
    """Aggregation called with no pair results."""
