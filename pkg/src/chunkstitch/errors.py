"""Exception hierarchy for the stitching pipeline.

Every error carries enough context (paths, counts, edge identities) to
diagnose a failed run from the message alone.
"""

from __future__ import annotations


class StitchError(Exception):
    """Base class for all pipeline errors."""


# --- Lie group / geometry ---

class AngleAtPi(StitchError):
    """Rotation angle within tolerance of pi; the matrix log is not unique."""


class InvalidWindow(StitchError):
    """Chunk window parameters are inconsistent (overlap/size/frame count)."""


class ShapeMismatch(StitchError):
    """Two grids that must share dimensions do not."""


# --- alignment ---

class DegenerateGeometry(StitchError):
    """Correspondence covariance is rank deficient (collinear/coincident points)."""


class NoOverlap(StitchError):
    """Two chunks share no frame ids."""


class InsufficientReliablePoints(StitchError):
    """The reliability mask kept too few pixels for a well-posed solve."""


# --- descriptors / loop detection ---

class ZeroToken(StitchError):
    """A patch token row has (near-)zero norm and cannot be normalized."""


class ZeroVector(StitchError):
    """An all-zero vector where a nonzero descriptor is required."""


class TooFewFrames(StitchError):
    """Not enough descriptor rows to fit the whitening model."""


class RankDeficient(StitchError):
    """Fewer positive eigenvalues than requested output dimensions."""


class ZeroProjection(StitchError):
    """Whitened descriptor has (near-)zero norm; frame matches the scene mean."""


# --- pose graph ---

class NotConnected(StitchError):
    """Sequential edges do not form a connected chain over all nodes."""


# --- evaluation ---

class TooFewCommonFrames(StitchError):
    """Trajectories share fewer frame ids than alignment requires."""


class EmptyCloud(StitchError):
    """A point cloud operation received no points."""


# --- file formats ---

class BadMagic(StitchError):
    """Tensor file does not start with the expected magic bytes."""


class TruncatedPayload(StitchError):
    """Tensor payload is shorter than the header-declared size."""


class DimOverflow(StitchError):
    """Tensor rank or dimensions exceed the format limits."""


class MissingFile(StitchError):
    """A manifest references a file that does not exist."""


# --- synthetic harness / config ---

class InvalidSpec(StitchError):
    """Synthetic scene specification violates its invariants."""


class ConfigError(StitchError):
    """Pipeline configuration value out of range or unparseable."""
