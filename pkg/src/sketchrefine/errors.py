"""Exception taxonomy shared across the package.

Every error carries a stable machine-readable ``code`` (snake_case) so the
HTTP service and the CLI can map failures without string matching.
"""

from __future__ import annotations


class SketchRefineError(Exception):
    """Base class for all package errors."""

    code = "internal"


# --- geometry ---------------------------------------------------------------


class SingularTransform(SketchRefineError):
    """Affine transform is not invertible (|det| below threshold)."""

    code = "singular_transform"


class DimensionMismatch(SketchRefineError):
    """Array or vector dimensions do not agree with the expected shape."""

    code = "dimension_mismatch"


# --- shape spaces -----------------------------------------------------------


class InsufficientCorpus(SketchRefineError):
    """Too few corpus entries to build or query a shape space."""

    code = "insufficient_corpus"


class DegenerateCorpusWarning(UserWarning):
    """All crops of a shape class are identical; latent rank clamped."""


class EmptyNeighborSet(SketchRefineError):
    """Neighbor retrieval was asked for zero neighbors."""

    code = "empty_neighbor_set"


# --- structure refinement ---------------------------------------------------


class MissingReferencePart(SketchRefineError):
    """The torso part that anchors structure refinement is absent."""

    code = "missing_reference_part"


class NonFiniteEnergy(SketchRefineError):
    """Alignment energy evaluated to NaN or infinity."""

    code = "non_finite_energy"


class EmptyMask(SketchRefineError):
    """Keypoint extraction was given a mask with no foreground pixels."""

    code = "empty_mask"


class FlatHeatmap(SketchRefineError):
    """Heatmap argmax is undefined because all cells are equal."""

    code = "flat_heatmap"


class DegenerateReference(SketchRefineError):
    """Shoulder width is zero; proportion ratios are undefined."""

    code = "degenerate_reference"


# --- corpus / ingestion -----------------------------------------------------


class SpecOutOfBounds(SketchRefineError):
    """A figure parameter lies outside its documented range."""

    code = "spec_out_of_bounds"


class MissingFile(SketchRefineError):
    """A required input file does not exist."""

    code = "missing_file"


class BadLabelCode(SketchRefineError):
    """labels.png contains a pixel value outside 0..8."""

    code = "bad_label_code"


class SizeMismatch(SketchRefineError):
    """sketch.png and labels.png dimensions differ."""

    code = "size_mismatch"


# --- index persistence ------------------------------------------------------


class BadMagic(SketchRefineError):
    """Index file does not start with the expected magic bytes."""

    code = "bad_magic"


class VersionMismatch(SketchRefineError):
    """Index file was written by an unsupported format version."""

    code = "version_mismatch"


class ChecksumFailure(SketchRefineError):
    """Index file payload does not match its stored checksum."""

    code = "checksum_failure"


class TruncatedFile(SketchRefineError):
    """Index file ended before the declared payload was complete."""

    code = "truncated_file"


class IndexNotFound(SketchRefineError):
    """The index file given to the service or CLI does not exist."""

    code = "index_not_found"


# --- pipeline / service -----------------------------------------------------


class EmptySketch(SketchRefineError):
    """A refinement request contained no present parts."""

    code = "empty_sketch"


class PaletteMissingLabel(SketchRefineError):
    """Preview composition hit a label code with no palette entry."""

    code = "palette_missing_label"


class PortInUse(SketchRefineError):
    """The requested service port is already bound."""

    code = "port_in_use"
