"""Exception hierarchy for mugmatch."""


class MugmatchError(Exception):
    """Base class for every error raised by mugmatch."""


class ConfigError(MugmatchError, ValueError):
    """An environment variable or flag holds an invalid value."""


# Image decoding and primitives

class UnsupportedFormat(MugmatchError, ValueError):
    """The byte stream is not a PNG or portable anymap."""


class CorruptFile(MugmatchError, ValueError):
    """The byte stream has a known signature but cannot be decoded."""


class ZeroDimension(MugmatchError, ValueError):
    """A requested output dimension is smaller than one pixel."""


class NonPositiveSigma(MugmatchError, ValueError):
    """A Gaussian standard deviation is zero or negative."""


class TooSmall(MugmatchError, ValueError):
    """The image is too small to be downsampled."""


# SIFT

class ImageTooSmall(MugmatchError, ValueError):
    """The image is smaller than the minimum pyramid size."""


class InvalidParams(MugmatchError, ValueError):
    """Pyramid or matching parameters violate their invariants."""


# Eigenfaces and matching

class TooFewImages(MugmatchError, ValueError):
    """PCA needs at least two training images."""


class DimensionMismatch(MugmatchError, ValueError):
    """Vector or image dimensions do not agree with the model."""


class KOutOfRange(MugmatchError, ValueError):
    """Requested component count is outside 1..N-1."""


class EmptyGallery(MugmatchError, ValueError):
    """Retrieval was asked against an empty gallery."""


class EmptyFeatureSet(MugmatchError, ValueError):
    """A nearest-neighbour search was asked against no descriptors."""


# Gallery store

class DuplicateIdentity(MugmatchError, ValueError):
    """The identity id is already enrolled."""


class GalleryIoError(MugmatchError, OSError):
    """A gallery file or source image could not be read or written."""


class FormatError(MugmatchError, ValueError):
    """A stored file has the wrong magic bytes, version or layout."""


class ParamsMismatch(MugmatchError, ValueError):
    """Feature files were built with different extraction parameters."""


class StaleEigenModel(MugmatchError, RuntimeError):
    """The eigenface model is missing or older than the latest enrolment."""


# Evaluation harness

class SpecOutOfRange(MugmatchError, ValueError):
    """A manipulation parameter exceeds its allowed range."""


class EmptyOutcomes(MugmatchError, ValueError):
    """An identification rate was asked for zero queries."""


class UnknownIdentity(MugmatchError, KeyError):
    """A query names an identity that is not enrolled."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown identity"


class ManifestError(MugmatchError, ValueError):
    """A query manifest is missing or malformed."""
