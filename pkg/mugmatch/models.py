"""Type definitions and data models for mugmatch."""

import math
from enum import StrEnum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Tolerance for float overshoot of [0, 1] rasters produced by filtering.
PIXEL_TOLERANCE = 1e-9

DESCRIPTOR_LENGTH = 128


def _frozen_array(value: Any, dtype: type = np.float64) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


class ArrayModel(BaseModel):
    """Base for immutable models holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class GrayImage(ArrayModel):
    """2-D luminance raster with values in [0, 1]."""

    pixels: np.ndarray = Field(description="Row-major luminance values, shape (height, width)")

    @field_validator("pixels", mode="before")
    @classmethod
    def _check_pixels(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {array.shape}")
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(array)):
            raise ValueError("pixel values must be finite")
        if array.min() < -PIXEL_TOLERANCE or array.max() > 1.0 + PIXEL_TOLERANCE:
            raise ValueError("pixel values must lie in [0, 1]")
        np.clip(array, 0.0, 1.0, out=array)
        array.flags.writeable = False
        return array

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "GrayImage":
        return cls(pixels=np.full((height, width), value, dtype=np.float64))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def min(self) -> float:
        return float(self.pixels.min())

    def max(self) -> float:
        return float(self.pixels.max())


class ColorImage(ArrayModel):
    """RGB raster with every channel in [0, 1]."""

    pixels: np.ndarray = Field(description="Row-major (r, g, b) triples, shape (height, width, 3)")

    @field_validator("pixels", mode="before")
    @classmethod
    def _check_pixels(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim != 3 or array.shape[2] != 3:
            raise ValueError(f"expected shape (height, width, 3), got {array.shape}")
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if array.min() < -PIXEL_TOLERANCE or array.max() > 1.0 + PIXEL_TOLERANCE:
            raise ValueError("channel values must lie in [0, 1]")
        np.clip(array, 0.0, 1.0, out=array)
        array.flags.writeable = False
        return array

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class PyramidParams(BaseModel):
    """Scale-space and detector parameters (Lowe's defaults)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scales_per_octave: int = Field(default=3, ge=1, description="Scales S sampled per octave")
    base_sigma: float = Field(default=1.6, description="Blur sigma of the first level of each octave")
    contrast_threshold: float = Field(default=0.03, gt=0, description="Minimum interpolated |DoG|")
    edge_ratio: float = Field(default=10.0, ge=1, description="Principal curvature ratio bound r")
    assumed_input_blur: float = Field(default=0.5, ge=0, description="Blur already present in the input")
    min_octave_size: int = Field(default=16, ge=4, description="Smallest image side kept in the pyramid")
    upsample_input: bool = Field(default=False, description="Double the input before building octave -1")
    num_octaves: int | None = Field(default=None, ge=1, description="Override for the derived octave count")

    @model_validator(mode="after")
    def _check_blur(self) -> "PyramidParams":
        if self.base_sigma <= self.assumed_input_blur:
            raise ValueError("base_sigma must exceed assumed_input_blur")
        return self

    def octave_count(self, width: int, height: int) -> int:
        """Number of octaves for a base image of the given size."""
        derived = math.floor(math.log2(min(width, height) / self.min_octave_size)) + 1
        if self.num_octaves is not None:
            return max(1, min(self.num_octaves, derived))
        return max(1, derived)


class Rejection(StrEnum):
    """Reason a scale-space candidate did not become a feature."""

    LOW_CONTRAST = "low_contrast"
    EDGE_RESPONSE = "edge_response"
    DIVERGED = "diverged"
    EMPTY_GRADIENT = "empty_gradient"
    DEGENERATE_PATCH = "degenerate_patch"


class Keypoint(BaseModel):
    """A localized scale-space interest point."""

    model_config = ConfigDict(frozen=True)

    x: float = Field(description="Sub-pixel column in input-image coordinates")
    y: float = Field(description="Sub-pixel row in input-image coordinates")
    octave: int = Field(description="Octave index (-1 when the input was upsampled)")
    scale_index: int = Field(ge=0, description="Integer scale level within the octave")
    sigma: float = Field(gt=0, description="Absolute scale in input-image pixels")
    orientation: float = Field(default=0.0, description="Dominant gradient direction, radians in [0, 2pi)")
    response: float = Field(description="Interpolated DoG value at the extremum")


class Descriptor(ArrayModel):
    """128-d normalised gradient histogram."""

    values: np.ndarray = Field(description="128 non-negative float32 components")

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value, np.float32)
        if array.shape != (DESCRIPTOR_LENGTH,):
            raise ValueError(f"descriptor must have {DESCRIPTOR_LENGTH} components")
        if array.min() < 0:
            raise ValueError("descriptor components must be non-negative")
        return array


class FeatureSet(ArrayModel):
    """All keypoints and descriptors of one face image."""

    keypoints: list[Keypoint] = Field(default_factory=list, description="Detected keypoints")
    descriptors: np.ndarray = Field(
        default_factory=lambda: np.zeros((0, DESCRIPTOR_LENGTH), dtype=np.float32),
        validate_default=True,
        description="Descriptor matrix parallel to keypoints, shape (n, 128), float32",
    )
    source_dims: tuple[int, int] = Field(description="(width, height) of the image the features came from")

    @field_validator("descriptors", mode="before")
    @classmethod
    def _check_descriptors(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value, np.float32)
        if array.size == 0:
            array = np.zeros((0, DESCRIPTOR_LENGTH), dtype=np.float32)
            array.flags.writeable = False
        if array.ndim != 2 or array.shape[1] != DESCRIPTOR_LENGTH:
            raise ValueError(f"descriptors must have shape (n, {DESCRIPTOR_LENGTH})")
        return array

    @model_validator(mode="after")
    def _check_parallel(self) -> "FeatureSet":
        if len(self.keypoints) != self.descriptors.shape[0]:
            raise ValueError("keypoints and descriptors must have equal length")
        return self

    def __len__(self) -> int:
        return len(self.keypoints)

    def positions(self) -> np.ndarray:
        """Keypoint (x, y) positions, shape (n, 2)."""
        if not self.keypoints:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([(kp.x, kp.y) for kp in self.keypoints], dtype=np.float64)

    def descriptor(self, index: int) -> Descriptor:
        return Descriptor(values=self.descriptors[index])


class EigenModel(ArrayModel):
    """Mean face, eigenface basis and eigenvalues."""

    mean: np.ndarray = Field(description="Mean face vector, length D")
    components: np.ndarray = Field(description="Orthonormal eigenfaces as rows, shape (K, D)")
    eigenvalues: np.ndarray = Field(description="Sample-covariance eigenvalues, non-increasing, length K")
    image_shape: tuple[int, int] = Field(description="(height, width) of the faces the model was trained on")

    @field_validator("mean", "components", "eigenvalues", mode="before")
    @classmethod
    def _freeze(cls, value: Any) -> np.ndarray:
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_shapes(self) -> "EigenModel":
        dimension = self.image_shape[0] * self.image_shape[1]
        if self.mean.shape != (dimension,):
            raise ValueError("mean length must equal image dimension")
        if self.components.ndim != 2 or self.components.shape[1] != dimension:
            raise ValueError("components must have shape (K, D)")
        if self.eigenvalues.shape != (self.components.shape[0],):
            raise ValueError("one eigenvalue per component")
        return self

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])

    @property
    def k(self) -> int:
        return int(self.components.shape[0])

    @property
    def degenerate(self) -> list[bool]:
        """Components whose variance is numerically zero."""
        return [bool(value < 1e-12) for value in self.eigenvalues]

    @property
    def has_degenerate_variance(self) -> bool:
        return any(self.degenerate)

    def quantized(self) -> "EigenModel":
        """Copy with every array rounded through float32, as persisted on disk."""
        return EigenModel(
            mean=self.mean.astype(np.float32).astype(np.float64),
            components=self.components.astype(np.float32).astype(np.float64),
            eigenvalues=self.eigenvalues.astype(np.float32).astype(np.float64),
            image_shape=self.image_shape,
        )


class EigenProjection(ArrayModel):
    """Coordinates of one face in eigenspace."""

    coefficients: np.ndarray = Field(description="K eigenspace coordinates")
    identity_id: str | None = Field(default=None, description="Gallery identity this projection belongs to")

    @field_validator("coefficients", mode="before")
    @classmethod
    def _freeze(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value)
        if array.ndim != 1:
            raise ValueError("coefficients must be a vector")
        return array


class ALRParams(BaseModel):
    """Angle-line-ratio voting parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    ratio_bins: int = Field(default=20, ge=1, description="Log-scale bins for segment length ratios")
    ratio_min: float = Field(default=0.25, gt=0, description="Smallest length ratio binned")
    ratio_max: float = Field(default=4.0, gt=0, description="Largest length ratio binned")
    angle_bins: int = Field(default=24, ge=1, description="Bins for segment angle differences over [-pi, pi)")
    inlier_band: int = Field(default=1, ge=0, description="Bins around the dominant cell counted as consistent")
    min_pair_votes: float = Field(default=0.5, gt=0, le=1, description="Fraction of pairings a match must win")

    @model_validator(mode="after")
    def _check_range(self) -> "ALRParams":
        if self.ratio_max <= self.ratio_min:
            raise ValueError("ratio_max must exceed ratio_min")
        return self


class MatchPair(BaseModel):
    """A ratio-test correspondence between query and gallery keypoints."""

    model_config = ConfigDict(frozen=True)

    query_idx: int = Field(ge=0)
    gallery_idx: int = Field(ge=0)
    dist_best: float = Field(ge=0)
    dist_second: float = Field(ge=0, description="Second-nearest distance, +inf for single-descriptor galleries")

    @model_validator(mode="after")
    def _check_order(self) -> "MatchPair":
        if self.dist_best > self.dist_second:
            raise ValueError("dist_best must not exceed dist_second")
        return self


class ScoredCandidate(BaseModel):
    """Match evidence for one gallery identity."""

    model_config = ConfigDict(frozen=True)

    identity_id: str
    enrollment_index: int = Field(default=0, ge=0, description="Position in the gallery, used for tie-breaks")
    raw_matches: int = Field(ge=0, description="Matches surviving the ratio test")
    inlier_matches: int = Field(ge=0, description="Matches surviving spatial verification")
    inlier_pairs: list[MatchPair] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_counts(self) -> "ScoredCandidate":
        if self.inlier_matches > self.raw_matches:
            raise ValueError("inlier_matches cannot exceed raw_matches")
        return self


class QueryOutcome(BaseModel):
    """Result of a single benchmark query."""

    query_id: str
    true_identity: str
    rank: int = Field(ge=1, description="1-based rank of the true identity")
    top1_id: str
    top1_score: float = Field(description="Inlier count (SIFT) or eigenspace distance (PCA)")


class EvalReport(BaseModel):
    """Identification-rate report for one method."""

    method: Literal["sift", "pca"]
    per_query: list[QueryOutcome]
    identification_rate: float = Field(ge=0, le=100)
    cmc: list[float] = Field(description="cmc[k-1] is the rank-k identification rate in percent")
    params: dict[str, Any] = Field(default_factory=dict, description="Parameter snapshot")

    @model_validator(mode="after")
    def _check_cmc(self) -> "EvalReport":
        if self.cmc and self.cmc[0] != self.identification_rate:
            raise ValueError("identification_rate must equal the rank-1 CMC value")
        if any(later < earlier for earlier, later in zip(self.cmc, self.cmc[1:])):
            raise ValueError("CMC must be non-decreasing")
        return self
