"""Seeded synthetic face manipulations used as benchmark queries."""

import math
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import map_coordinates

from .errors import SpecOutOfRange
from .image_ops import blur_array, resize_array
from .models import GrayImage

# Warp amplitudes are expressed in pixels of a 300x300 face
REFERENCE_SIZE = 300
MAX_WARP_AMPLITUDE = 15.0
MAX_OCCLUSION_FRACTION = 0.25


class LocalWarp(BaseModel):
    """Smooth random displacement field sampled on a grid x grid control lattice."""

    kind: Literal["local_warp"] = "local_warp"
    amplitude: float = Field(description="Maximum control-point displacement in pixels at 300x300")
    grid: int = Field(default=4, description="Control points per side")


class Brightness(BaseModel):
    kind: Literal["brightness"] = "brightness"
    delta: float = Field(description="Added to every pixel")


class Contrast(BaseModel):
    kind: Literal["contrast"] = "contrast"
    gain: float = Field(description="Scale applied around mid-gray 0.5")


class Blur(BaseModel):
    kind: Literal["blur"] = "blur"
    sigma: float = Field(description="Gaussian standard deviation in pixels")


class Occlude(BaseModel):
    """Black rectangle covering a fraction of the image area at a random position."""

    kind: Literal["occlude"] = "occlude"
    fraction: float = Field(description="Covered area fraction")


class Noise(BaseModel):
    kind: Literal["noise"] = "noise"
    sigma: float = Field(description="Standard deviation of additive Gaussian noise")


ManipulationOp = Annotated[
    LocalWarp | Brightness | Contrast | Blur | Occlude | Noise,
    Field(discriminator="kind"),
]


class ManipulationSpec(BaseModel):
    """Ordered list of operations driven by a single seed."""

    seed: int = Field(default=0, description="RNG seed")
    ops: list[ManipulationOp] = Field(default_factory=list)


PRESET_OPS: dict[str, list[ManipulationOp]] = {
    "none": [],
    "mild": [
        LocalWarp(amplitude=3.0, grid=4),
        Contrast(gain=0.95),
        Blur(sigma=0.5),
        Noise(sigma=0.01),
    ],
    "moderate": [
        LocalWarp(amplitude=6.0, grid=4),
        Brightness(delta=0.05),
        Contrast(gain=0.85),
        Blur(sigma=0.8),
        Occlude(fraction=0.04),
        Noise(sigma=0.02),
    ],
    "heavy": [
        LocalWarp(amplitude=12.0, grid=5),
        Brightness(delta=0.1),
        Contrast(gain=0.7),
        Blur(sigma=1.5),
        Occlude(fraction=0.15),
        Noise(sigma=0.04),
    ],
}


def preset_spec(name: str, seed: int = 0) -> ManipulationSpec:
    """Manipulation spec for a named severity preset."""
    if name not in PRESET_OPS:
        raise SpecOutOfRange(f"unknown preset {name!r}; choose from {', '.join(PRESET_OPS)}")
    return ManipulationSpec(seed=seed, ops=[op.model_copy() for op in PRESET_OPS[name]])


def validate_spec(spec: ManipulationSpec) -> None:
    """Raise SpecOutOfRange for any operation outside its permitted range."""
    for op in spec.ops:
        match op:
            case LocalWarp(amplitude=amplitude, grid=grid):
                if not 0.0 <= amplitude <= MAX_WARP_AMPLITUDE:
                    raise SpecOutOfRange(f"warp amplitude must lie in [0, {MAX_WARP_AMPLITUDE}], got {amplitude}")
                if grid < 2:
                    raise SpecOutOfRange(f"warp grid needs at least 2 control points per side, got {grid}")
            case Contrast(gain=gain):
                if gain < 0.0:
                    raise SpecOutOfRange(f"contrast gain must be non-negative, got {gain}")
            case Blur(sigma=sigma) | Noise(sigma=sigma):
                if sigma < 0.0:
                    raise SpecOutOfRange(f"{op.kind} sigma must be non-negative, got {sigma}")
            case Occlude(fraction=fraction):
                if not 0.0 <= fraction <= MAX_OCCLUSION_FRACTION:
                    raise SpecOutOfRange(
                        f"occlusion fraction must lie in [0, {MAX_OCCLUSION_FRACTION}], got {fraction}"
                    )
            case Brightness(delta=delta):
                if not math.isfinite(delta):
                    raise SpecOutOfRange("brightness delta must be finite")


def _local_warp(pixels: np.ndarray, op: LocalWarp, rng: np.random.Generator) -> np.ndarray:
    height, width = pixels.shape
    amplitude = op.amplitude * min(height, width) / REFERENCE_SIZE
    control = rng.uniform(-amplitude, amplitude, size=(2, op.grid, op.grid))
    dy = resize_array(control[0], width, height)
    dx = resize_array(control[1], width, height)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    return map_coordinates(pixels, [rows + dy, cols + dx], order=1, mode="nearest")


def _occlude(pixels: np.ndarray, op: Occlude, rng: np.random.Generator) -> np.ndarray:
    height, width = pixels.shape
    side = math.sqrt(op.fraction)
    rect_h, rect_w = round(height * side), round(width * side)
    if rect_h == 0 or rect_w == 0:
        return pixels
    top = int(rng.integers(0, height - rect_h + 1))
    left = int(rng.integers(0, width - rect_w + 1))
    occluded = pixels.copy()
    occluded[top : top + rect_h, left : left + rect_w] = 0.0
    return occluded


def _apply(pixels: np.ndarray, op: ManipulationOp, rng: np.random.Generator) -> np.ndarray:
    match op:
        case LocalWarp() if op.amplitude > 0:
            return _local_warp(pixels, op, rng)
        case Brightness() if op.delta != 0:
            return pixels + op.delta
        case Contrast() if op.gain != 1:
            return 0.5 + op.gain * (pixels - 0.5)
        case Blur() if op.sigma > 0:
            return blur_array(pixels, op.sigma)
        case Occlude() if op.fraction > 0:
            return _occlude(pixels, op, rng)
        case Noise() if op.sigma > 0:
            return pixels + rng.normal(0.0, op.sigma, size=pixels.shape)
    return pixels


def generate_manipulation(img: GrayImage, spec: ManipulationSpec) -> GrayImage:
    """
    Apply the spec's operations in order.

    Operations with identity parameters leave the pixels untouched, so an
    empty or all-zero spec returns a bit-identical image.

    Args:
        img: Source face
        spec: Operations and seed

    Returns:
        Manipulated image clamped to [0, 1]
    """
    validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    pixels = img.pixels
    for op in spec.ops:
        pixels = np.clip(_apply(pixels, op, rng), 0.0, 1.0)
    if pixels is img.pixels:
        return img
    return GrayImage(pixels=pixels)
