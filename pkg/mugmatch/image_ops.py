"""Image decoding, grayscale conversion, resizing and Gaussian filtering."""

import io
import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

from .errors import CorruptFile, GalleryIoError, NonPositiveSigma, TooSmall, UnsupportedFormat, ZeroDimension
from .models import ColorImage, GrayImage

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PNM_SIGNATURES = (b"P1", b"P2", b"P3", b"P4", b"P5", b"P6")
SUPPORTED_FORMATS = {"PNG", "PPM"}

# Full-scale sample value per Pillow mode
_MODE_RANGE = {"1": 1.0, "L": 255.0, "RGB": 255.0, "I": 65535.0, "I;16": 65535.0, "I;16B": 65535.0}


def _has_known_signature(data: bytes) -> bool:
    return data.startswith(PNG_SIGNATURE) or data[:2] in PNM_SIGNATURES


def decode_image(data: bytes) -> ColorImage:
    """
    Decode a PNG or portable anymap byte stream.

    Args:
        data: Raw file content

    Returns:
        ColorImage with channels scaled to [0, 1]
    """
    try:
        image = Image.open(io.BytesIO(data))
        image_format = image.format
        image.load()
    except UnidentifiedImageError:
        if _has_known_signature(data):
            raise CorruptFile("image stream is truncated or damaged") from None
        raise UnsupportedFormat("expected PNG or portable anymap data") from None
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptFile(f"cannot decode image: {e}") from e

    if image_format not in SUPPORTED_FORMATS:
        raise UnsupportedFormat(f"{image_format} images are not supported; convert to PNG first")

    mode = image.mode
    if mode in ("P", "LA", "RGBA", "PA", "CMYK", "YCbCr"):
        image = image.convert("RGB")
        mode = "RGB"
    if mode not in _MODE_RANGE:
        raise UnsupportedFormat(f"unsupported pixel mode {mode}")

    array = np.asarray(image, dtype=np.float64) / _MODE_RANGE[mode]
    if array.ndim == 2:
        array = np.repeat(array[:, :, np.newaxis], 3, axis=2)
    return ColorImage(pixels=np.clip(array, 0.0, 1.0))


def load_image(path: Path) -> ColorImage:
    """Read and decode an image file."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise GalleryIoError(f"cannot read image {path}: {e.strerror or e}") from e
    return decode_image(data)


def encode_png(img: GrayImage) -> bytes:
    """Encode a grayscale image as an 8-bit PNG."""
    samples = np.rint(img.pixels * 255.0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(samples).save(buffer, format="PNG")
    return buffer.getvalue()


def to_grayscale(img: ColorImage) -> GrayImage:
    """Per-pixel BT.601 luminance."""
    return GrayImage(pixels=img.pixels @ LUMA_WEIGHTS)


def _resize_axis(array: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = array.shape[axis]
    if in_len == out_len:
        return array
    # half-pixel centred sample positions, clamped to the edge samples
    positions = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    positions = np.clip(positions, 0.0, in_len - 1)
    lower = np.floor(positions).astype(np.intp)
    upper = np.minimum(lower + 1, in_len - 1)
    frac = positions - lower
    shape = [1] * array.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return np.take(array, lower, axis=axis) * (1.0 - frac) + np.take(array, upper, axis=axis) * frac


def resize_array(array: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize of an arbitrary real-valued 2-D array."""
    if out_w < 1 or out_h < 1:
        raise ZeroDimension(f"target size must be at least 1x1, got {out_w}x{out_h}")
    resized = _resize_axis(array, out_h, axis=0)
    return _resize_axis(resized, out_w, axis=1)


def resize_bilinear(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Bilinear resize with half-pixel-centred sample mapping."""
    return GrayImage(pixels=resize_array(img.pixels, out_w, out_h))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian kernel of radius ceil(4 sigma)."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    radius = math.ceil(4.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def blur_array(array: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders."""
    kernel = gaussian_kernel(sigma)
    blurred = correlate1d(array, kernel, axis=0, mode="reflect")
    return correlate1d(blurred, kernel, axis=1, mode="reflect")


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur of a grayscale image."""
    return GrayImage(pixels=blur_array(img.pixels, sigma))


def downsample_half(img: GrayImage) -> GrayImage:
    """Keep every second row and column."""
    if img.width < 2 or img.height < 2:
        raise TooSmall(f"cannot halve a {img.width}x{img.height} image")
    half_h, half_w = img.height // 2, img.width // 2
    return GrayImage(pixels=img.pixels[0 : 2 * half_h : 2, 0 : 2 * half_w : 2])


def preprocess(img: ColorImage, size: int) -> GrayImage:
    """Grayscale then resize to the canonical square; applied to gallery and queries alike."""
    return resize_bilinear(to_grayscale(img), size, size)
