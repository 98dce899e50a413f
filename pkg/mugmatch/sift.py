"""Scale-invariant keypoint detection and 128-d gradient descriptors."""

import math

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import map_coordinates, maximum_filter, minimum_filter

from .errors import ImageTooSmall
from .image_ops import blur_array, resize_array
from .models import (
    ArrayModel,
    Descriptor,
    FeatureSet,
    GrayImage,
    Keypoint,
    PyramidParams,
    Rejection,
)

TWO_PI = 2.0 * math.pi

MAX_LOCALIZATION_STEPS = 5
ORIENTATION_BINS = 36
ORIENTATION_PEAK_RATIO = 0.8
ORIENTATION_SIGMA_FACTOR = 1.5
DESCRIPTOR_CELLS = 4
DESCRIPTOR_ORIENTATION_BINS = 8
DESCRIPTOR_SAMPLES = 16
DESCRIPTOR_CELL_SIGMAS = 3.0
DESCRIPTOR_CLAMP = 0.2

_NEIGHBOURS = np.ones((3, 3, 3), dtype=bool)
_NEIGHBOURS[1, 1, 1] = False


class GaussianPyramid(ArrayModel):
    """Progressively blurred images, S+3 per octave."""

    octaves: list[list[GrayImage]] = Field(description="Blurred levels per octave")
    sigmas: list[list[float]] = Field(description="Absolute sigma of each level in input pixels")
    first_octave: int = Field(default=0, description="Octave number of octaves[0]")
    scales_per_octave: int = Field(ge=1)

    def level(self, octave: int, scale_index: int) -> GrayImage:
        return self.octaves[octave - self.first_octave][scale_index]


class DoGPyramid(ArrayModel):
    """Differences of adjacent Gaussian levels, S+2 per octave."""

    octaves: list[np.ndarray] = Field(description="Per-octave stacks of shape (S+2, height, width)")
    first_octave: int = Field(default=0)
    scales_per_octave: int = Field(ge=1)

    def stack(self, octave: int) -> np.ndarray:
        return self.octaves[octave - self.first_octave]


class Candidate(BaseModel):
    """A discrete scale-space extremum awaiting localization."""

    octave: int
    scale_index: int
    x: int
    y: int


class ExtractionStats(BaseModel):
    """Counts gathered while extracting one image."""

    candidates: int = 0
    keypoints: int = 0
    rejections: dict[str, int] = Field(default_factory=lambda: {reason.value: 0 for reason in Rejection})

    def reject(self, reason: Rejection) -> None:
        self.rejections[reason.value] += 1


def _to_input_coords(value: float, octave: int, first_octave: int) -> float:
    value = value * 2.0 ** (octave - first_octave)
    if first_octave < 0:
        # upsampled base: invert the half-pixel-centred 2x resize
        return (value + 0.5) * 2.0**first_octave - 0.5
    return value * 2.0**first_octave


def _to_octave_coords(value: float, octave: int, first_octave: int) -> float:
    if first_octave < 0:
        value = (value + 0.5) * 2.0**-first_octave - 0.5
    else:
        value = value * 2.0**-first_octave
    return value * 2.0 ** (first_octave - octave)


def build_gaussian_pyramid(img: GrayImage, params: PyramidParams) -> GaussianPyramid:
    """
    Build the Gaussian scale space of an image.

    Args:
        img: Preprocessed grayscale image
        params: Pyramid parameters

    Returns:
        GaussianPyramid with S+3 levels per octave
    """
    if min(img.width, img.height) < params.min_octave_size:
        raise ImageTooSmall(
            f"image is {img.width}x{img.height}, pyramid needs at least "
            f"{params.min_octave_size}x{params.min_octave_size}"
        )

    base = img.pixels
    assumed_blur = params.assumed_input_blur
    first_octave = 0
    if params.upsample_input:
        base = resize_array(base, 2 * img.width, 2 * img.height)
        assumed_blur *= 2.0
        first_octave = -1

    num_octaves = params.octave_count(base.shape[1], base.shape[0])
    S = params.scales_per_octave
    sigma0 = params.base_sigma
    relative = [sigma0 * 2.0 ** (s / S) for s in range(S + 3)]
    increments = [math.sqrt(relative[s] ** 2 - relative[s - 1] ** 2) for s in range(1, S + 3)]

    seed = blur_array(base, math.sqrt(sigma0**2 - assumed_blur**2))
    octaves: list[list[GrayImage]] = []
    sigmas: list[list[float]] = []
    for index in range(num_octaves):
        levels = [seed]
        for increment in increments:
            levels.append(blur_array(levels[-1], increment))
        octaves.append([GrayImage(pixels=level) for level in levels])
        sigmas.append([sigma * 2.0 ** (first_octave + index) for sigma in relative])
        # the level at sigma 2*sigma0 seeds the next octave
        source = levels[S]
        half_h, half_w = source.shape[0] // 2, source.shape[1] // 2
        seed = source[0 : 2 * half_h : 2, 0 : 2 * half_w : 2]

    return GaussianPyramid(octaves=octaves, sigmas=sigmas, first_octave=first_octave, scales_per_octave=S)


def build_dog_pyramid(gp: GaussianPyramid) -> DoGPyramid:
    """Subtract adjacent Gaussian levels in every octave."""
    octaves = []
    for levels in gp.octaves:
        stack = np.stack([upper.pixels - lower.pixels for lower, upper in zip(levels, levels[1:])])
        stack.flags.writeable = False
        octaves.append(stack)
    return DoGPyramid(octaves=octaves, first_octave=gp.first_octave, scales_per_octave=gp.scales_per_octave)


def detect_extrema(dp: DoGPyramid, threshold: float = 0.0) -> list[Candidate]:
    """
    Find cells strictly above or below all 26 scale-space neighbours.

    Args:
        dp: DoG pyramid
        threshold: Optional pre-filter; only cells with |D| > threshold are kept

    Returns:
        Candidates ordered by octave, scale, row, column
    """
    candidates: list[Candidate] = []
    S = dp.scales_per_octave
    for index, stack in enumerate(dp.octaves):
        n_scales, height, width = stack.shape
        if n_scales < 3 or height < 3 or width < 3:
            continue
        neighbour_max = maximum_filter(stack, footprint=_NEIGHBOURS, mode="nearest")
        neighbour_min = minimum_filter(stack, footprint=_NEIGHBOURS, mode="nearest")
        extremum = (stack > neighbour_max) | (stack < neighbour_min)
        if threshold > 0:
            extremum &= np.abs(stack) > threshold
        interior = np.zeros_like(extremum)
        interior[1 : S + 1, 1 : height - 1, 1 : width - 1] = True
        extremum &= interior
        for s, y, x in zip(*np.nonzero(extremum)):
            candidates.append(
                Candidate(octave=dp.first_octave + index, scale_index=int(s), x=int(x), y=int(y))
            )
    return candidates


def _derivatives(cube: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # cube axes are (scale, y, x); returned vectors are ordered (x, y, scale)
    centre = cube[1, 1, 1]
    dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
    dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
    ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
    dxx = cube[1, 1, 2] - 2.0 * centre + cube[1, 1, 0]
    dyy = cube[1, 2, 1] - 2.0 * centre + cube[1, 0, 1]
    dss = cube[2, 1, 1] - 2.0 * centre + cube[0, 1, 1]
    dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
    dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
    dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
    gradient = np.array([dx, dy, ds])
    hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return gradient, hessian


def quadratic_offset(cube: np.ndarray) -> np.ndarray:
    """Sub-sample (x, y, scale) offset of the extremum of a quadratic fitted to a 3x3x3 cube."""
    gradient, hessian = _derivatives(np.asarray(cube, dtype=np.float64))
    return -np.linalg.lstsq(hessian, gradient, rcond=None)[0]


def localize_keypoint(dp: DoGPyramid, candidate: Candidate, params: PyramidParams) -> Keypoint | Rejection:
    """
    Refine a candidate to sub-pixel accuracy and reject unstable ones.

    Args:
        dp: DoG pyramid the candidate was found in
        candidate: Discrete extremum
        params: Pyramid parameters (contrast threshold, edge ratio)

    Returns:
        Localized keypoint, or the rejection reason
    """
    stack = dp.stack(candidate.octave)
    S = dp.scales_per_octave
    _, height, width = stack.shape
    s, y, x = candidate.scale_index, candidate.y, candidate.x

    for _ in range(MAX_LOCALIZATION_STEPS):
        cube = stack[s - 1 : s + 2, y - 1 : y + 2, x - 1 : x + 2]
        gradient, hessian = _derivatives(cube)
        offset = -np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        if not np.all(np.isfinite(offset)):
            return Rejection.DIVERGED
        if np.all(np.abs(offset) <= 0.5):
            break
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        s += int(round(offset[2]))
        if not (1 <= s <= S and 1 <= y <= height - 2 and 1 <= x <= width - 2):
            return Rejection.DIVERGED
    else:
        return Rejection.DIVERGED

    response = float(cube[1, 1, 1] + 0.5 * gradient @ offset)
    if abs(response) < params.contrast_threshold:
        return Rejection.LOW_CONTRAST

    dxx, dyy, dxy = hessian[0, 0], hessian[1, 1], hessian[0, 1]
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = params.edge_ratio
    if det <= 0 or trace * trace / det >= (r + 1.0) ** 2 / r:
        return Rejection.EDGE_RESPONSE

    octave = candidate.octave
    return Keypoint(
        x=_to_input_coords(x + float(offset[0]), octave, dp.first_octave),
        y=_to_input_coords(y + float(offset[1]), octave, dp.first_octave),
        octave=octave,
        scale_index=s,
        sigma=params.base_sigma * 2.0 ** (octave + (s + float(offset[2])) / S),
        response=response,
    )


def orientation_histogram(
    pixels: np.ndarray,
    cx: int,
    cy: int,
    weight_sigma: float,
    num_bins: int = ORIENTATION_BINS,
) -> np.ndarray:
    """Gaussian-weighted gradient-orientation histogram around (cx, cy)."""
    height, width = pixels.shape
    radius = int(round(3.0 * weight_sigma))
    y0, y1 = max(cy - radius, 1), min(cy + radius, height - 2)
    x0, x1 = max(cx - radius, 1), min(cx + radius, width - 2)
    if y0 > y1 or x0 > x1:
        return np.zeros(num_bins)
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dx = pixels[ys, xs + 1] - pixels[ys, xs - 1]
    dy = pixels[ys + 1, xs] - pixels[ys - 1, xs]
    magnitude = np.hypot(dx, dy)
    angle = np.mod(np.arctan2(dy, dx), TWO_PI)
    weight = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * weight_sigma**2))
    bins = np.rint(angle * num_bins / TWO_PI).astype(np.intp) % num_bins
    return np.bincount(bins.ravel(), weights=(weight * magnitude).ravel(), minlength=num_bins)


def histogram_peaks(hist: np.ndarray, peak_ratio: float = ORIENTATION_PEAK_RATIO) -> list[float]:
    """
    Orientations (radians) of histogram peaks within peak_ratio of the maximum.

    Peaks are refined with a parabola through the peak bin and its neighbours.
    """
    num_bins = len(hist)
    peak_value = float(hist.max())
    if peak_value <= 0:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    # ">=" on the left lets the last bin of a flat-topped peak count
    peaks = np.nonzero((hist >= left) & (hist > right) & (hist >= peak_ratio * peak_value))[0]
    if len(peaks) == 0:
        # constant histogram: no bin beats its right neighbour
        peaks = np.array([int(np.argmax(hist))])

    orientations: list[float] = []
    for index in peaks:
        l, c, r = float(left[index]), float(hist[index]), float(right[index])
        denom = l - 2.0 * c + r
        shift = 0.5 * (l - r) / denom if denom != 0 else 0.0
        orientation = ((index + shift) % num_bins) * TWO_PI / num_bins
        if orientation >= TWO_PI:
            orientation = 0.0
        orientations.append(float(orientation))
    return orientations


def assign_orientations(gp: GaussianPyramid, kp: Keypoint) -> list[Keypoint] | Rejection:
    """One keypoint copy per dominant gradient orientation."""
    pixels = gp.level(kp.octave, kp.scale_index).pixels
    cx = int(round(_to_octave_coords(kp.x, kp.octave, gp.first_octave)))
    cy = int(round(_to_octave_coords(kp.y, kp.octave, gp.first_octave)))
    octave_sigma = kp.sigma * 2.0**-kp.octave
    hist = orientation_histogram(pixels, cx, cy, ORIENTATION_SIGMA_FACTOR * octave_sigma)
    orientations = histogram_peaks(hist)
    if not orientations or hist.max() < 1e-12:
        return Rejection.EMPTY_GRADIENT
    return [kp.model_copy(update={"orientation": orientation}) for orientation in orientations]


def clamp_normalize(vector: np.ndarray, cap: float = DESCRIPTOR_CLAMP) -> np.ndarray | None:
    """
    Unit-normalise, clamp components at cap and renormalise, to the fixed point.

    Returns None when no unit vector with components <= cap exists
    (fewer than 1/cap^2 non-zero components).
    """
    norm = float(np.linalg.norm(vector))
    if norm < 1e-12:
        return None
    unit = vector / norm
    ordered = np.sort(unit)[::-1]
    # tail[m] = squared norm of everything but the m largest components
    tail = np.concatenate([np.cumsum((ordered**2)[::-1])[::-1], [0.0]])
    for clamped in range(len(ordered)):
        budget = 1.0 - clamped * cap * cap
        if budget <= 0 or tail[clamped] <= 0:
            break
        scale = math.sqrt(budget / tail[clamped])
        if scale * ordered[clamped] <= cap:
            return np.minimum(unit * scale, cap)
    return None


def compute_descriptor(gp: GaussianPyramid, kp: Keypoint) -> Descriptor | Rejection:
    """
    Build the 4x4x8 gradient-histogram descriptor of an oriented keypoint.

    Args:
        gp: Gaussian pyramid the keypoint was detected in
        kp: Keypoint with orientation assigned

    Returns:
        Descriptor, or DEGENERATE_PATCH when the window has no usable gradient energy
    """
    pixels = gp.level(kp.octave, kp.scale_index).pixels
    grad_y, grad_x = np.gradient(pixels)
    cx = _to_octave_coords(kp.x, kp.octave, gp.first_octave)
    cy = _to_octave_coords(kp.y, kp.octave, gp.first_octave)
    octave_sigma = kp.sigma * 2.0**-kp.octave
    samples_per_cell = DESCRIPTOR_SAMPLES // DESCRIPTOR_CELLS
    spacing = DESCRIPTOR_CELL_SIGMAS * octave_sigma / samples_per_cell

    offsets = np.arange(DESCRIPTOR_SAMPLES) - (DESCRIPTOR_SAMPLES - 1) / 2.0
    vv, uu = np.meshgrid(offsets, offsets, indexing="ij")
    cos_t, sin_t = math.cos(kp.orientation), math.sin(kp.orientation)
    px = cx + spacing * (uu * cos_t - vv * sin_t)
    py = cy + spacing * (uu * sin_t + vv * cos_t)
    coords = np.array([py.ravel(), px.ravel()])
    sample_gx = map_coordinates(grad_x, coords, order=1, mode="constant", cval=0.0)
    sample_gy = map_coordinates(grad_y, coords, order=1, mode="constant", cval=0.0)

    half_window = DESCRIPTOR_SAMPLES / 2.0
    weight = np.exp(-(uu.ravel() ** 2 + vv.ravel() ** 2) / (2.0 * half_window**2))
    magnitude = np.hypot(sample_gx, sample_gy) * weight
    relative = np.mod(np.arctan2(sample_gy, sample_gx) - kp.orientation, TWO_PI)

    row_bin = (vv.ravel() + half_window) / samples_per_cell - 0.5
    col_bin = (uu.ravel() + half_window) / samples_per_cell - 0.5
    ori_bin = relative * DESCRIPTOR_ORIENTATION_BINS / TWO_PI

    r0 = np.floor(row_bin).astype(np.intp)
    c0 = np.floor(col_bin).astype(np.intp)
    o0 = np.floor(ori_bin).astype(np.intp)
    fr, fc, fo = row_bin - r0, col_bin - c0, ori_bin - o0

    # one padding cell on each spatial side absorbs out-of-window spill
    hist = np.zeros((DESCRIPTOR_CELLS + 2, DESCRIPTOR_CELLS + 2, DESCRIPTOR_ORIENTATION_BINS))
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            for do, wo in ((0, 1.0 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % DESCRIPTOR_ORIENTATION_BINS),
                    magnitude * wr * wc * wo,
                )

    vector = hist[1:-1, 1:-1, :].ravel()
    normalized = clamp_normalize(vector)
    if normalized is None:
        return Rejection.DEGENERATE_PATCH
    return Descriptor(values=normalized.astype(np.float32))


def _quantized(kp: Keypoint) -> Keypoint:
    # float32 is the persisted precision
    orientation = float(np.float32(kp.orientation))
    if orientation >= TWO_PI:
        orientation = 0.0
    return kp.model_copy(
        update={
            "x": float(np.float32(kp.x)),
            "y": float(np.float32(kp.y)),
            "sigma": float(np.float32(kp.sigma)),
            "orientation": orientation,
            "response": float(np.float32(kp.response)),
        }
    )


def scale_index_from_sigma(sigma: float, octave: int, params: PyramidParams) -> int:
    """Recover the integer scale level of a keypoint from its absolute sigma."""
    S = params.scales_per_octave
    position = S * (math.log2(sigma / params.base_sigma) - octave)
    return min(max(int(round(position)), 1), S)


def extract_features_with_stats(img: GrayImage, params: PyramidParams) -> tuple[FeatureSet, ExtractionStats]:
    """Run the full detector/descriptor pipeline and report rejection counts."""
    gp = build_gaussian_pyramid(img, params)
    dp = build_dog_pyramid(gp)
    candidates = detect_extrema(dp, threshold=0.5 * params.contrast_threshold)
    stats = ExtractionStats(candidates=len(candidates))

    keypoints: list[Keypoint] = []
    descriptors: list[np.ndarray] = []
    seen: set[tuple[int, int, float, float]] = set()
    for candidate in candidates:
        localized = localize_keypoint(dp, candidate, params)
        if isinstance(localized, Rejection):
            stats.reject(localized)
            continue
        key = (localized.octave, localized.scale_index, localized.x, localized.y)
        if key in seen:
            continue
        seen.add(key)

        oriented = assign_orientations(gp, localized)
        if isinstance(oriented, Rejection):
            stats.reject(oriented)
            continue
        for kp in oriented:
            kp = _quantized(kp)
            descriptor = compute_descriptor(gp, kp)
            if isinstance(descriptor, Rejection):
                stats.reject(descriptor)
                continue
            keypoints.append(kp)
            descriptors.append(descriptor.values)

    stats.keypoints = len(keypoints)
    matrix = np.array(descriptors, dtype=np.float32) if descriptors else np.zeros((0, 128), dtype=np.float32)
    return FeatureSet(keypoints=keypoints, descriptors=matrix, source_dims=(img.width, img.height)), stats


def extract_features(img: GrayImage, params: PyramidParams) -> FeatureSet:
    """Detect keypoints and compute descriptors for one preprocessed face."""
    features, _ = extract_features_with_stats(img, params)
    return features
