import math

import numpy as np
import pytest

from mugmatch.errors import ImageTooSmall
from mugmatch.image_ops import gaussian_kernel, resize_bilinear
from mugmatch.models import GrayImage, Keypoint, PyramidParams, Rejection
from mugmatch.sift import (
    Candidate,
    DoGPyramid,
    build_dog_pyramid,
    build_gaussian_pyramid,
    clamp_normalize,
    detect_extrema,
    extract_features,
    extract_features_with_stats,
    histogram_peaks,
    localize_keypoint,
    orientation_histogram,
    quadratic_offset,
)
from mugmatch.synthetic import synthetic_face

PARAMS = PyramidParams()


class TestPyramid:
    def test_octave_count(self):
        assert PARAMS.octave_count(300, 300) == 5
        assert PARAMS.octave_count(64, 80) == 3

    def test_levels_per_octave(self, textured_face):
        gp = build_gaussian_pyramid(textured_face, PARAMS)
        dp = build_dog_pyramid(gp)
        S = PARAMS.scales_per_octave
        assert len(gp.octaves) == PARAMS.octave_count(textured_face.width, textured_face.height)
        assert all(len(levels) == S + 3 for levels in gp.octaves)
        assert all(stack.shape[0] == S + 2 for stack in dp.octaves)
        assert gp.octaves[1][0].shape == (textured_face.height // 2, textured_face.width // 2)

    def test_sigmas_double_per_octave(self, textured_face):
        gp = build_gaussian_pyramid(textured_face, PARAMS)
        assert gp.sigmas[0][0] == pytest.approx(1.6)
        assert gp.sigmas[0][PARAMS.scales_per_octave] == pytest.approx(3.2)
        assert gp.sigmas[1][0] == pytest.approx(3.2)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            build_gaussian_pyramid(GrayImage.constant(8, 8, 0.5), PARAMS)

    def test_constant_image_has_no_extrema(self):
        gp = build_gaussian_pyramid(GrayImage.constant(64, 64, 0.6), PARAMS)
        dp = build_dog_pyramid(gp)
        assert all(np.max(np.abs(stack)) < 1e-12 for stack in dp.octaves)
        assert detect_extrema(dp, threshold=0.015) == []

    def test_impulse_dog_matches_kernel_peaks(self):
        """The DoG centre of an impulse is the difference of the two 2-D kernel peaks."""
        pixels = np.zeros((65, 65))
        pixels[32, 32] = 1.0
        gp = build_gaussian_pyramid(GrayImage(pixels=pixels), PARAMS)
        dp = build_dog_pyramid(gp)
        # the impulse carries no blur, so each level holds sigma^2 - assumed^2
        effective = [math.sqrt(sigma**2 - PARAMS.assumed_input_blur**2) for sigma in gp.sigmas[0]]
        peaks = [gaussian_kernel(sigma).max() ** 2 for sigma in effective]
        for s in range(len(peaks) - 1):
            assert dp.octaves[0][s, 32, 32] == pytest.approx(peaks[s + 1] - peaks[s], abs=1e-4)


def single_octave(stack: np.ndarray) -> DoGPyramid:
    return DoGPyramid(octaves=[stack], scales_per_octave=stack.shape[0] - 2)


def quadratic_stack(peak: float, curve_x: float, curve_y: float, curve_s: float) -> np.ndarray:
    """3x5x5 DoG stack shaped as a quadratic cap centred on (scale 1, row 2, column 2)."""
    s, y, x = np.mgrid[0:3, 0:5, 0:5]
    return peak - curve_x * (x - 2.0) ** 2 - curve_y * (y - 2.0) ** 2 - curve_s * (s - 1.0) ** 2


ONE_SCALE = PyramidParams(scales_per_octave=1)
CENTRE = Candidate(octave=0, scale_index=1, x=2, y=2)


class TestDetection:
    def test_single_maximum_in_hand_built_stack(self):
        stack = np.zeros((3, 5, 5))
        stack[1, 2, 2] = 1.0
        assert detect_extrema(single_octave(stack)) == [CENTRE]

    def test_blob_scale_is_recovered(self):
        yy, xx = np.mgrid[0:64, 0:64]
        blob = 0.1 + 0.8 * np.exp(-((xx - 32.0) ** 2 + (yy - 32.0) ** 2) / (2.0 * 4.0**2))
        dp = build_dog_pyramid(build_gaussian_pyramid(GrayImage(pixels=blob), PARAMS))
        localized = [localize_keypoint(dp, candidate, PARAMS) for candidate in detect_extrema(dp)]
        centred = [kp for kp in localized if isinstance(kp, Keypoint) and math.hypot(kp.x - 32, kp.y - 32) <= 1.5]
        assert any(abs(kp.sigma - 4.0) <= 0.25 * 4.0 for kp in centred)

    def test_symmetric_bowl_stays_on_sample(self):
        kp = localize_keypoint(single_octave(quadratic_stack(0.1, 0.01, 0.01, 0.01)), CENTRE, ONE_SCALE)
        assert isinstance(kp, Keypoint)
        assert (kp.x, kp.y) == (pytest.approx(2.0, abs=1e-12), pytest.approx(2.0, abs=1e-12))
        assert kp.response == pytest.approx(0.1)
        assert kp.sigma == pytest.approx(3.2)

    def test_weak_response_is_low_contrast(self):
        dp = single_octave(quadratic_stack(0.01, 0.001, 0.001, 0.001))
        assert localize_keypoint(dp, CENTRE, ONE_SCALE) == Rejection.LOW_CONTRAST

    def test_ridge_fails_curvature_test(self):
        # curvature across the ridge is 50x the curvature along it
        dp = single_octave(quadratic_stack(0.1, 0.05, 0.001, 0.01))
        assert localize_keypoint(dp, CENTRE, ONE_SCALE) == Rejection.EDGE_RESPONSE

    def test_straight_step_edge_yields_no_keypoints(self):
        pixels = np.zeros((64, 64))
        pixels[:, 32:] = 1.0
        assert len(extract_features(GrayImage(pixels=pixels), PARAMS)) == 0


class TestPrimitives:
    def test_quadratic_offset_recovers_vertex(self):
        s, y, x = np.mgrid[-1:2, -1:2, -1:2].astype(np.float64)
        cube = 1.0 - (x - 0.2) ** 2 - 2.0 * (y + 0.1) ** 2 - 0.5 * (s - 0.3) ** 2
        assert np.allclose(quadratic_offset(cube), [0.2, -0.1, 0.3])

    def test_single_peak_orientation(self):
        hist = np.zeros(36)
        hist[9] = 1.0
        assert histogram_peaks(hist) == [pytest.approx(math.pi / 2)]

    def test_secondary_peak_above_eighty_percent(self):
        hist = np.zeros(36)
        hist[4] = 10.0
        hist[20] = 8.5
        hist[30] = 7.0
        peaks = histogram_peaks(hist)
        assert len(peaks) == 2
        assert peaks[0] == pytest.approx(4 * 2 * math.pi / 36)
        assert peaks[1] == pytest.approx(20 * 2 * math.pi / 36)

    def test_flat_topped_peak_keeps_dominant_direction(self):
        hist = np.zeros(36)
        hist[4] = hist[5] = 10.0
        hist[20] = 9.0
        assert np.degrees(histogram_peaks(hist)) == pytest.approx([45.0, 200.0])

    def test_equal_peaks_ninety_degrees_apart(self):
        hist = np.zeros(36)
        hist[0] = hist[9] = 5.0
        assert histogram_peaks(hist) == [pytest.approx(0.0), pytest.approx(math.pi / 2)]

    def test_flat_histogram_has_no_peaks(self):
        assert histogram_peaks(np.zeros(36)) == []

    def test_ramp_votes_into_bin_zero(self):
        pixels = np.tile(np.linspace(0.0, 1.0, 32), (32, 1))
        hist = orientation_histogram(pixels, 16, 16, weight_sigma=2.0)
        assert hist[0] > 0
        assert np.count_nonzero(hist) == 1

    def test_clamp_normalize_keeps_unit_norm_and_cap(self):
        vector = np.ones(128)
        vector[0] = 40.0
        out = clamp_normalize(vector)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
        assert out.max() <= 0.2 + 1e-12

    def test_clamp_normalize_uniform_vector_untouched(self):
        out = clamp_normalize(np.ones(128))
        assert np.allclose(out, 1 / math.sqrt(128))

    def test_clamp_normalize_degenerate(self):
        assert clamp_normalize(np.zeros(128)) is None
        sparse = np.zeros(128)
        sparse[:10] = 1.0
        assert clamp_normalize(sparse) is None


class TestExtraction:
    def test_constant_image_yields_nothing(self):
        features = extract_features(GrayImage.constant(64, 64, 0.4), PARAMS)
        assert len(features) == 0
        assert features.descriptors.shape == (0, 128)

    def test_descriptor_contract(self, textured_face):
        features = extract_features(textured_face, PARAMS)
        assert len(features) > 0
        assert features.descriptors.shape == (len(features), 128)
        assert features.descriptors.dtype == np.float32
        norms = np.linalg.norm(features.descriptors.astype(np.float64), axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-6)
        assert features.descriptors.max() <= 0.2 + 1e-6
        assert features.descriptors.min() >= 0.0
        for kp in features.keypoints:
            assert 0.0 <= kp.orientation < 2 * math.pi
            assert 0.0 <= kp.x <= textured_face.width - 1
            assert 0.0 <= kp.y <= textured_face.height - 1

    def test_deterministic(self, textured_face):
        first = extract_features(textured_face, PARAMS)
        second = extract_features(textured_face, PARAMS)
        assert first.keypoints == second.keypoints
        assert np.array_equal(first.descriptors, second.descriptors)

    def test_stats_account_for_candidates(self, textured_face):
        features, stats = extract_features_with_stats(textured_face, PARAMS)
        assert stats.keypoints == len(features)
        assert stats.candidates >= sum(stats.rejections.values())

    def test_higher_contrast_threshold_keeps_fewer(self, textured_face):
        loose = extract_features(textured_face, PyramidParams(contrast_threshold=0.01))
        strict = extract_features(textured_face, PyramidParams(contrast_threshold=0.08))
        assert len(strict) <= len(loose)

    def test_upsampled_input_finds_keypoints_in_bounds(self, textured_face):
        features = extract_features(textured_face, PyramidParams(upsample_input=True))
        assert len(features) > 0
        assert min(kp.octave for kp in features.keypoints) == -1
        positions = features.positions()
        assert positions.min() >= -0.5
        assert positions.max() <= textured_face.width - 0.5

    def test_rotation_shifts_orientation(self, textured_face):
        """Rotating the image 90 degrees clockwise shifts interior orientations by pi/2."""
        interior, pairs = rotated_pairs(textured_face)
        assert interior
        assert len(pairs) / interior >= 0.8

    def test_rotated_descriptors_stay_close(self, textured_face):
        interior, pairs = rotated_pairs(textured_face)
        assert pairs
        distances = [float(np.linalg.norm(a.astype(np.float64) - b.astype(np.float64))) for a, b in pairs]
        assert np.median(distances) <= 0.45

    def test_contrast_scaling_leaves_descriptors_unchanged(self, textured_face):
        bright = extract_features(textured_face, PARAMS)
        dim = extract_features(GrayImage(pixels=textured_face.pixels * 0.7), PARAMS)
        compared = 0
        for kp, descriptor in zip(bright.keypoints, bright.descriptors):
            for other, other_descriptor in zip(dim.keypoints, dim.descriptors):
                if other.octave != kp.octave or abs(other.x - kp.x) > 1e-3 or abs(other.y - kp.y) > 1e-3:
                    continue
                if abs(other.orientation - kp.orientation) > 1e-3:
                    continue
                gap = np.linalg.norm(descriptor.astype(np.float64) - other_descriptor.astype(np.float64))
                assert gap <= 1e-3
                compared += 1
                break
        assert compared > 0


def rotated_pairs(face: GrayImage) -> tuple[int, list[tuple[np.ndarray, np.ndarray]]]:
    """Descriptor pairs for octave-0 interior keypoints found again after a 90 degree turn."""
    size = face.width
    rotated = GrayImage(pixels=np.rot90(face.pixels, k=-1))
    original = extract_features(face, PARAMS)
    turned = extract_features(rotated, PARAMS)
    pairs = []
    interior = 0
    for kp, descriptor in zip(original.keypoints, original.descriptors):
        if kp.octave != 0 or not (10 <= kp.x <= size - 11 and 10 <= kp.y <= size - 11):
            continue
        interior += 1
        expected_x, expected_y = size - 1 - kp.y, kp.x
        expected = (kp.orientation + math.pi / 2) % (2 * math.pi)
        for other, other_descriptor in zip(turned.keypoints, turned.descriptors):
            if other.octave != 0 or abs(other.x - expected_x) > 1e-3 or abs(other.y - expected_y) > 1e-3:
                continue
            gap = abs(other.orientation - expected) % (2 * math.pi)
            if min(gap, 2 * math.pi - gap) <= 0.05:
                pairs.append((descriptor, other_descriptor))
                break
    return interior, pairs


@pytest.mark.slow
def test_repeatability_under_downscaling():
    """At least 40% of keypoints found after 0.7x scaling reappear in the original."""
    face = synthetic_face(seed=11, size=200)
    scaled = resize_bilinear(face, 140, 140)
    original = extract_features(face, PARAMS)
    shrunk = extract_features(scaled, PARAMS)
    assert len(shrunk) > 0

    positions = original.positions()
    sigmas = np.array([kp.sigma for kp in original.keypoints])
    repeated = 0
    for kp in shrunk.keypoints:
        x = (kp.x + 0.5) / 0.7 - 0.5
        y = (kp.y + 0.5) / 0.7 - 0.5
        near = np.hypot(positions[:, 0] - x, positions[:, 1] - y) <= 3.0
        scale_ok = np.abs(np.log2(sigmas / (kp.sigma / 0.7))) <= 0.5
        if np.any(near & scale_ok):
            repeated += 1
    assert repeated / len(shrunk) >= 0.4
