"""Descriptor matching, angle-line-ratio verification and gallery ranking."""

import math

import numpy as np
from pydantic import Field

from .errors import EmptyFeatureSet, EmptyGallery, InvalidParams
from .models import ALRParams, ArrayModel, Descriptor, FeatureSet, MatchPair, ScoredCandidate

DEFAULT_RATIO = 0.8
MIN_SEGMENT_LENGTH = 1e-9
TWO_PI = 2.0 * math.pi


def _row_distances(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Euclidean distances from one descriptor to every gallery row (float64)."""
    return np.sqrt(((gallery - query) ** 2).sum(axis=1))


def nearest_two(query_desc: Descriptor | np.ndarray, gallery_fs: FeatureSet) -> tuple[int, float, float]:
    """
    Exhaustive nearest and second-nearest search.

    Args:
        query_desc: Query descriptor
        gallery_fs: Gallery features

    Returns:
        (best_idx, dist_best, dist_second); dist_second is +inf for a single-descriptor gallery
    """
    if len(gallery_fs) == 0:
        raise EmptyFeatureSet("gallery feature set has no descriptors")
    values = query_desc.values if isinstance(query_desc, Descriptor) else np.asarray(query_desc)
    distances = _row_distances(np.asarray(values, dtype=np.float64), gallery_fs.descriptors.astype(np.float64))
    return _best_two(distances)


def _best_two(distances: np.ndarray) -> tuple[int, float, float]:
    best = int(np.argmin(distances))
    if distances.size == 1:
        return best, float(distances[best]), math.inf
    others = np.delete(distances, best)
    return best, float(distances[best]), float(others.min())


def ratio_match(query_fs: FeatureSet, gallery_fs: FeatureSet, fraction: float = DEFAULT_RATIO) -> list[MatchPair]:
    """
    Keep query keypoints whose nearest gallery descriptor is distinctive.

    A pair survives when dist_best < fraction * dist_second. When two query
    keypoints claim the same gallery keypoint only the closer pair is kept.

    Returns:
        Matches ordered by query index
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidParams(f"fraction must lie in (0, 1], got {fraction}")
    if len(query_fs) == 0 or len(gallery_fs) == 0:
        return []

    gallery = gallery_fs.descriptors.astype(np.float64)
    claims: dict[int, MatchPair] = {}
    for query_idx, query in enumerate(query_fs.descriptors.astype(np.float64)):
        best, dist_best, dist_second = _best_two(_row_distances(query, gallery))
        if not dist_best < fraction * dist_second:
            continue
        pair = MatchPair(query_idx=query_idx, gallery_idx=best, dist_best=dist_best, dist_second=dist_second)
        current = claims.get(best)
        if current is None or pair.dist_best < current.dist_best:
            claims[best] = pair
    return sorted(claims.values(), key=lambda pair: pair.query_idx)


class ALRStatistics(ArrayModel):
    """Pairwise ratio/angle votes of a match set."""

    histogram: np.ndarray = Field(description="Vote counts, shape (ratio_bins, angle_bins)")
    dominant: tuple[int, int] | None = Field(description="(ratio_bin, angle_bin) with the most votes")
    support: np.ndarray = Field(description="Per match: pairings landing near the dominant cell")
    pairings: np.ndarray = Field(description="Per match: pairings with a usable gallery segment")


def ratio_bin_range(bin_index: int, params: ALRParams) -> tuple[float, float]:
    """Half-open [low, high) length-ratio interval covered by a ratio bin."""
    lo, hi = math.log2(params.ratio_min), math.log2(params.ratio_max)
    width = (hi - lo) / params.ratio_bins
    return 2.0 ** (lo + bin_index * width), 2.0 ** (lo + (bin_index + 1) * width)


def angle_bin_range(bin_index: int, params: ALRParams) -> tuple[float, float]:
    """Half-open [low, high) angle interval (radians) covered by an angle bin; bins are centred on multiples of the width."""
    width = TWO_PI / params.angle_bins
    centre = bin_index * width - math.pi
    return centre - 0.5 * width, centre + 0.5 * width


def _ratio_bins(ratios: np.ndarray, params: ALRParams) -> np.ndarray:
    lo, hi = math.log2(params.ratio_min), math.log2(params.ratio_max)
    with np.errstate(divide="ignore"):
        position = (np.log2(ratios) - lo) * params.ratio_bins / (hi - lo)
    bins = np.floor(position)
    # out-of-range ratios get -1 and vote for nothing
    return np.where((bins >= 0) & (bins < params.ratio_bins), bins, -1).astype(np.intp)


def _angle_bins(deltas: np.ndarray, params: ALRParams) -> np.ndarray:
    position = (deltas + math.pi) * params.angle_bins / TWO_PI + 0.5
    return np.floor(position).astype(np.intp) % params.angle_bins


def alr_statistics(
    matches: list[MatchPair],
    query_fs: FeatureSet,
    gallery_fs: FeatureSet,
    params: ALRParams,
) -> ALRStatistics:
    """Vote every unordered pair of matches into the ratio/angle histogram."""
    n = len(matches)
    histogram = np.zeros((params.ratio_bins, params.angle_bins), dtype=np.int64)
    support = np.zeros(n, dtype=np.int64)
    pairings = np.zeros(n, dtype=np.int64)
    if n < 2:
        return ALRStatistics(histogram=histogram, dominant=None, support=support, pairings=pairings)

    q = query_fs.positions()[[m.query_idx for m in matches]]
    g = gallery_fs.positions()[[m.gallery_idx for m in matches]]
    first, second = np.triu_indices(n, k=1)
    q_seg = q[second] - q[first]
    g_seg = g[second] - g[first]
    q_len = np.hypot(q_seg[:, 0], q_seg[:, 1])
    g_len = np.hypot(g_seg[:, 0], g_seg[:, 1])

    usable = g_len >= MIN_SEGMENT_LENGTH
    first, second = first[usable], second[usable]
    q_seg, g_seg, q_len, g_len = q_seg[usable], g_seg[usable], q_len[usable], g_len[usable]

    ratios = q_len / g_len
    deltas = np.arctan2(q_seg[:, 1], q_seg[:, 0]) - np.arctan2(g_seg[:, 1], g_seg[:, 0])
    deltas = np.mod(deltas + math.pi, TWO_PI) - math.pi
    ratio_bin = _ratio_bins(ratios, params)
    angle_bin = _angle_bins(deltas, params)

    voting = ratio_bin >= 0
    np.add.at(histogram, (ratio_bin[voting], angle_bin[voting]), 1)
    np.add.at(pairings, first, 1)
    np.add.at(pairings, second, 1)

    if histogram.max() == 0:
        return ALRStatistics(histogram=histogram, dominant=None, support=support, pairings=pairings)
    dominant_ratio, dominant_angle = np.unravel_index(int(np.argmax(histogram)), histogram.shape)

    band = params.inlier_band
    angle_gap = np.abs(angle_bin - dominant_angle)
    angle_gap = np.minimum(angle_gap, params.angle_bins - angle_gap)
    consistent = voting & (np.abs(ratio_bin - dominant_ratio) <= band) & (angle_gap <= band)
    np.add.at(support, first[consistent], 1)
    np.add.at(support, second[consistent], 1)
    return ALRStatistics(
        histogram=histogram,
        dominant=(int(dominant_ratio), int(dominant_angle)),
        support=support,
        pairings=pairings,
    )


def alr_filter(
    matches: list[MatchPair],
    query_fs: FeatureSet,
    gallery_fs: FeatureSet,
    params: ALRParams | None = None,
) -> list[MatchPair]:
    """
    Drop matches that disagree with the dominant angle/length-ratio relation.

    A match survives when at least min_pair_votes of its pairings land within
    inlier_band bins of the dominant histogram cell.
    """
    params = params or ALRParams()
    if len(matches) < 2:
        return list(matches)
    stats = alr_statistics(matches, query_fs, gallery_fs, params)
    if stats.dominant is None:
        return []
    return [
        match
        for match, won, total in zip(matches, stats.support, stats.pairings)
        if total > 0 and won / total >= params.min_pair_votes
    ]


def score_candidate(
    query_fs: FeatureSet,
    gallery_fs: FeatureSet,
    fraction: float = DEFAULT_RATIO,
    alr: ALRParams | None = None,
    identity_id: str = "",
    enrollment_index: int = 0,
) -> ScoredCandidate:
    """Ratio-test then ALR-filter one gallery face; the score is the inlier count."""
    raw = ratio_match(query_fs, gallery_fs, fraction)
    inliers = alr_filter(raw, query_fs, gallery_fs, alr)
    return ScoredCandidate(
        identity_id=identity_id,
        enrollment_index=enrollment_index,
        raw_matches=len(raw),
        inlier_matches=len(inliers),
        inlier_pairs=inliers,
    )


def identify(
    query_fs: FeatureSet,
    gallery: list[tuple[str, FeatureSet]],
    fraction: float = DEFAULT_RATIO,
    alr: ALRParams | None = None,
) -> list[ScoredCandidate]:
    """
    Rank gallery identities by verified match count.

    Args:
        query_fs: Query features
        gallery: (identity_id, features) in enrolment order
        fraction: Ratio-test threshold
        alr: ALR parameters

    Returns:
        Candidates by descending inliers, then raw matches, then enrolment order
    """
    if not gallery:
        raise EmptyGallery("cannot identify against an empty gallery")
    scored = [
        score_candidate(query_fs, features, fraction, alr, identity_id=identity_id, enrollment_index=index)
        for index, (identity_id, features) in enumerate(gallery)
    ]
    return sorted(scored, key=lambda c: (-c.inlier_matches, -c.raw_matches, c.enrollment_index))
