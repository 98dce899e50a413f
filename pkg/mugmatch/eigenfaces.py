"""Eigenface subspace: PCA training, projection and nearest-neighbour ranking."""

import numpy as np

from .errors import DimensionMismatch, EmptyGallery, KOutOfRange, TooFewImages
from .models import EigenModel, EigenProjection, GrayImage

MAX_DEFAULT_COMPONENTS = 40
ZERO_VARIANCE = 1e-12


def default_k(n_images: int) -> int:
    """Number of eigenfaces kept when the caller does not choose: min(N-1, 40)."""
    return max(1, min(n_images - 1, MAX_DEFAULT_COMPONENTS))


def _complete_basis(components: np.ndarray, start: int) -> np.ndarray:
    """Replace rows from `start` on with unit vectors orthogonal to all earlier rows."""
    completed = components.copy()
    dimension = completed.shape[1]
    axis = 0
    for row in range(start, completed.shape[0]):
        while axis < dimension:
            candidate = np.zeros(dimension)
            candidate[axis] = 1.0
            axis += 1
            for previous in completed[:row]:
                candidate -= (previous @ candidate) * previous
            norm = np.linalg.norm(candidate)
            if norm > 1e-6:
                completed[row] = candidate / norm
                break
    return completed


def train(images: list[GrayImage], k: int) -> EigenModel:
    """
    Fit an eigenface model to a set of equally sized faces.

    Uses the N x N Gram matrix of the centred faces instead of the D x D
    covariance.

    Args:
        images: Training faces at the canonical size
        k: Number of components to keep, 1 <= k <= N-1

    Returns:
        EigenModel with orthonormal components and non-increasing eigenvalues
    """
    n = len(images)
    if n < 2:
        raise TooFewImages(f"PCA needs at least 2 images, got {n}")
    shape = images[0].shape
    if any(img.shape != shape for img in images):
        raise DimensionMismatch("all training images must have the same dimensions")
    if not 1 <= k <= n - 1:
        raise KOutOfRange(f"k must lie in 1..{n - 1}, got {k}")

    data = np.stack([img.pixels.ravel() for img in images])
    mean = data.mean(axis=0)
    centred = data - mean

    gram = centred @ centred.T
    values, vectors = np.linalg.eigh(gram)
    order = np.argsort(values, kind="stable")[::-1][:k]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]

    components = np.zeros((k, mean.size))
    eigenvalues = values / (n - 1)
    first_degenerate = k
    for row in range(k):
        if eigenvalues[row] < ZERO_VARIANCE:
            first_degenerate = row
            break
        face = centred.T @ vectors[:, row]
        components[row] = face / np.linalg.norm(face)
    if first_degenerate < k:
        eigenvalues[first_degenerate:] = 0.0
        components = _complete_basis(components, first_degenerate)

    # sign convention: largest-magnitude entry of every eigenface is positive
    for row in range(k):
        pivot = np.argmax(np.abs(components[row]))
        if components[row, pivot] < 0:
            components[row] = -components[row]

    return EigenModel(mean=mean, components=components, eigenvalues=eigenvalues, image_shape=shape)


def _check_vector(vector: np.ndarray, model: EigenModel) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if vector.size != model.dimension:
        raise DimensionMismatch(f"expected {model.dimension} values, got {vector.size}")
    return vector


def project_vector(vector: np.ndarray, model: EigenModel) -> np.ndarray:
    """Eigenspace coefficients of a face vector."""
    return model.components @ (_check_vector(vector, model) - model.mean)


def project(img: GrayImage, model: EigenModel, identity_id: str | None = None) -> EigenProjection:
    """Transform a face into eigenspace."""
    if img.shape != model.image_shape:
        raise DimensionMismatch(f"image is {img.shape}, model expects {model.image_shape}")
    return EigenProjection(coefficients=project_vector(img.pixels, model), identity_id=identity_id)


def reconstruct_vector(coefficients: np.ndarray, model: EigenModel) -> np.ndarray:
    """Unclamped face vector mean + components^T . coefficients."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (model.k,):
        raise DimensionMismatch(f"expected {model.k} coefficients, got {coefficients.shape}")
    return model.mean + model.components.T @ coefficients


def reconstruct(coeffs: EigenProjection, model: EigenModel) -> GrayImage:
    """Face image rebuilt from eigenspace coefficients, clamped to [0, 1] for display."""
    vector = reconstruct_vector(coeffs.coefficients, model)
    return GrayImage(pixels=np.clip(vector, 0.0, 1.0).reshape(model.image_shape))


def reconstruction_error(img: GrayImage, model: EigenModel) -> float:
    """Euclidean distance between a face and its unclamped reconstruction."""
    vector = img.pixels.ravel()
    rebuilt = reconstruct_vector(project_vector(vector, model), model)
    return float(np.linalg.norm(vector - rebuilt))


def nearest_face(
    query: EigenProjection,
    gallery: list[EigenProjection],
    eigenvalues: np.ndarray | None = None,
) -> list[tuple[str | None, float]]:
    """
    Rank gallery projections by Euclidean distance to the query.

    Args:
        query: Query projection
        gallery: Gallery projections in enrolment order
        eigenvalues: Optional model eigenvalues; components with zero variance are ignored

    Returns:
        (identity_id, distance) pairs, nearest first, ties in enrolment order
    """
    if not gallery:
        raise EmptyGallery("cannot rank against an empty gallery")
    k = query.coefficients.size
    if any(entry.coefficients.size != k for entry in gallery):
        raise DimensionMismatch("query and gallery projections must have the same length")

    keep = np.ones(k, dtype=bool)
    if eigenvalues is not None:
        keep = np.asarray(eigenvalues) >= ZERO_VARIANCE
    matrix = np.stack([entry.coefficients[keep] for entry in gallery])
    distances = np.linalg.norm(matrix - query.coefficients[keep], axis=1)
    order = np.argsort(distances, kind="stable")
    return [(gallery[i].identity_id, float(distances[i])) for i in order]
