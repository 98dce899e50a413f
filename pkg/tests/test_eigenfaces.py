import numpy as np
import pytest

from mugmatch.eigenfaces import (
    default_k,
    nearest_face,
    project,
    reconstruct,
    reconstruction_error,
    train,
)
from mugmatch.errors import DimensionMismatch, EmptyGallery, KOutOfRange, TooFewImages
from mugmatch.models import EigenProjection, GrayImage

TOY_FACES = np.array(
    [
        [0.1, 0.2, 0.3, 0.4],
        [0.9, 0.1, 0.5, 0.3],
        [0.2, 0.8, 0.6, 0.1],
    ]
)


def toy_images() -> list[GrayImage]:
    return [GrayImage(pixels=row.reshape(2, 2)) for row in TOY_FACES]


def random_gallery(n: int = 10, side: int = 8, seed: int = 4) -> list[GrayImage]:
    rng = np.random.default_rng(seed)
    return [GrayImage(pixels=rng.random((side, side))) for _ in range(n)]


class TestTrain:
    def test_matches_dense_covariance(self):
        model = train(toy_images(), 2)

        mean = TOY_FACES.mean(axis=0)
        covariance = np.cov(TOY_FACES, rowvar=False)
        values, vectors = np.linalg.eigh(covariance)
        order = np.argsort(values)[::-1][:2]

        assert np.allclose(model.mean, mean, atol=1e-12)
        assert np.allclose(model.eigenvalues, values[order], atol=1e-8)
        for row, column in enumerate(order):
            assert abs(model.components[row] @ vectors[:, column]) == pytest.approx(1.0, abs=1e-8)

    def test_projection_matches_oracle_up_to_sign(self):
        model = train(toy_images(), 2)
        values, vectors = np.linalg.eigh(np.cov(TOY_FACES, rowvar=False))
        basis = vectors[:, np.argsort(values)[::-1][:2]].T
        centred = TOY_FACES[0] - TOY_FACES.mean(axis=0)

        coefficients = project(toy_images()[0], model).coefficients
        assert np.allclose(np.abs(coefficients), np.abs(basis @ centred), atol=1e-8)

    def test_components_orthonormal(self):
        model = train(random_gallery(), 9)
        gram = model.components @ model.components.T
        assert np.allclose(gram, np.eye(9), atol=1e-6)

    def test_eigenvalues_non_increasing(self):
        model = train(random_gallery(), 9)
        assert np.all(np.diff(model.eigenvalues) <= 1e-12)

    def test_sign_convention(self):
        model = train(random_gallery(), 5)
        for component in model.components:
            assert component[np.argmax(np.abs(component))] > 0

    def test_full_rank_reconstruction(self):
        images = random_gallery()
        model = train(images, 9)
        for img in images:
            assert reconstruction_error(img, model) < 1e-6

    def test_reconstruction_error_non_increasing_in_k(self):
        images = random_gallery()
        errors = [reconstruction_error(images[3], train(images, k)) for k in range(1, 10)]
        assert all(later <= earlier + 1e-9 for earlier, later in zip(errors, errors[1:]))

    def test_identical_images_complete_the_basis(self):
        face = GrayImage(pixels=np.full((3, 3), 0.4))
        model = train([face, face, face], 2)
        assert model.has_degenerate_variance
        assert np.allclose(model.components @ model.components.T, np.eye(2), atol=1e-9)

    def test_quantized_model_stays_orthonormal(self):
        model = train(random_gallery(), 9).quantized()
        assert model.components.dtype == np.float64
        assert np.allclose(model.components @ model.components.T, np.eye(9), atol=1e-6)

    @pytest.mark.parametrize("k", [0, 3])
    def test_k_out_of_range(self, k):
        with pytest.raises(KOutOfRange):
            train(toy_images(), k)

    def test_too_few_images(self):
        with pytest.raises(TooFewImages):
            train(toy_images()[:1], 1)

    def test_mixed_sizes(self):
        with pytest.raises(DimensionMismatch):
            train([GrayImage.constant(2, 2, 0.1), GrayImage.constant(3, 2, 0.2)], 1)

    def test_default_k(self):
        assert default_k(10) == 9
        assert default_k(100) == 40


class TestProjection:
    def test_reconstruct_is_clamped_image(self):
        images = random_gallery()
        model = train(images, 9)
        rebuilt = reconstruct(project(images[0], model), model)
        assert rebuilt.shape == images[0].shape
        assert np.allclose(rebuilt.pixels, images[0].pixels, atol=1e-6)

    def test_project_wrong_size(self):
        model = train(toy_images(), 2)
        with pytest.raises(DimensionMismatch):
            project(GrayImage.constant(3, 3, 0.5), model)

    def test_nearest_face_ranks_own_projection_first(self):
        images = random_gallery()
        model = train(images, 9)
        gallery = [project(img, model, f"id{i}") for i, img in enumerate(images)]
        ranked = nearest_face(project(images[6], model), gallery, model.eigenvalues)
        assert ranked[0] == ("id6", pytest.approx(0.0, abs=1e-9))
        distances = [distance for _, distance in ranked]
        assert distances == sorted(distances)

    def test_nearest_face_ties_keep_enrolment_order(self):
        query = EigenProjection(coefficients=[0.0, 0.0])
        gallery = [
            EigenProjection(coefficients=[1.0, 0.0], identity_id="b"),
            EigenProjection(coefficients=[0.0, 1.0], identity_id="a"),
        ]
        assert [identity for identity, _ in nearest_face(query, gallery)] == ["b", "a"]

    def test_nearest_face_ignores_zero_variance_components(self):
        query = EigenProjection(coefficients=[0.0, 5.0])
        gallery = [
            EigenProjection(coefficients=[1.0, 5.0], identity_id="near"),
            EigenProjection(coefficients=[0.5, -9.0], identity_id="far"),
        ]
        ranked = nearest_face(query, gallery, np.array([1.0, 0.0]))
        assert ranked[0][0] == "far"

    def test_nearest_face_ranking_survives_common_offset(self):
        rng = np.random.default_rng(12)
        query = rng.normal(size=6)
        rows = rng.normal(size=(8, 6))
        offset = rng.normal(size=6) * 10.0
        plain = nearest_face(
            EigenProjection(coefficients=query),
            [EigenProjection(coefficients=row, identity_id=f"id{i}") for i, row in enumerate(rows)],
        )
        shifted = nearest_face(
            EigenProjection(coefficients=query + offset),
            [EigenProjection(coefficients=row + offset, identity_id=f"id{i}") for i, row in enumerate(rows)],
        )
        assert [identity for identity, _ in shifted] == [identity for identity, _ in plain]
        assert [d for _, d in shifted] == pytest.approx([d for _, d in plain], rel=1e-9)

    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            nearest_face(EigenProjection(coefficients=[1.0]), [])
