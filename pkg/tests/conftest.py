"""Shared fixtures: textured faces, small galleries and on-disk corpora."""

import json
from pathlib import Path

import numpy as np
import pytest

from mugmatch.gallery import GalleryIndex, create_gallery, enroll
from mugmatch.models import ColorImage, FeatureSet, GrayImage, Keypoint
from mugmatch.synthetic import synthetic_corpus, synthetic_face, write_corpus

FACE_SIZE = 96
GOLDEN_DIR = Path(__file__).parent / "fixtures"


def as_color(face: GrayImage) -> ColorImage:
    return ColorImage(pixels=np.repeat(face.pixels[:, :, None], 3, axis=2))


def feature_set_at(points: list[tuple[float, float]]) -> FeatureSet:
    """FeatureSet with keypoints at the given (x, y) positions and zero descriptors."""
    keypoints = [Keypoint(x=x, y=y, octave=0, scale_index=1, sigma=2.0, response=0.05) for x, y in points]
    return FeatureSet(
        keypoints=keypoints,
        descriptors=np.zeros((len(points), 128), dtype=np.float32),
        source_dims=(200, 200),
    )


def assert_matches_golden(name: str, payload: dict) -> None:
    """Compare against a recorded JSON result, recording it on the first run."""
    path = GOLDEN_DIR / name
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        pytest.skip(f"recorded {path.name}, rerun to compare")
    assert json.loads(path.read_text(encoding="utf-8")) == payload


@pytest.fixture(scope="session")
def textured_face() -> GrayImage:
    return synthetic_face(seed=7, size=FACE_SIZE)


@pytest.fixture(scope="session")
def corpus() -> list[tuple[str, GrayImage]]:
    return synthetic_corpus(4, FACE_SIZE, seed=3)


@pytest.fixture(scope="session")
def small_gallery(corpus) -> GalleryIndex:
    gallery = create_gallery(canonical_size=FACE_SIZE)
    for identity_id, face in corpus:
        gallery = enroll(gallery, identity_id, identity_id.upper(), as_color(face))
    return gallery


@pytest.fixture
def corpus_dir(tmp_path) -> Path:
    directory = tmp_path / "faces"
    write_corpus(directory, n=3, size=FACE_SIZE, seed=5)
    return directory


@pytest.fixture
def canonical_env(monkeypatch):
    monkeypatch.setenv("MUGMATCH_CANONICAL_SIZE", str(FACE_SIZE))
    for name in ("MUGMATCH_GALLERY", "MUGMATCH_RATIO", "MUGMATCH_EIGEN_K", "MUGMATCH_PRESET", "MUGMATCH_PARAMS"):
        monkeypatch.delenv(name, raising=False)
