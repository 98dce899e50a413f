"""Offline corpus of textured synthetic faces."""

from pathlib import Path

import numpy as np
from rich.console import Console

from .errors import GalleryIoError
from .image_ops import blur_array, encode_png
from .models import GrayImage

console = Console(stderr=True)

DEFAULT_CORPUS_SIZE = 20
DEFAULT_FACE_SIZE = 300


def _ellipse(rows: np.ndarray, cols: np.ndarray, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def _draw_face(rng: np.random.Generator, size: int) -> GrayImage:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / size

    # background: soft vertical gradient
    top, bottom = rng.uniform(0.1, 0.35, size=2)
    canvas = top + (bottom - top) * rows

    head = _ellipse(rows, cols, 0.5 + rng.uniform(-0.02, 0.02), 0.5, rng.uniform(0.38, 0.44), rng.uniform(0.28, 0.34))
    canvas = np.where(head, rng.uniform(0.55, 0.75), canvas)

    hair_line = rng.uniform(0.2, 0.3)
    canvas = np.where(head & (rows < hair_line), rng.uniform(0.05, 0.25), canvas)

    eye_y = rng.uniform(0.38, 0.45)
    eye_dx = rng.uniform(0.1, 0.14)
    eye_ry, eye_rx = rng.uniform(0.025, 0.04), rng.uniform(0.04, 0.06)
    for side in (-1, 1):
        cx = 0.5 + side * eye_dx
        canvas = np.where(_ellipse(rows, cols, eye_y, cx, eye_ry, eye_rx), 0.95, canvas)
        canvas = np.where(_ellipse(rows, cols, eye_y, cx, eye_ry * 0.6, eye_ry * 0.6), rng.uniform(0.05, 0.3), canvas)
        brow = _ellipse(rows, cols, eye_y - rng.uniform(0.05, 0.07), cx, 0.012, eye_rx * 1.2)
        canvas = np.where(brow, rng.uniform(0.05, 0.3), canvas)

    nose = _ellipse(rows, cols, rng.uniform(0.55, 0.6), 0.5, rng.uniform(0.05, 0.08), rng.uniform(0.02, 0.035))
    canvas = np.where(nose, canvas - 0.12, canvas)
    mouth = _ellipse(rows, cols, rng.uniform(0.7, 0.75), 0.5, rng.uniform(0.015, 0.03), rng.uniform(0.07, 0.11))
    canvas = np.where(mouth, rng.uniform(0.2, 0.4), canvas)

    # identity-specific marks give the descriptor stage distinctive structure
    for _ in range(int(rng.integers(25, 40))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        radius = rng.uniform(0.006, 0.025)
        canvas = np.where(_ellipse(rows, cols, cy, cx, radius, radius * rng.uniform(0.6, 1.6)), rng.uniform(0, 1), canvas)

    texture = blur_array(rng.normal(0.0, 1.0, size=(size, size)), 2.0)
    texture *= 0.06 / max(float(texture.std()), 1e-12)
    canvas = blur_array(canvas, 1.0) + texture
    return GrayImage(pixels=np.clip(canvas, 0.0, 1.0))


def synthetic_face(seed: int, size: int = DEFAULT_FACE_SIZE) -> GrayImage:
    """A single textured face, fully determined by its seed."""
    return _draw_face(np.random.default_rng(seed), size)


def synthetic_corpus(
    n: int = DEFAULT_CORPUS_SIZE,
    size: int = DEFAULT_FACE_SIZE,
    seed: int = 0,
) -> list[tuple[str, GrayImage]]:
    """
    Generate n distinct identities.

    Args:
        n: Number of identities
        size: Side of each square face
        seed: Corpus seed

    Returns:
        (identity_id, face) pairs
    """
    return [(f"synth_{index:02d}", _draw_face(np.random.default_rng([seed, index]), size)) for index in range(n)]


def write_corpus(
    directory: Path,
    n: int = DEFAULT_CORPUS_SIZE,
    size: int = DEFAULT_FACE_SIZE,
    seed: int = 0,
) -> list[Path]:
    """Write the synthetic corpus as 8-bit PNG files named after their identity."""
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for identity_id, face in synthetic_corpus(n, size, seed):
            path = directory / f"{identity_id}.png"
            path.write_bytes(encode_png(face))
            paths.append(path)
    except OSError as e:
        raise GalleryIoError(f"cannot write corpus to {directory}: {e}") from e
    console.print(f"[green]✓[/green] Wrote {len(paths)} synthetic faces to {directory}")
    return paths
