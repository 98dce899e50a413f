"""Benchmark execution: identification rate, CMC curves and the desk experiment."""

from collections.abc import Sequence
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn

from .eigenfaces import nearest_face, project
from .errors import EmptyOutcomes, GalleryIoError, ManifestError, UnknownIdentity
from .gallery import GalleryIndex, create_gallery, require_eigen_model, train_eigenfaces
from .gallery import enroll as enroll_face
from .image_ops import load_image, resize_bilinear, to_grayscale
from .manipulation import generate_manipulation, preset_spec
from .matching import DEFAULT_RATIO, identify
from .models import ALRParams, ColorImage, EvalReport, GrayImage, PyramidParams, QueryOutcome
from .sift import extract_features
from .synthetic import synthetic_corpus

console = Console(stderr=True)

Method = Literal["sift", "pca"]


class QueryEntry(BaseModel):
    """One line of a benchmark query manifest."""

    query_path: Path = Field(description="Query image, relative paths resolved against the manifest")
    true_identity: str = Field(description="Identity the query should retrieve")
    line: int = Field(description="1-based manifest line number")


def identification_rate(outcomes: Sequence[bool]) -> float:
    """Percentage of queries whose true identity was retrieved first."""
    if not outcomes:
        raise EmptyOutcomes("identification rate needs at least one query outcome")
    return 100.0 * sum(bool(outcome) for outcome in outcomes) / len(outcomes)


def cmc_curve(per_query_ranks: Sequence[int], max_rank: int) -> list[float]:
    """
    Cumulative match characteristic.

    Args:
        per_query_ranks: 1-based rank of the true identity for every query
        max_rank: Number of ranks to report

    Returns:
        rate[k-1] = percent of queries with rank <= k, for k = 1..max_rank
    """
    if any(rank < 1 for rank in per_query_ranks):
        raise ValueError("ranks are 1-based")
    if not per_query_ranks:
        raise EmptyOutcomes("CMC curve needs at least one query rank")
    return [identification_rate([rank <= k for rank in per_query_ranks]) for k in range(1, max_rank + 1)]


def _canonical(gallery: GalleryIndex, img: GrayImage) -> GrayImage:
    width, height = gallery.canonical_size
    if img.shape == (height, width):
        return img
    return resize_bilinear(img, width, height)


def rank_identities(
    gallery: GalleryIndex,
    img: GrayImage,
    method: Method,
    fraction: float = DEFAULT_RATIO,
    alr: ALRParams | None = None,
) -> list[tuple[str, float]]:
    """
    Rank every enrolled identity for one query face.

    Returns:
        (identity_id, score) best first; score is the inlier count for sift and
        the eigenspace distance for pca
    """
    face = _canonical(gallery, img)
    if method == "pca":
        model = require_eigen_model(gallery)
        projections = [record.eigen_coeffs for record in gallery.records]
        ranked = nearest_face(project(face, model), projections, model.eigenvalues)
        return [(identity_id or "", distance) for identity_id, distance in ranked]

    features = extract_features(face, gallery.params)
    candidates = identify(features, gallery.feature_gallery(), fraction, alr)
    return [(candidate.identity_id, float(candidate.inlier_matches)) for candidate in candidates]


def run_benchmark(
    gallery: GalleryIndex,
    queries: Sequence[tuple[str, GrayImage]],
    method: Method,
    fraction: float = DEFAULT_RATIO,
    alr: ALRParams | None = None,
    query_ids: Sequence[str] | None = None,
) -> EvalReport:
    """
    Query the gallery with every image and score where the true identity lands.

    Args:
        gallery: Enrolled identities
        queries: (true_identity, query face) pairs
        method: "sift" or "pca"
        fraction: Ratio-test threshold for the sift path
        alr: ALR parameters for the sift path
        query_ids: Optional names for the queries, defaults to their index

    Returns:
        EvalReport with per-query ranks, identification rate and CMC
    """
    alr = alr or ALRParams()
    enrolled = set(gallery.identity_ids())
    for true_identity, _ in queries:
        if true_identity not in enrolled:
            raise UnknownIdentity(true_identity)
    if method == "pca":
        model = require_eigen_model(gallery)

    query_ids = list(query_ids) if query_ids is not None else [f"q{index:03d}" for index in range(len(queries))]
    outcomes: list[QueryOutcome] = []
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
    ) as progress:
        task = progress.add_task(f"[cyan]Running {method} benchmark...", total=len(queries))
        for query_id, (true_identity, img) in zip(query_ids, queries):
            progress.update(task, description=f"[cyan]{method}: {query_id}")
            ranked = rank_identities(gallery, img, method, fraction, alr)
            ranking = [identity_id for identity_id, _ in ranked]
            top1_id, top1_score = ranked[0]
            outcomes.append(
                QueryOutcome(
                    query_id=query_id,
                    true_identity=true_identity,
                    rank=ranking.index(true_identity) + 1,
                    top1_id=top1_id,
                    top1_score=top1_score,
                )
            )
            progress.advance(task)

    ranks = [outcome.rank for outcome in outcomes]
    params = {
        "method": method,
        "canonical_size": list(gallery.canonical_size),
        "pyramid": gallery.params.model_dump(mode="json"),
    }
    if method == "sift":
        params.update(ratio=fraction, alr=alr.model_dump(mode="json"))
    else:
        params.update(eigen_k=model.k)

    rate = identification_rate([rank == 1 for rank in ranks])
    console.print(f"[green]✓[/green] {method}: identification rate {rate:.2f}% over {len(outcomes)} queries")
    return EvalReport(
        method=method,
        per_query=outcomes,
        identification_rate=rate,
        cmc=cmc_curve(ranks, len(gallery)),
        params=params,
    )


def parse_query_manifest(path: Path) -> list[QueryEntry]:
    """
    Read a query manifest: one `query_path<TAB>true_identity` per line.

    Blank lines and lines starting with '#' are ignored.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise GalleryIoError(f"cannot read manifest {path}: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise ManifestError(f"{path} is not UTF-8 text") from e

    entries: list[QueryEntry] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
            raise ManifestError(f"{path}:{number}: expected 'query_path<TAB>true_identity', got {raw!r}")
        query_path = Path(fields[0].strip())
        if not query_path.is_absolute():
            query_path = path.parent / query_path
        entries.append(QueryEntry(query_path=query_path, true_identity=fields[1].strip(), line=number))
    if not entries:
        raise ManifestError(f"{path} lists no queries")
    return entries


def load_manifest_queries(path: Path) -> tuple[list[str], list[tuple[str, GrayImage]]]:
    """Parse a manifest and decode its query images to grayscale."""
    entries = parse_query_manifest(path)
    query_ids = [entry.query_path.stem for entry in entries]
    queries = [(entry.true_identity, to_grayscale(load_image(entry.query_path))) for entry in entries]
    return query_ids, queries


def _as_color(face: GrayImage) -> ColorImage:
    return ColorImage(pixels=face.pixels[:, :, None].repeat(3, axis=2))


def build_desk_benchmark(
    corpus: Sequence[tuple[str, GrayImage]] | None = None,
    preset: str = "moderate",
    seed: int = 0,
    params: PyramidParams | None = None,
    canonical_size: int = 300,
    eigen_k: int | None = None,
) -> tuple[GalleryIndex, list[str], list[tuple[str, GrayImage]]]:
    """
    Enrol a face corpus and derive one seeded manipulated query per identity.

    Args:
        corpus: (identity_id, face) pairs; the synthetic corpus when None
        preset: Manipulation severity
        seed: Base seed, query i uses seed + i
        params: Extraction parameters
        canonical_size: Side of the canonical face
        eigen_k: Eigenfaces to train

    Returns:
        (trained gallery, query ids, queries)
    """
    if corpus is None:
        corpus = synthetic_corpus(size=canonical_size, seed=seed)

    gallery = create_gallery(params, canonical_size)
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
    ) as progress:
        task = progress.add_task("[cyan]Enrolling desk gallery...", total=len(corpus))
        for identity_id, face in corpus:
            gallery = enroll_face(gallery, identity_id, identity_id, _as_color(face))
            progress.advance(task)
    gallery = train_eigenfaces(gallery, eigen_k)

    query_ids: list[str] = []
    queries: list[tuple[str, GrayImage]] = []
    for index, record in enumerate(gallery.records):
        spec = preset_spec(preset, seed + index)
        query_ids.append(f"{record.identity_id}_{preset}")
        queries.append((record.identity_id, generate_manipulation(record.face, spec)))
    console.print(f"[green]✓[/green] Desk benchmark: {len(gallery)} identities, preset {preset}, seed {seed}")
    return gallery, query_ids, queries
