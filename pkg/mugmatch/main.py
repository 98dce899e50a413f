"""Mugmatch CLI - enrol faces, identify manipulated queries and benchmark SIFT against eigenfaces."""

import math
from pathlib import Path
from typing import NoReturn

import click
from rich.console import Console
from rich.markup import escape

from . import __version__
from .config import PRESETS, CliConfig, Settings
from .eigenfaces import nearest_face, project
from .errors import EmptyGallery, UnknownIdentity
from .evaluation import build_desk_benchmark, load_manifest_queries, run_benchmark
from .gallery import (
    MANIFEST_NAME,
    GalleryIndex,
    canonical_face,
    create_gallery,
    enroll_directory,
    load,
    require_eigen_model,
    save,
    train_eigenfaces,
)
from .gallery import enroll as enroll_face
from .image_ops import encode_png, load_image, preprocess, to_grayscale
from .manipulation import Blur, Brightness, Contrast, LocalWarp, Noise, Occlude, generate_manipulation, preset_spec
from .matching import alr_filter, alr_statistics, angle_bin_range, identify, ratio_bin_range, ratio_match
from .models import EvalReport
from .report import RankedResult, ReportWriter, render_matches
from .sift import extract_features, extract_features_with_stats
from .synthetic import synthetic_corpus, write_corpus

# Diagnostics go to stderr, machine-readable output to stdout
console = Console(stderr=True)
stdout = Console()


def _fail(error: Exception) -> NoReturn:
    console.print(f"[bold red]✗ Error:[/bold red] {escape(str(error))}")
    raise click.Abort()


def _invocation(command: str, **params: object) -> None:
    flags = " ".join(
        f"--{name.replace('_', '-')}" if value is True else f"--{name.replace('_', '-')} {value}"
        for name, value in params.items()
        if value is not None and value is not False
    )
    console.print(f"[dim]mugmatch {command} {flags}[/dim]")


def _load_gallery(config: CliConfig) -> GalleryIndex:
    # an explicit parameters file must agree with what the gallery was built with
    return load(config.gallery_dir, expected_params=config.pyramid if config.params_file else None)


def _open_gallery(config: CliConfig, settings: Settings) -> GalleryIndex:
    if (config.gallery_dir / MANIFEST_NAME).exists():
        return _load_gallery(config)
    return create_gallery(params=config.pyramid, canonical_size=settings.canonical_size)


gallery_option = click.option(
    "--gallery",
    "gallery_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Gallery directory (default: $MUGMATCH_GALLERY or .mugmatch_gallery)",
)
format_option = click.option(
    "--format",
    "output_format",
    type=click.Choice(["text", "csv"]),
    default="text",
    help="Output format",
)
params_option = click.option(
    "--params",
    "params_file",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="JSON file with pyramid/alr parameters (default: $MUGMATCH_PARAMS)",
)


@click.group()
@click.version_option(version=__version__)
def cli():
    """Mugmatch - identify manipulated mugshots with SIFT and eigenfaces."""
    pass


@cli.command()
@click.argument("image", required=False, type=click.Path(path_type=Path))
@click.option("--id", "identity_id", help="Identity key for IMAGE")
@click.option("--label", help="Display name (defaults to the id)")
@click.option(
    "--from-dir",
    type=click.Path(path_type=Path),
    help="Enrol every image in a directory, keyed by file stem",
)
@params_option
@gallery_option
def enroll(
    image: Path | None,
    identity_id: str | None,
    label: str | None,
    from_dir: Path | None,
    params_file: Path | None,
    gallery_dir: Path | None,
):
    """Enrol a face image into the gallery."""
    if from_dir is None and (image is None or identity_id is None):
        raise click.UsageError("give IMAGE with --id, or --from-dir DIR")

    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(settings, gallery_dir=gallery_dir, params_file=params_file)
        gallery = _open_gallery(config, settings)
        _invocation(
            "enroll", id=identity_id, from_dir=from_dir, params=config.params_file, gallery=config.gallery_dir
        )

        if from_dir is not None:
            before = len(gallery)
            gallery = enroll_directory(gallery, from_dir)
            for record in gallery.records[before:]:
                click.echo(f"{record.identity_id}\t{len(record.feature_set)}")
        else:
            gallery = enroll_face(gallery, identity_id, label or identity_id, load_image(image), str(image))
            record = gallery.records[-1]
            console.print(f"[green]✓[/green] Enrolled {identity_id}: {len(record.feature_set)} keypoints")
            click.echo(f"{identity_id}\t{len(record.feature_set)}")

        save(gallery, config.gallery_dir)
        console.print(f"[green]✓[/green] Gallery {config.gallery_dir} now holds {len(gallery)} identities")
    except Exception as e:
        _fail(e)


@cli.command()
@click.option("--eigen-k", type=int, default=None, help="Eigenfaces to keep (default: min(N-1, 40))")
@gallery_option
def train(eigen_k: int | None, gallery_dir: Path | None):
    """Train the eigenface model on the enrolled faces."""
    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(settings, gallery_dir=gallery_dir, eigen_k=eigen_k)
        gallery = load(config.gallery_dir)
        _invocation("train", gallery=config.gallery_dir, eigen_k=config.eigen_k)

        gallery = train_eigenfaces(gallery, config.eigen_k)
        save(gallery, config.gallery_dir)
        model = gallery.eigen_model
        console.print(f"[green]✓[/green] Trained {model.k} eigenfaces on {len(gallery)} faces")
        if model.has_degenerate_variance:
            console.print("[yellow]⚠[/yellow] Some components carry zero variance and are ignored when ranking")
        click.echo(str(model.k))
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.option("--method", type=click.Choice(["sift", "pca"]), default="sift", help="Matching method")
@click.option("--ratio", type=float, default=None, help="Ratio-test fraction (default 0.8)")
@click.option("--top", type=click.IntRange(min=1), default=None, help="Rows to print")
@format_option
@params_option
@gallery_option
def query(
    image: Path,
    method: str,
    ratio: float | None,
    top: int | None,
    output_format: str,
    params_file: Path | None,
    gallery_dir: Path | None,
):
    """Identify the person in IMAGE."""
    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(
            settings, gallery_dir=gallery_dir, ratio=ratio, output_format=output_format, params_file=params_file
        )
        gallery = _load_gallery(config)
        if len(gallery) == 0:
            raise EmptyGallery(f"gallery {config.gallery_dir} is empty")
        _invocation(
            "query", method=method, ratio=config.ratio, top=top, params=config.params_file, gallery=config.gallery_dir
        )

        face = canonical_face(gallery, load_image(image))
        labels = {record.identity_id: record.label for record in gallery.records}
        if method == "sift":
            features = extract_features(face, gallery.params)
            console.print(f"[cyan]→[/cyan] Query has {len(features)} keypoints")
            candidates = identify(features, gallery.feature_gallery(), config.ratio, config.alr)
            results = [
                RankedResult(
                    rank=rank,
                    identity_id=candidate.identity_id,
                    label=labels[candidate.identity_id],
                    score=candidate.inlier_matches,
                    inliers=candidate.inlier_matches,
                    raw_matches=candidate.raw_matches,
                )
                for rank, candidate in enumerate(candidates, start=1)
            ]
        else:
            model = require_eigen_model(gallery)
            projections = [record.eigen_coeffs for record in gallery.records]
            ranked = nearest_face(project(face, model), projections, model.eigenvalues)
            results = [
                RankedResult(rank=rank, identity_id=identity_id, label=labels[identity_id], score=distance)
                for rank, (identity_id, distance) in enumerate(ranked, start=1)
            ]

        results = results[:top] if top else results
        writer = ReportWriter()
        if config.output_format == "csv":
            click.echo(writer.ranking_csv(results), nl=False)
        else:
            stdout.print(writer.ranking_table(results, method))
    except Exception as e:
        _fail(e)


def _emit_reports(reports: list[EvalReport], output_format: str, cmc: bool, report_dir: Path | None) -> None:
    writer = ReportWriter()
    if output_format == "csv":
        click.echo(writer.summary_csv(reports), nl=False)
    else:
        for report in reports:
            stdout.print(writer.outcomes_table(report))
        stdout.print(writer.summary_table(reports))
    if cmc:
        for report in reports:
            click.echo(f"# {report.method}")
            click.echo(writer.cmc_csv(report), nl=False)
    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            (report_dir / f"{report.method}_queries.csv").write_text(writer.outcomes_csv(report), encoding="utf-8")
            (report_dir / f"{report.method}_cmc.csv").write_text(writer.cmc_csv(report), encoding="utf-8")
        console.print(f"[green]✓[/green] Reports written to {report_dir}")


@cli.command()
@click.argument("manifest", required=False, type=click.Path(path_type=Path))
@click.option("--desk", is_flag=True, help="Run the synthetic desk benchmark instead of a manifest")
@click.option("--method", type=click.Choice(["sift", "pca", "both"]), default="both", help="Methods to evaluate")
@click.option("--preset", type=click.Choice(PRESETS), default=None, help="Manipulation severity for --desk")
@click.option("--seed", type=int, default=0, show_default=True, help="Desk benchmark seed")
@click.option("--count", type=click.IntRange(min=2), default=20, show_default=True, help="Desk identities")
@click.option("--ratio", type=float, default=None, help="Ratio-test fraction (default 0.8)")
@click.option("--eigen-k", type=int, default=None, help="Eigenfaces for --desk")
@click.option("--cmc", is_flag=True, help="Also print CMC rank,rate rows")
@click.option(
    "--report-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Write per-query and CMC CSV files here",
)
@format_option
@params_option
@gallery_option
def bench(
    manifest: Path | None,
    desk: bool,
    method: str,
    preset: str | None,
    seed: int,
    count: int,
    ratio: float | None,
    eigen_k: int | None,
    cmc: bool,
    report_dir: Path | None,
    output_format: str,
    params_file: Path | None,
    gallery_dir: Path | None,
):
    """Benchmark identification rate over a query manifest or the desk corpus."""
    if manifest is None and not desk:
        raise click.UsageError("give a MANIFEST or --desk")

    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(
            settings,
            gallery_dir=gallery_dir,
            ratio=ratio,
            eigen_k=eigen_k,
            preset=preset,
            output_format=output_format,
            params_file=params_file,
        )
        if desk:
            _invocation(
                "bench --desk",
                method=method,
                preset=config.preset,
                seed=seed,
                count=count,
                ratio=config.ratio,
                params=config.params_file,
            )
            corpus = synthetic_corpus(count, settings.canonical_size, seed)
            gallery, query_ids, queries = build_desk_benchmark(
                corpus,
                preset=config.preset,
                seed=seed,
                params=config.pyramid,
                canonical_size=settings.canonical_size,
                eigen_k=config.eigen_k,
            )
        else:
            _invocation(
                f"bench {manifest}", method=method, ratio=config.ratio, params=config.params_file, gallery=config.gallery_dir
            )
            gallery = _load_gallery(config)
            query_ids, queries = load_manifest_queries(manifest)

        methods = ["sift", "pca"] if method == "both" else [method]
        reports = [
            run_benchmark(gallery, queries, m, fraction=config.ratio, alr=config.alr, query_ids=query_ids)
            for m in methods
        ]
        _emit_reports(reports, config.output_format, cmc, report_dir)
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--preset", type=click.Choice(PRESETS), default=None, help="Base severity preset")
@click.option("--seed", type=int, default=0, show_default=True, help="Manipulation seed")
@click.option("--warp", type=float, default=None, help="Extra local warp amplitude in pixels (max 15)")
@click.option("--brightness", type=float, default=None, help="Extra brightness offset")
@click.option("--contrast", type=float, default=None, help="Extra contrast gain")
@click.option("--blur", type=float, default=None, help="Extra Gaussian blur sigma")
@click.option("--occlude", type=float, default=None, help="Extra occlusion area fraction (max 0.25)")
@click.option("--noise", type=float, default=None, help="Extra noise sigma")
def transform(
    image: Path,
    output: Path,
    preset: str | None,
    seed: int,
    warp: float | None,
    brightness: float | None,
    contrast: float | None,
    blur: float | None,
    occlude: float | None,
    noise: float | None,
):
    """Write a seeded manipulated copy of IMAGE to OUTPUT (PNG)."""
    try:
        settings = Settings.from_env()
        preset = preset or settings.preset
        spec = preset_spec(preset, seed)
        extras = [
            LocalWarp(amplitude=warp) if warp is not None else None,
            Brightness(delta=brightness) if brightness is not None else None,
            Contrast(gain=contrast) if contrast is not None else None,
            Blur(sigma=blur) if blur is not None else None,
            Occlude(fraction=occlude) if occlude is not None else None,
            Noise(sigma=noise) if noise is not None else None,
        ]
        spec = spec.model_copy(update={"ops": [*spec.ops, *(op for op in extras if op is not None)]})
        _invocation(
            f"transform {image} {output}",
            preset=preset,
            seed=seed,
            warp=warp,
            brightness=brightness,
            contrast=contrast,
            blur=blur,
            occlude=occlude,
            noise=noise,
        )

        manipulated = generate_manipulation(to_grayscale(load_image(image)), spec)
        output.write_bytes(encode_png(manipulated))
        console.print(f"[green]✓[/green] Wrote {output} ({len(spec.ops)} operations, seed {seed})")
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.option("--native", is_flag=True, help="Skip resizing to the canonical face size")
@params_option
def inspect(image: Path, native: bool, params_file: Path | None):
    """Dump keypoints of IMAGE as 'x y sigma orientation' lines."""
    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(settings, params_file=params_file)
        _invocation(f"inspect {image}", native=native, params=config.params_file)
        color = load_image(image)
        face = to_grayscale(color) if native else preprocess(color, settings.canonical_size)
        features, stats = extract_features_with_stats(face, config.pyramid)
        for kp in features.keypoints:
            click.echo(f"{kp.x:.4f} {kp.y:.4f} {kp.sigma:.4f} {kp.orientation:.4f}")

        console.print(f"[cyan]→[/cyan] {stats.candidates} candidates, {stats.keypoints} keypoints")
        for reason, count in stats.rejections.items():
            if count:
                console.print(f"  [yellow]⚠[/yellow] {reason}: {count}")
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.argument("identity_id")
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--ratio", type=float, default=None, help="Ratio-test fraction (default 0.8)")
@click.option("--raw", is_flag=True, help="Draw ratio-test matches instead of verified inliers")
@params_option
@gallery_option
def matches(
    image: Path,
    identity_id: str,
    output: Path,
    ratio: float | None,
    raw: bool,
    params_file: Path | None,
    gallery_dir: Path | None,
):
    """Draw the correspondences between IMAGE and an enrolled identity."""
    try:
        settings = Settings.from_env()
        config = CliConfig.resolve(settings, gallery_dir=gallery_dir, ratio=ratio, params_file=params_file)
        gallery = _load_gallery(config)
        if identity_id not in gallery.identity_ids():
            raise UnknownIdentity(identity_id)
        record = gallery.record(identity_id)
        _invocation(
            f"matches {image} {identity_id} {output}", ratio=config.ratio, raw=raw, params=config.params_file
        )

        face = canonical_face(gallery, load_image(image))
        features = extract_features(face, gallery.params)
        pairs = ratio_match(features, record.feature_set, config.ratio)
        inliers = alr_filter(pairs, features, record.feature_set, config.alr)
        stats = alr_statistics(pairs, features, record.feature_set, config.alr)
        if stats.dominant is not None:
            ratio_bin, angle_bin = stats.dominant
            low, high = ratio_bin_range(ratio_bin, config.alr)
            start, end = angle_bin_range(angle_bin, config.alr)
            console.print(
                f"[cyan]→[/cyan] Dominant relation: length ratio {low:.2f}-{high:.2f}, "
                f"angle {math.degrees(start):.0f}..{math.degrees(end):.0f} deg "
                f"({int(stats.histogram[stats.dominant])} of {int(stats.histogram.sum())} pair votes)"
            )
        output.write_bytes(render_matches(face, record.face, features, record.feature_set, pairs if raw else inliers))
        console.print(f"[green]✓[/green] {len(pairs)} ratio-test matches, {len(inliers)} verified; wrote {output}")
        click.echo(f"{len(pairs)}\t{len(inliers)}")
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("directory", type=click.Path(file_okay=False, path_type=Path))
@click.option("--count", type=click.IntRange(min=1), default=20, show_default=True, help="Identities to generate")
@click.option("--seed", type=int, default=0, show_default=True, help="Corpus seed")
@click.option("--size", type=click.IntRange(min=16), default=None, help="Face side (default: canonical size)")
def synth(directory: Path, count: int, seed: int, size: int | None):
    """Write the synthetic textured-face corpus to DIRECTORY."""
    try:
        settings = Settings.from_env()
        size = size or settings.canonical_size
        _invocation(f"synth {directory}", count=count, seed=seed, size=size)
        for path in write_corpus(directory, count, size, seed):
            click.echo(str(path))
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    cli()
