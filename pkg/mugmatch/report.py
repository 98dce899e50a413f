"""Text, CSV and image output for query rankings and benchmark reports."""

import csv
import io
from collections.abc import Sequence

import numpy as np
from PIL import Image, ImageDraw
from pydantic import BaseModel, Field
from rich.table import Table

from .models import EvalReport, FeatureSet, GrayImage, MatchPair

OUTCOME_COLUMNS = ("query_id", "true_identity", "rank", "top1_id", "top1_score")


class RankedResult(BaseModel):
    """One row of a query ranking."""

    rank: int = Field(ge=1)
    identity_id: str
    label: str = ""
    score: float = Field(description="Inlier count (sift) or eigenspace distance (pca)")
    inliers: int | None = Field(default=None, description="Verified matches, sift only")
    raw_matches: int | None = Field(default=None, description="Ratio-test matches, sift only")


def _format_score(value: float) -> str:
    return f"{int(value)}" if float(value).is_integer() else f"{value:.4f}"


class ReportWriter:
    """Render rankings and evaluation reports as rich tables or CSV."""

    def ranking_table(self, results: Sequence[RankedResult], method: str) -> Table:
        """Ranked candidates of a single query."""
        table = Table(title=f"Query results ({method})")
        table.add_column("Rank", justify="right")
        table.add_column("Identity", style="cyan")
        table.add_column("Label")
        table.add_column("Distance" if method == "pca" else "Score", justify="right")
        if method == "sift":
            table.add_column("Inliers", justify="right")
            table.add_column("Raw", justify="right")
        for result in results:
            row = [str(result.rank), result.identity_id, result.label, _format_score(result.score)]
            if method == "sift":
                row += [str(result.inliers), str(result.raw_matches)]
            table.add_row(*row)
        return table

    def ranking_csv(self, results: Sequence[RankedResult]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["rank", "identity_id", "label", "score", "inliers", "raw_matches"])
        for result in results:
            writer.writerow(
                [
                    result.rank,
                    result.identity_id,
                    result.label,
                    _format_score(result.score),
                    "" if result.inliers is None else result.inliers,
                    "" if result.raw_matches is None else result.raw_matches,
                ]
            )
        return buffer.getvalue()

    def outcomes_table(self, report: EvalReport) -> Table:
        """Per-query outcomes of one benchmark run."""
        table = Table(title=f"{report.method.upper()} benchmark: {report.identification_rate:.2f}%")
        for column in OUTCOME_COLUMNS:
            table.add_column(column, justify="right" if column in ("rank", "top1_score") else "left")
        for outcome in report.per_query:
            style = "green" if outcome.rank == 1 else "red"
            table.add_row(
                outcome.query_id,
                outcome.true_identity,
                f"[{style}]{outcome.rank}[/{style}]",
                outcome.top1_id,
                _format_score(outcome.top1_score),
            )
        return table

    def outcomes_csv(self, report: EvalReport) -> str:
        """query_id,true_identity,rank,top1_id,top1_score rows."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(OUTCOME_COLUMNS)
        for outcome in report.per_query:
            writer.writerow(
                [
                    outcome.query_id,
                    outcome.true_identity,
                    outcome.rank,
                    outcome.top1_id,
                    _format_score(outcome.top1_score),
                ]
            )
        return buffer.getvalue()

    def cmc_csv(self, report: EvalReport) -> str:
        """rank,rate rows."""
        lines = ["rank,rate"]
        lines += [f"{k},{rate:.2f}" for k, rate in enumerate(report.cmc, start=1)]
        return "\n".join(lines) + "\n"

    def summary_table(self, reports: Sequence[EvalReport]) -> Table:
        """Identification rate per method."""
        table = Table(title="Identification rate")
        table.add_column("Method", style="cyan")
        table.add_column("Queries", justify="right")
        table.add_column("Identification rate", justify="right")
        for report in reports:
            table.add_row(report.method.upper(), str(len(report.per_query)), f"{report.identification_rate:.2f}%")
        return table

    def summary_csv(self, reports: Sequence[EvalReport]) -> str:
        lines = ["method,identification_rate"]
        lines += [f"{report.method},{report.identification_rate:.2f}" for report in reports]
        return "\n".join(lines) + "\n"


def render_matches(
    query_face: GrayImage,
    gallery_face: GrayImage,
    query_fs: FeatureSet,
    gallery_fs: FeatureSet,
    pairs: Sequence[MatchPair],
) -> bytes:
    """
    Draw query and gallery faces side by side with their correspondences.

    Args:
        query_face: Canonical query face (left)
        gallery_face: Canonical gallery face (right)
        query_fs: Query features
        gallery_fs: Gallery features
        pairs: Correspondences to draw

    Returns:
        PNG bytes
    """
    left = np.rint(query_face.pixels * 255.0).astype(np.uint8)
    right = np.rint(gallery_face.pixels * 255.0).astype(np.uint8)
    height = max(left.shape[0], right.shape[0])
    canvas = np.zeros((height, left.shape[1] + right.shape[1]), dtype=np.uint8)
    canvas[: left.shape[0], : left.shape[1]] = left
    canvas[: right.shape[0], left.shape[1] :] = right

    image = Image.fromarray(canvas).convert("RGB")
    draw = ImageDraw.Draw(image)
    offset = left.shape[1]
    for pair in pairs:
        q = query_fs.keypoints[pair.query_idx]
        g = gallery_fs.keypoints[pair.gallery_idx]
        draw.line([(q.x, q.y), (g.x + offset, g.y)], fill=(0, 255, 0), width=1)
        for x, y, sigma in ((q.x, q.y, q.sigma), (g.x + offset, g.y, g.sigma)):
            radius = max(2.0, sigma)
            draw.ellipse([x - radius, y - radius, x + radius, y + radius], outline=(255, 200, 0))

    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()
