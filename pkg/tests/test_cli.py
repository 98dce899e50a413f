import io

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from mugmatch.main import cli


@pytest.fixture
def runner(canonical_env) -> CliRunner:
    return CliRunner()


@pytest.fixture
def gallery_dir(runner, corpus_dir, tmp_path):
    directory = tmp_path / "gallery"
    result = runner.invoke(cli, ["enroll", "--from-dir", str(corpus_dir), "--gallery", str(directory)])
    assert result.exit_code == 0, result.stderr
    return directory


def pixels(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))


class TestEnroll:
    def test_enrol_directory_prints_counts(self, gallery_dir, runner, corpus_dir, tmp_path):
        result = runner.invoke(cli, ["enroll", "--from-dir", str(corpus_dir), "--gallery", str(tmp_path / "other")])
        lines = result.stdout.splitlines()
        assert [line.split("\t")[0] for line in lines] == ["synth_00", "synth_01", "synth_02"]
        assert all(int(line.split("\t")[1]) > 0 for line in lines)

    def test_single_image(self, runner, corpus_dir, tmp_path):
        image = corpus_dir / "synth_01.png"
        result = runner.invoke(cli, ["enroll", str(image), "--id", "ann", "--gallery", str(tmp_path / "g")])
        assert result.exit_code == 0
        assert result.stdout.startswith("ann\t")

    def test_duplicate_identity(self, runner, gallery_dir, corpus_dir):
        image = corpus_dir / "synth_00.png"
        result = runner.invoke(cli, ["enroll", str(image), "--id", "synth_00", "--gallery", str(gallery_dir)])
        assert result.exit_code == 1
        assert "synth_00" in result.stderr

    def test_missing_image(self, runner, tmp_path):
        result = runner.invoke(cli, ["enroll", str(tmp_path / "nope.png"), "--id", "x", "--gallery", str(tmp_path / "g")])
        assert result.exit_code == 1
        assert "nope.png" in result.stderr.replace("\n", "")

    def test_needs_image_or_directory(self, runner):
        result = runner.invoke(cli, ["enroll"])
        assert result.exit_code == 2


class TestQuery:
    def test_sift_csv_ranks_self_first(self, runner, gallery_dir, corpus_dir):
        image = corpus_dir / "synth_02.png"
        result = runner.invoke(cli, ["query", str(image), "--format", "csv", "--gallery", str(gallery_dir)])
        assert result.exit_code == 0, result.stderr
        lines = result.stdout.splitlines()
        assert lines[0] == "rank,identity_id,label,score,inliers,raw_matches"
        assert lines[1].startswith("1,synth_02,synth_02,")
        assert len(lines) == 4

    def test_top_limits_rows(self, runner, gallery_dir, corpus_dir):
        image = corpus_dir / "synth_00.png"
        args = ["query", str(image), "--format", "csv", "--top", "2", "--gallery", str(gallery_dir)]
        result = runner.invoke(cli, args)
        assert len(result.stdout.splitlines()) == 3

    def test_pca_needs_training(self, runner, gallery_dir, corpus_dir):
        image = corpus_dir / "synth_00.png"
        result = runner.invoke(cli, ["query", str(image), "--method", "pca", "--gallery", str(gallery_dir)])
        assert result.exit_code == 1

    def test_train_then_pca(self, runner, gallery_dir, corpus_dir):
        trained = runner.invoke(cli, ["train", "--gallery", str(gallery_dir)])
        assert trained.exit_code == 0, trained.stderr
        assert trained.stdout.strip() == "2"

        image = corpus_dir / "synth_01.png"
        args = ["query", str(image), "--method", "pca", "--format", "csv", "--gallery", str(gallery_dir)]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.stderr
        assert result.stdout.splitlines()[1].startswith("1,synth_01,synth_01,0")

    def test_missing_gallery(self, runner, corpus_dir, tmp_path):
        image = corpus_dir / "synth_00.png"
        result = runner.invoke(cli, ["query", str(image), "--gallery", str(tmp_path / "absent")])
        assert result.exit_code == 1


class TestBench:
    def test_self_query_manifest(self, runner, gallery_dir, corpus_dir, tmp_path):
        runner.invoke(cli, ["train", "--gallery", str(gallery_dir)])
        manifest = tmp_path / "queries.tsv"
        manifest.write_text(
            "".join(f"{corpus_dir / f'synth_0{i}.png'}\tsynth_0{i}\n" for i in range(3)),
            encoding="utf-8",
        )
        reports = tmp_path / "reports"
        args = ["bench", str(manifest), "--format", "csv", "--gallery", str(gallery_dir), "--report-dir", str(reports)]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.stderr
        assert result.stdout.splitlines() == ["method,identification_rate", "sift,100.00", "pca,100.00"]
        assert (reports / "sift_queries.csv").read_text(encoding="utf-8").count("\n") == 4
        assert (reports / "pca_cmc.csv").read_text(encoding="utf-8").splitlines()[1:] == [
            "1,100.00",
            "2,100.00",
            "3,100.00",
        ]

    def test_cmc_rows(self, runner, gallery_dir, corpus_dir, tmp_path):
        manifest = tmp_path / "queries.tsv"
        manifest.write_text(f"{corpus_dir / 'synth_00.png'}\tsynth_00\n", encoding="utf-8")
        args = ["bench", str(manifest), "--method", "sift", "--cmc", "--format", "csv", "--gallery", str(gallery_dir)]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.stderr
        assert "# sift\nrank,rate\n1,100.00\n" in result.stdout

    def test_missing_manifest(self, runner, gallery_dir, tmp_path):
        result = runner.invoke(cli, ["bench", str(tmp_path / "none.tsv"), "--gallery", str(gallery_dir)])
        assert result.exit_code == 1

    def test_needs_manifest_or_desk(self, runner):
        assert runner.invoke(cli, ["bench"]).exit_code == 2

    def test_small_desk_run(self, runner, monkeypatch):
        monkeypatch.setenv("MUGMATCH_CANONICAL_SIZE", "64")
        args = ["bench", "--desk", "--count", "3", "--preset", "mild", "--format", "csv"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.stderr
        lines = result.stdout.splitlines()
        assert lines[0] == "method,identification_rate"
        assert [line.split(",")[0] for line in lines[1:]] == ["sift", "pca"]


class TestTransform:
    def test_none_preset_keeps_pixels(self, runner, corpus_dir, tmp_path):
        source = corpus_dir / "synth_00.png"
        output = tmp_path / "same.png"
        result = runner.invoke(cli, ["transform", str(source), str(output), "--preset", "none"])
        assert result.exit_code == 0, result.stderr
        assert np.array_equal(pixels(output), pixels(source))

    def test_same_seed_same_bytes(self, runner, corpus_dir, tmp_path):
        source = corpus_dir / "synth_00.png"
        for name in ("a.png", "b.png"):
            result = runner.invoke(cli, ["transform", str(source), str(tmp_path / name), "--preset", "mild", "--seed", "3"])
            assert result.exit_code == 0, result.stderr
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
        assert not np.array_equal(pixels(tmp_path / "a.png"), pixels(source))

    def test_occlusion_out_of_range(self, runner, corpus_dir, tmp_path):
        source = corpus_dir / "synth_00.png"
        result = runner.invoke(cli, ["transform", str(source), str(tmp_path / "x.png"), "--occlude", "0.5"])
        assert result.exit_code == 1
        assert not (tmp_path / "x.png").exists()


def test_inspect_lists_keypoints(runner, corpus_dir):
    result = runner.invoke(cli, ["inspect", str(corpus_dir / "synth_00.png")])
    assert result.exit_code == 0, result.stderr
    lines = result.stdout.splitlines()
    assert lines
    for line in lines:
        x, y, sigma, orientation = map(float, line.split())
        assert 0 <= x < 96 and 0 <= y < 96
        assert sigma > 0
        assert 0 <= orientation < 2 * np.pi + 1e-4


def test_synth_writes_pngs(runner, tmp_path):
    result = runner.invoke(cli, ["synth", str(tmp_path / "out"), "--count", "2", "--size", "48"])
    assert result.exit_code == 0, result.stderr
    paths = result.stdout.splitlines()
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["synth_00.png", "synth_01.png"]
    assert Image.open(paths[0]).size == (48, 48)


def test_matches_draws_png(runner, gallery_dir, corpus_dir, tmp_path):
    output = tmp_path / "pairs.png"
    args = ["matches", str(corpus_dir / "synth_01.png"), "synth_01", str(output), "--gallery", str(gallery_dir)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.stderr
    raw, inliers = map(int, result.stdout.split("\t"))
    assert raw == inliers > 0
    image = Image.open(io.BytesIO(output.read_bytes()))
    assert image.format == "PNG"
    assert image.size == (192, 96)


def test_matches_unknown_identity(runner, gallery_dir, corpus_dir, tmp_path):
    args = ["matches", str(corpus_dir / "synth_01.png"), "nobody", str(tmp_path / "p.png"), "--gallery", str(gallery_dir)]
    assert runner.invoke(cli, args).exit_code == 1


def test_matches_reports_dominant_relation(runner, gallery_dir, corpus_dir, tmp_path):
    args = ["matches", str(corpus_dir / "synth_00.png"), "synth_00", str(tmp_path / "p.png"), "--gallery", str(gallery_dir)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.stderr
    stderr = result.stderr.replace("\n", " ")
    assert "Dominant relation" in stderr
    # identical images put every pair at length ratio 1
    assert "length ratio 1.00-" in stderr


class TestParamsFile:
    def test_inspect_honours_octave_limit(self, runner, corpus_dir, tmp_path):
        params = tmp_path / "params.json"
        params.write_text('{"pyramid": {"num_octaves": 1}}', encoding="utf-8")
        result = runner.invoke(cli, ["inspect", str(corpus_dir / "synth_00.png"), "--params", str(params)])
        assert result.exit_code == 0, result.stderr
        sigmas = [float(line.split()[2]) for line in result.stdout.splitlines()]
        assert sigmas
        # octave 0 tops out at 1.6 * 2^(3.5 / 3)
        assert max(sigmas) < 3.6

    def test_gallery_built_with_other_params_is_refused(self, runner, gallery_dir, corpus_dir, tmp_path):
        params = tmp_path / "params.json"
        params.write_text('{"pyramid": {"contrast_threshold": 0.05}}', encoding="utf-8")
        args = ["query", str(corpus_dir / "synth_00.png"), "--gallery", str(gallery_dir), "--params", str(params)]
        result = runner.invoke(cli, args)
        assert result.exit_code == 1
        assert "different extraction parameters" in result.stderr.replace("\n", " ")

    def test_enrolment_and_query_share_params(self, runner, corpus_dir, tmp_path):
        params = tmp_path / "params.json"
        params.write_text('{"pyramid": {"contrast_threshold": 0.02}}', encoding="utf-8")
        directory = tmp_path / "gallery"
        enrolled = runner.invoke(
            cli, ["enroll", "--from-dir", str(corpus_dir), "--gallery", str(directory), "--params", str(params)]
        )
        assert enrolled.exit_code == 0, enrolled.stderr
        args = ["query", str(corpus_dir / "synth_01.png"), "--format", "csv", "--gallery", str(directory)]
        result = runner.invoke(cli, [*args, "--params", str(params)])
        assert result.exit_code == 0, result.stderr
        assert result.stdout.splitlines()[1].split(",")[1] == "synth_01"

    def test_environment_params_file_is_validated(self, runner, corpus_dir, tmp_path, monkeypatch):
        params = tmp_path / "params.json"
        params.write_text('{"pyramid": {"contrast_treshold": 0.02}}', encoding="utf-8")
        monkeypatch.setenv("MUGMATCH_PARAMS", str(params))
        result = runner.invoke(cli, ["inspect", str(corpus_dir / "synth_00.png")])
        assert result.exit_code == 1
        assert "contrast_treshold" in result.stderr.replace("\n", "")
