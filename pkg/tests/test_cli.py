"""CLI dispatch: validation, the smoke pipeline, artifact determinism."""

import json
from pathlib import Path

import pytest

from gvr.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "smoke.json"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full pipeline run on the bundled synthetic fixture."""
    root = tmp_path_factory.mktemp("pipe")
    paths = {
        "data": root / "data", "splits": root / "splits", "stage1": root / "stage1",
        "salient": root / "salient", "head": root / "head", "eval": root / "eval",
        "probe": root / "probe", "report": root / "report",
    }
    assert run("synth-bank", "--config", CONFIG, "--out", paths["data"]) == 0
    bank = paths["data"] / "bank.gvre"
    dataset = paths["data"] / "dataset.json"
    assert run("build-splits", "--regime", "close", "--dataset", dataset,
               "--config", CONFIG, "--out", paths["splits"]) == 0
    split = paths["splits"] / "close.json"
    assert run("pretrain", "--bank", bank, "--split", split,
               "--config", CONFIG, "--out", paths["stage1"]) == 0
    ckpt = paths["stage1"] / "stage1.ckpt"
    assert run("select-texts", "--bank", bank, "--split", split, "--ckpt", ckpt,
               "--config", CONFIG, "--out", paths["salient"]) == 0
    salient = paths["salient"] / "salient.gvre"
    assert run("train-head", "--bank", bank, "--split", split, "--ckpt", ckpt,
               "--salient", salient, "--config", CONFIG, "--out", paths["head"]) == 0
    assert run("probe", "--bank", bank, "--split", split, "--ckpt", ckpt,
               "--config", CONFIG, "--out", paths["probe"]) == 0
    assert run("eval", "--regime", "close", "--bank", bank, "--split", split,
               "--ckpt", ckpt, "--salient", salient, "--head", paths["head"] / "head.ckpt",
               "--config", CONFIG, "--out", paths["eval"]) == 0
    assert run("report", "--inputs", paths["eval"] / "eval_close.json",
               "--out", paths["report"]) == 0
    return paths


class TestValidation:
    def test_eval_without_ckpt_names_the_flag(self, capsys):
        code = run("eval", "--regime", "close", "--bank", "x", "--out", "y")
        err = capsys.readouterr().err
        assert code == 2
        assert "--ckpt" in err
        assert err.count("\n") == 1  # single machine-parsable line

    def test_multiple_missing_flags_listed_together(self, capsys):
        code = run("train-head", "--out", "y")
        err = capsys.readouterr().err
        assert code == 2
        for flag in ("--bank", "--split", "--ckpt", "--salient"):
            assert flag in err

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("eval", "--nonsense")
        assert exc.value.code == 2

    def test_missing_file_exit_code(self, capsys):
        assert run("validate-bank", "--bank", "/nonexistent/bank.gvre") == 1
        assert "missing-file" in capsys.readouterr().err


class TestPipeline:
    def test_artifacts_exist(self, pipeline):
        assert (pipeline["data"] / "bank.gvre").exists()
        assert (pipeline["eval"] / "eval_close.json").exists()
        assert (pipeline["eval"] / "eval_close.csv").exists()
        assert (pipeline["report"] / "summary.csv").exists()
        probe = json.loads((pipeline["probe"] / "probe.json").read_text())
        assert probe["test_top1"] is not None

    def test_every_run_writes_manifest_with_digest(self, pipeline):
        for stage in ("data", "splits", "stage1", "salient", "head", "eval"):
            doc = json.loads((pipeline[stage] / "run_manifest.json").read_text())
            assert len(doc["config_digest"]) == 64

    def test_validate_bank_passes_on_pipeline_output(self, pipeline, capsys):
        assert run("validate-bank", "--bank", pipeline["data"] / "bank.gvre") == 0
        assert "ok:" in capsys.readouterr().out

    def test_digest_chain_enforced(self, pipeline, tmp_path):
        # a fresh checkpoint that did not produce the salient bank
        other = tmp_path / "other"
        assert run("pretrain", "--bank", pipeline["data"] / "bank.gvre",
                   "--split", pipeline["splits"] / "close.json",
                   "--config", CONFIG, "--seed", "99", "--out", other) == 0
        code = run("eval", "--regime", "close",
                   "--bank", pipeline["data"] / "bank.gvre",
                   "--split", pipeline["splits"] / "close.json",
                   "--ckpt", other / "stage1.ckpt",
                   "--salient", pipeline["salient"] / "salient.gvre",
                   "--head", pipeline["head"] / "head.ckpt",
                   "--config", CONFIG, "--out", tmp_path / "eval")
        assert code == 2
        code = run("eval", "--regime", "close",
                   "--bank", pipeline["data"] / "bank.gvre",
                   "--split", pipeline["splits"] / "close.json",
                   "--ckpt", other / "stage1.ckpt",
                   "--salient", pipeline["salient"] / "salient.gvre",
                   "--head", pipeline["head"] / "head.ckpt",
                   "--config", CONFIG, "--out", tmp_path / "eval", "--force")
        assert code == 0


def artifact_bytes(root: Path):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "run_manifest.json":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


class TestDeterminism:
    def test_rerun_stages_byte_identical(self, pipeline, tmp_path):
        bank = pipeline["data"] / "bank.gvre"
        split = pipeline["splits"] / "close.json"
        for label in ("a", "b"):
            base = tmp_path / label
            assert run("pretrain", "--bank", bank, "--split", split,
                       "--config", CONFIG, "--out", base / "stage1") == 0
            ckpt = base / "stage1" / "stage1.ckpt"
            assert run("select-texts", "--bank", bank, "--split", split, "--ckpt", ckpt,
                       "--config", CONFIG, "--out", base / "salient") == 0
            assert run("train-head", "--bank", bank, "--split", split, "--ckpt", ckpt,
                       "--salient", base / "salient" / "salient.gvre",
                       "--config", CONFIG, "--out", base / "head") == 0
            assert run("eval", "--regime", "close", "--bank", bank, "--split", split,
                       "--ckpt", ckpt, "--salient", base / "salient" / "salient.gvre",
                       "--head", base / "head" / "head.ckpt",
                       "--config", CONFIG, "--out", base / "eval") == 0
        assert artifact_bytes(tmp_path / "a") == artifact_bytes(tmp_path / "b")

    def test_synth_bank_rerun_identical(self, pipeline, tmp_path):
        assert run("synth-bank", "--config", CONFIG, "--out", tmp_path / "d2") == 0
        fresh = artifact_bytes(tmp_path / "d2")
        original = artifact_bytes(pipeline["data"])
        assert fresh == original
