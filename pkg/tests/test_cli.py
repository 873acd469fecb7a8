"""CLI subcommands, pipeline determinism, and config round trips."""

import json
from pathlib import Path

import numpy as np
import pytest

import hulab.pipeline as pipeline_mod
from hulab.cli import main
from hulab.core import TorusBox, read_sample_csv
from hulab.generators import GeneratorSpec
from hulab.pipeline import PipelineConfig, run_pipeline


def small_config(tmp_path, transports=(), **kw):
    return PipelineConfig(
        box=TorusBox(2, 8.0),
        generator=GeneratorSpec("binomial", intensity=1.0, extra={"n": 64}),
        transports=tuple(transports),
        spectrum={"max_index": 4},
        n_samples=kw.pop("n_samples", 3),
        master_seed=kw.pop("master_seed", 5),
        output_dir=str(tmp_path / "out"),
        **kw,
    )


class TestConfig:
    def test_dict_roundtrip(self, tmp_path):
        cfg = small_config(
            tmp_path,
            transports=[{"kind": "hyperuniformerer", "resolution": 32, "variant": "single"}],
            variance={"radii": [0.5, 1.0], "n_windows": 20},
        )
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg

    def test_toml_roundtrip(self, tmp_path):
        cfg = small_config(
            tmp_path,
            transports=[
                {"kind": "displace", "q": "gaussian", "sigma": 1.0},
                {"kind": "lloyd", "resolution": 32, "steps": 2},
            ],
            theory={"model": "poisson"},
        )
        path = cfg.to_toml(tmp_path / "cfg.toml")
        assert PipelineConfig.from_toml(path) == cfg

    def test_hash_stable(self, tmp_path):
        cfg = small_config(tmp_path)
        assert cfg.sha256 == PipelineConfig.from_dict(cfg.to_dict()).sha256


class TestPipeline:
    def test_outputs_and_manifest(self, tmp_path):
        cfg = small_config(
            tmp_path,
            transports=[{"kind": "hyperuniformerer", "resolution": 32}],
        )
        out = run_pipeline(cfg)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_sha256"] == cfg.sha256
        assert (out / "spectrum_after_radial.csv").exists()
        assert (out / "spectrum_before_radial.csv").exists()
        assert (out / "samples" / "sample_0000.csv").exists()
        assert (out / "sources" / "source_0000.csv").exists()
        sample = read_sample_csv(out / "samples" / "sample_0000.csv")
        assert sample.meta.transports == ("hyperuniformerer[single]",)

    def test_rerun_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path, variance={"radii": [0.5, 1.5], "n_windows": 10})
        out1 = run_pipeline(cfg, out_dir=tmp_path / "a")
        out2 = run_pipeline(cfg, out_dir=tmp_path / "b")
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            if rel.name == "manifest.json":
                continue  # embeds output_dir-independent content plus config copy
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_worker_pool_identical(self, tmp_path, monkeypatch):
        cfg = small_config(tmp_path, n_samples=4)
        out1 = run_pipeline(cfg, out_dir=tmp_path / "serial")
        monkeypatch.setenv("HUL_THREADS", "3")
        out2 = run_pipeline(cfg, out_dir=tmp_path / "pool")
        for rel in ["samples/sample_0000.csv", "samples/sample_0003.csv",
                    "spectrum_after_radial.csv"]:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel

    def test_dispersion_pipeline(self, tmp_path):
        cfg = small_config(
            tmp_path,
            transports=[{"kind": "dispersion", "alpha": 0.4, "resolution": 64}],
            n_samples=2,
        )
        out = run_pipeline(cfg)
        assert (out / "pixels" / "dispersion_0000.pgm").exists()
        assert (out / "spectrum_after_radial.csv").exists()

    def test_theory_overlay(self, tmp_path):
        cfg = small_config(tmp_path, theory={"model": "poisson"})
        out = run_pipeline(cfg)
        lines = (out / "theory.csv").read_text().splitlines()
        assert lines[0] == "k,S_theory"
        vals = np.loadtxt(lines[1:], delimiter=",")
        np.testing.assert_allclose(vals[:, 1], 1.0)


class TestCliCommands:
    def test_generate(self, tmp_path):
        out = tmp_path / "s.csv"
        code = main(["generate", "--model", "poisson", "--intensity", "1",
                     "--side", "8", "--dim", "2", "--seed", "7",
                     "--out", str(out)])
        assert code == 0
        sample = read_sample_csv(out)
        assert sample.box == TorusBox(2, 8.0)
        assert sample.meta.seed == 7

    def test_generate_deterministic(self, tmp_path):
        args = ["generate", "--model", "matern2", "--intensity", "2", "--r-h", "0.3",
                "--side", "8", "--dim", "2", "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_transform_and_analyze(self, tmp_path):
        sample = tmp_path / "s.csv"
        main(["generate", "--model", "binomial", "--n", "32", "--intensity", "1",
              "--side", "8", "--dim", "2", "--seed", "2", "--out", str(sample)])
        steps = tmp_path / "steps.toml"
        steps.write_text('[[transports]]\nkind = "lloyd"\nresolution = 32\nsteps = 1\n')
        out = tmp_path / "t.csv"
        assert main(["transform", "--config", str(steps), "--in", str(sample),
                     "--out", str(out), "--seed", "2"]) == 0
        transformed = read_sample_csv(out)
        assert len(transformed) == 32
        assert transformed.meta.transports == ("lloyd[R=32]",)
        adir = tmp_path / "analysis"
        assert main(["analyze", str(out), "--max-index", "3",
                     "--radii", "0.5,1.0", "--out", str(adir)]) == 0
        assert (adir / "spectrum_radial.csv").exists()
        assert (adir / "variance.csv").exists()

    def test_pipeline_command(self, tmp_path):
        cfg = small_config(tmp_path)
        path = cfg.to_toml(tmp_path / "cfg.toml")
        assert main(["pipeline", "--config", str(path)]) == 0
        assert (Path(cfg.output_dir) / "manifest.json").exists()

    def test_usage_error_exit_code(self):
        assert main(["generate", "--model", "nope", "--side", "8", "--dim", "2"]) == 1
        assert main(["analyze"]) == 1

    def test_runtime_error_exit_code(self, tmp_path):
        missing = tmp_path / "missing.csv"
        missing.write_text("x,y,weight\n1.0,1.0,1.0\n")  # no manifest sidecar
        assert main(["analyze", str(missing)]) == 2

    def test_verify_exit_codes(self, tmp_path, monkeypatch):
        report = tmp_path / "report.json"
        assert main(["verify", "--suite", "fairness", "--suite", "conservation",
                     "--out", str(report)]) == 0
        data = json.loads(report.read_text())
        assert data["all_passed"]
        monkeypatch.setitem(
            pipeline_mod._SUITES, "fairness",
            lambda: {"name": "fairness", "passed": False, "detail": "forced"},
        )
        assert main(["verify", "--suite", "fairness"]) == 3
