"""CLI subcommands: golden plan records, run/baseline/verify flow, determinism."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from embcache.cli import main
from embcache.traces import (
    Schema,
    batchify,
    generate_synthetic_trace,
    write_trace,
    ZipfSpec,
)

from conftest import make_batch


@pytest.fixture(scope="module")
def trace_file(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("traces") / "zipf.trace"
    schema = Schema(2, (600, 400), 2, 4)
    spec = ZipfSpec(schema, 1.05, 30 * 64, seed=7)
    write_trace(str(path), schema, generate_synthetic_trace(spec))
    return str(path)


@pytest.fixture(scope="module")
def worked_trace_file(tmp_path_factory) -> str:
    # The worked-example batches flattened back to examples, batch size 2.
    path = tmp_path_factory.mktemp("traces") / "fig.trace"
    schema = Schema(1, (10,), 0, 4)
    batches = [
        make_batch(1, [3, 9]),
        make_batch(2, [3, 4]),
        make_batch(3, [3, 6]),
        make_batch(4, [1, 6]),
    ]
    write_trace(str(path), schema, [ex for b in batches for ex in b.examples])
    return str(path)


def config_file(tmp_path, **overrides) -> str:
    cfg = dict(cache_capacity=5_000, batch_size=64, lookahead=8, num_trainers=2, seed=5)
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


class TestGenTrace:
    def test_round_trip_determinism(self, tmp_path):
        out1, out2 = str(tmp_path / "a.trace"), str(tmp_path / "b.trace")
        args = ["gen-trace", "--schema", "2:300,200:1:4", "--zipf", "1.05",
                "--examples", "500", "--seed", "3"]
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2]) == 0
        assert Path(out1).read_bytes() == Path(out2).read_bytes()

    def test_bad_schema_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["gen-trace", "--schema", "nope", "--zipf", "1.0",
                  "--examples", "10", "--out", str(tmp_path / "x")])
        assert err.value.code == 2


class TestAnalytics:
    def test_cdf_deterministic(self, tmp_path, trace_file):
        out1, out2 = str(tmp_path / "c1.csv"), str(tmp_path / "c2.csv")
        assert main(["analyze-cdf", "--trace", trace_file, "--out", out1]) == 0
        assert main(["analyze-cdf", "--trace", trace_file, "--out", out2]) == 0
        assert Path(out1).read_bytes() == Path(out2).read_bytes()
        header = Path(out1).read_text().splitlines()[0]
        assert header == "embedding_fraction,access_fraction"

    def test_drift_equal_segments_flagged(self, tmp_path, trace_file):
        out = str(tmp_path / "drift.csv")
        assert main(["analyze-drift", "--trace", trace_file, "--segments", "equal:3",
                     "--top-fraction", "0.05", "--out", out]) == 0
        lines = Path(out).read_text().splitlines()
        assert lines[0].startswith("# segmentation=equal-size")
        assert lines[1] == "segment,start_index,end_index,coverage"
        assert len(lines) == 5

    def test_coverage_summary(self, tmp_path, trace_file):
        out = str(tmp_path / "cov.csv")
        assert main(["analyze-coverage", "--trace", trace_file, "--batch-size", "128",
                     "--top-fraction", "0.01", "--out", out]) == 0
        lines = Path(out).read_text().splitlines()
        assert lines[0] == "batch_size,top_fraction,num_batches,min,q1,median,q3,max,mean"
        assert lines[1].startswith("128,")


class TestPlan:
    GOLDEN = [
        "iter=1 prefetch=0:3,0:9 ttl=0:3@2,0:9@1",
        "iter=2 prefetch=0:4 ttl=0:3@3,0:4@2",
        "iter=3 prefetch=0:6 ttl=0:3@3,0:6@4",
        "iter=4 prefetch=0:1 ttl=0:1@4,0:6@4",
    ]

    def test_worked_example_records(self, tmp_path, worked_trace_file):
        out = str(tmp_path / "plans.txt")
        assert main(["plan", "--trace", worked_trace_file, "--batch-size", "2",
                     "--lookahead", "2", "--capacity", "100",
                     "--first-iteration", "1", "--out", out]) == 0
        assert Path(out).read_text().splitlines() == self.GOLDEN

    def test_deterministic(self, tmp_path, trace_file):
        out1, out2 = str(tmp_path / "p1.txt"), str(tmp_path / "p2.txt")
        args = ["plan", "--trace", trace_file, "--batch-size", "64",
                "--lookahead", "8", "--capacity", "5000"]
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2]) == 0
        assert Path(out1).read_bytes() == Path(out2).read_bytes()


class TestRunBaselineVerify:
    def test_full_flow(self, tmp_path, trace_file):
        cfg = config_file(tmp_path)
        run_report = str(tmp_path / "run.json")
        base_report = str(tmp_path / "base.json")
        assert main(["run", "--config", cfg, "--trace", trace_file,
                     "--report", run_report]) == 0
        assert main(["baseline", "--config", cfg, "--trace", trace_file,
                     "--report", base_report]) == 0
        assert Path(run_report).exists()
        assert Path(run_report).with_suffix(".csv").exists()
        assert main(["verify", "--a", run_report, "--b", base_report]) == 0
        assert main(["verify", "--a", run_report, "--b", run_report]) == 0

    def test_verify_detects_mismatch_with_diff(self, tmp_path, trace_file, capsys):
        import numpy as np

        from embcache.store import read_store_dump, write_store_dump
        from embcache.traces import EmbeddingKey

        run_a = str(tmp_path / "a.json")
        run_b = str(tmp_path / "b.json")
        assert main(["run", "--config", config_file(tmp_path), "--trace", trace_file,
                     "--report", run_a, "--dump-store"]) == 0
        # Simulate a divergent replica: same comparable config, one value off.
        doctored = json.loads(Path(run_a).read_text())
        doctored["final_store_digest"] = doctored["final_store_digest"][::-1]
        Path(run_b).write_text(json.dumps(doctored), encoding="utf-8")
        store_b = read_store_dump(str(Path(run_a).with_suffix(".store")))
        store_b.write_back([EmbeddingKey(0, 0)], np.full((1, 4), 9.0, np.float32))
        write_store_dump(store_b, str(Path(run_b).with_suffix(".store")))

        capsys.readouterr()
        assert main(["verify", "--a", run_a, "--b", run_b]) == 1
        out = capsys.readouterr().out
        assert "digest mismatch" in out
        assert "0:0" in out  # the differing key is named with both values

    def test_verify_incomparable_is_runtime_error(self, tmp_path, trace_file):
        run_a = str(tmp_path / "ia.json")
        run_b = str(tmp_path / "ib.json")
        assert main(["run", "--config", config_file(tmp_path), "--trace", trace_file,
                     "--report", run_a]) == 0
        assert main(["run", "--config", config_file(tmp_path, seed=6), "--trace", trace_file,
                     "--report", run_b]) == 0
        assert main(["verify", "--a", run_a, "--b", run_b]) == 3

    def test_run_outputs_deterministic(self, tmp_path, trace_file):
        cfg = config_file(tmp_path)
        r1, r2 = str(tmp_path / "r1.json"), str(tmp_path / "r2.json")
        for r in (r1, r2):
            assert main(["run", "--config", cfg, "--trace", trace_file, "--report", r]) == 0
        assert Path(r1).read_bytes() == Path(r2).read_bytes()
        assert Path(r1).with_suffix(".csv").read_bytes() == Path(r2).with_suffix(".csv").read_bytes()

    def test_missing_file_is_runtime_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json"),
                     "--trace", "also-nope", "--report", str(tmp_path / "r.json")]) == 3

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2
