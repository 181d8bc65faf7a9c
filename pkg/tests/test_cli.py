import csv
import json
from pathlib import Path

import numpy as np
import pytest

from platevem.cli import ConfigError, RunConfig, main


def write_config(tmp_path: Path, **overrides) -> Path:
    cfg = {
        "case": "smooth",
        "family": "conforming",
        "k": 2,
        "l": 1,
        "mesh": {"kind": "voronoi", "n0": 16, "lloyd": 3},
        "levels": 2,
        "seed": 1,
        "out": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def read_schema_csv(path: Path):
    lines = path.read_text().splitlines()
    header_comment = lines[0]
    rows = list(csv.DictReader(lines[1:]))
    return header_comment, rows


class TestRunConfig:
    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"case": "smooth", "famly": "conforming"})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"mesh": {"kind": "voronoi", "cells": 4}})

    def test_validate_degree_compatibility(self):
        cfg = RunConfig.from_dict({"k": 2, "l": 3})
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_params_and_physical_exclusive(self):
        cfg = RunConfig.from_dict({
            "params": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0},
            "physical": {"lam": 1.0, "mu": 1.0, "alpha": 1.0, "c0": 0.1}})
        with pytest.raises(ConfigError):
            cfg.model_params()

    def test_physical_constants_are_derived(self):
        cfg = RunConfig.from_dict({
            "physical": {"lam": 1.5, "mu": 0.5, "alpha": 0.8, "c0": 0.1}})
        p = cfg.model_params()
        assert p.gamma == pytest.approx(4.0)


class TestExitCodes:
    def test_invalid_degrees_exit_two(self, tmp_path, capsys):
        cfg = write_config(tmp_path, k=2, l=3)
        assert main(["convergence", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exits_two(self, tmp_path):
        assert main(["convergence", "--config",
                     str(tmp_path / "nope.json")]) == 2

    def test_malformed_json_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["convergence", "--config", str(bad)]) == 2

    def test_unknown_mesh_kind_exits_two(self, tmp_path):
        cfg = write_config(tmp_path, mesh={"kind": "hexagonal"})
        assert main(["convergence", "--config", str(cfg)]) == 2


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli-conv")
    cfg = write_config(tmp)
    rc = main(["convergence", "--config", str(cfg)])
    assert rc == 0
    return tmp / "out"


class TestConvergenceCommand:

    def test_outputs_exist(self, run_dir):
        for name in ("rates.csv", "levels.csv", "manifest.json",
                     "summary.txt"):
            assert (run_dir / name).exists()

    def test_schema_headers(self, run_dir):
        head, rows = read_schema_csv(run_dir / "rates.csv")
        assert head == "# platevem rates-v1"
        assert len(rows) == 2
        assert rows[-1]["rate_energy"] == "*"
        float(rows[0]["rate_energy"])    # parses as a number
        head, rows = read_schema_csv(run_dir / "levels.csv")
        assert head == "# platevem levels-v1"
        assert {"level", "ncells", "h", "ndof", "eta"} <= set(rows[0])

    def test_errors_decrease(self, run_dir):
        _, rows = read_schema_csv(run_dir / "levels.csv")
        errs = [float(r["err_u_h2"]) for r in rows]
        assert errs[1] < errs[0]

    def test_manifest_contents(self, run_dir):
        m = json.loads((run_dir / "manifest.json").read_text())
        assert m["command"] == "convergence"
        assert m["schemas"]["rates"] == "rates-v1"
        assert m["config"]["case"] == "smooth"
        assert m["seed"] == 1

    def test_flag_overrides_take_precedence(self, tmp_path):
        cfg = write_config(tmp_path, levels=1)
        out2 = tmp_path / "other"
        rc = main(["convergence", "--config", str(cfg),
                   "--levels", "1", "--family", "nonconforming",
                   "--out", str(out2)])
        assert rc == 0
        m = json.loads((out2 / "manifest.json").read_text())
        assert m["config"]["family"] == "nonconforming"
        _, rows = read_schema_csv(out2 / "levels.csv")
        assert len(rows) == 1


class TestAdaptiveCommand:
    def test_lshape_trace(self, tmp_path):
        out = tmp_path / "out"
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({
            "case": "lshape",
            "family": "nonconforming",
            "k": 2, "l": 1,
            "mesh": {"kind": "lshape", "n0": 2},
            "mode": "adaptive",
            "theta": 0.5,
            "levels": 3,
            "out": str(out),
        }))
        assert main(["adaptive", "--config", str(cfg_path)]) == 0
        head, rows = read_schema_csv(out / "trace.csv")
        assert head == "# platevem trace-v1"
        assert len(rows) == 3
        assert "marked" in rows[0]
        assert int(rows[-1]["marked"]) == 0
        ndofs = [int(r["ndof"]) for r in rows]
        assert ndofs == sorted(ndofs)


class TestTimestepCommand:
    def test_steps_csv(self, tmp_path):
        out = tmp_path / "out"
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({
            "case": "smooth",
            "family": "conforming",
            "k": 2, "l": 1,
            "mesh": {"kind": "voronoi", "n0": 12, "lloyd": 2},
            "steps": 4,
            "out": str(out),
        }))
        assert main(["timestep", "--config", str(cfg_path)]) == 0
        head, rows = read_schema_csv(out / "steps.csv")
        assert head == "# platevem steps-v1"
        assert len(rows) == 4
        assert [int(r["step"]) for r in rows] == [1, 2, 3, 4]
        for r in rows:
            assert np.isfinite(float(r["u_l2"]))
            assert np.isfinite(float(r["p_l2"]))


class TestMeshInfoCommand:
    def test_stdout_table(self, tmp_path, capsys):
        cfg = write_config(tmp_path, levels=2)
        assert main(["mesh-info", "--config", str(cfg)]) == 0
        text = capsys.readouterr().out
        lines = [ln for ln in text.splitlines() if ln.strip()]
        assert lines[0].startswith("level,ncells")
        assert len(lines) == 3
        first = lines[1].split(",")
        assert int(first[1]) == 16   # requested cell count on level 0


class TestDeterminism:
    def test_thread_count_invariant_output(self, tmp_path):
        outs = []
        for threads in (1, 8):
            out = tmp_path / f"t{threads}"
            cfg = write_config(tmp_path, out=str(out), threads=threads)
            assert main(["convergence", "--config", str(cfg)]) == 0
            outs.append((out / "rates.csv").read_text())
        assert outs[0] == outs[1]
