import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fsichannel.cli import (
    DEFAULTS,
    EXIT_CHECKS_FAILED,
    EXIT_CONFIG,
    SCENARIOS,
    ConfigError,
    compare,
    describe,
    main,
    resolve_config,
    run,
)
from fsichannel.io import (
    load_mesh,
    save_mesh,
    vertex_values,
    write_csv,
    write_json,
    write_vtk,
)
from fsichannel.fluid import fluid_spaces
from fsichannel.spaces import FEFunction


FAST = {"target_edge_length": 0.18, "tol": 1e-9}


def test_describe_every_scenario():
    assert SCENARIOS  # registry populated by import
    for name, info in SCENARIOS.items():
        text = describe(name)
        assert name in text
        for key in info["keys"]:
            assert key in text
        for art in info["artifacts"]:
            assert art in text
    with pytest.raises(ConfigError):
        describe("nonexistent")


def test_scenario_keys_are_known_config_keys():
    for info in SCENARIOS.values():
        for key in info["keys"]:
            assert key in DEFAULTS


def test_resolve_config_rejects_unknown_and_invalid():
    with pytest.raises(ConfigError):
        resolve_config({"not_a_key": 1})
    with pytest.raises(ConfigError):
        resolve_config({"relaxation": 1.5})
    with pytest.raises(ConfigError):
        resolve_config({"nu": -1.0})
    cfg = resolve_config({"nu": 2.0})
    assert cfg["nu"] == 2.0
    assert cfg["mu"] == DEFAULTS["mu"]


def test_mesh_scenario_writes_artifacts(tmp_path):
    out = str(tmp_path / "m")
    code = run("mesh", FAST, out)
    assert code == 0
    with open(os.path.join(out, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["pass"] is True
    assert summary["scenario"] == "mesh"
    for art in SCENARIOS["mesh"]["artifacts"]:
        assert os.path.exists(os.path.join(out, art))
        if art != "summary.json":  # the summary holds the other hashes
            assert art in summary["artifacts"]


def test_cli_exit_codes(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"relaxation": 2.0}))
    assert main(["solve-fsi", "--config", str(cfg),
                 "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["mesh", "--config", str(cfg),
                 "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_compare_identical_and_differing(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run("mesh", FAST, a) == 0
    assert run("mesh", FAST, b) == 0
    diffs, ok = compare(a, b)
    assert ok
    assert all(v == 0.0 for _, _, v in diffs)
    # altering one numeric CSV value must be caught at tol 0
    csvs = [n for n, k, _ in diffs if n.endswith(".csv")]
    if csvs:
        path = os.path.join(b, csvs[0])
        text = open(path).read()
        lines = text.splitlines()
        cells = lines[1].split(",")
        cells[-1] = repr(float(cells[-1]) + 1.0)
        lines[1] = ",".join(cells)
        open(path, "w").write("\n".join(lines) + "\n")
        _, ok2 = compare(a, b)
        assert not ok2


def _run_cli(args, env_extra, cwd):
    env = dict(os.environ, **env_extra)
    return subprocess.run(
        [sys.executable, "-m", "fsichannel.cli", *args],
        capture_output=True, text=True, env=env, cwd=cwd)


def test_determinism_across_thread_counts(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    outs = []
    for threads in ("1", "4"):
        out = str(tmp_path / f"t{threads}")
        res = _run_cli(
            ["solve-ns", "--config", str(cfg), "--out", out, "--seed", "7"],
            {"OMP_NUM_THREADS": threads, "OPENBLAS_NUM_THREADS": threads},
            str(tmp_path))
        assert res.returncode == 0, res.stderr
        outs.append(out)
    summaries = []
    for out in outs:
        with open(os.path.join(out, "summary.json")) as fh:
            summaries.append(json.load(fh))
    # identical artifact hashes: bit-for-bit reproducible results
    assert summaries[0]["artifacts"] == summaries[1]["artifacts"]


def test_mesh_roundtrip_io(tmp_path, coarse_mesh):
    path = str(tmp_path / "mesh.txt")
    save_mesh(path, coarse_mesh)
    again = load_mesh(path)
    assert np.array_equal(coarse_mesh.nodes, again.nodes)
    assert np.array_equal(coarse_mesh.triangles, again.triangles)
    # no numpy scalar reprs may leak into the text format
    text = open(path).read()
    assert "np.float64" not in text and "np.int64" not in text


def test_vtk_output_is_parseable(tmp_path, coarse_mesh):
    V, _ = fluid_spaces(coarse_mesh)
    f = FEFunction.zeros(V)
    f.coefficients[:] = 1.5
    path = str(tmp_path / "state.vtk")
    write_vtk(path, coarse_mesh, point_data={"w": vertex_values(f)})
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert any(l.startswith("POINTS") for l in lines)
    assert any(l.startswith("CELLS") for l in lines)
    assert any("w" in l for l in lines if l.startswith(("VECTORS", "SCALARS")))
    assert "np.float64" not in "\n".join(lines)


def test_json_csv_writers(tmp_path):
    jpath = str(tmp_path / "x.json")
    write_json(jpath, {"b": 1, "a": [1.5, 2.5]})
    with open(jpath) as fh:
        assert json.load(fh) == {"b": 1, "a": [1.5, 2.5]}
    cpath = str(tmp_path / "x.csv")
    write_csv(cpath, ["h", "err"], [(0.1, 1e-3), (0.05, 2.5e-4)])
    header, rows = open(cpath).read().splitlines()[0], \
        open(cpath).read().splitlines()[1:]
    assert header == "h,err"
    assert len(rows) == 2
