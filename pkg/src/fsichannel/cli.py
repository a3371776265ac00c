"""Batch front door: scenario execution, configuration, result emission.

Usage:
    fsichannel <scenario> [--config cfg.json] [--out dir] [--seed N]
    fsichannel describe <scenario>
    fsichannel compare <dir_a> <dir_b> [--tol T]

Exit codes: 0 success, 1 scenario checks failed, 2 invalid configuration,
3 solver divergence, 4 internal error.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .elasticity import interface_trace
from .fluid import ConvergenceError, InflowProfile, solve_navier_stokes
from .fsi import CouplingOptions, FSISolver, MeshTangledError, OuterDivergenceError
from .geomap import EllipticityError, TangledMeshError
from .io import save_mesh, vertex_values, write_csv, write_json, write_vtk
from .mesh import (
    ChannelGeometry,
    GeometryError,
    MeshError,
    build_channel_mesh,
    rect_polygon,
    refine_uniform,
    validate_mesh,
)
from .sensitivity import (
    SensitivitySolver,
    contraction_probe,
    solve_fsi_sensitivity,
    taylor_test,
)
from .verification import mms_convergence_study

EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INTERNAL = 4


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "channel_length": 4.0,
    "channel_height": 1.0,
    "obstacle_outer": [1.0, 0.3, 1.4, 0.7],
    "obstacle_inner": [1.1, 0.4, 1.3, 0.6],
    "target_edge_length": 0.1,
    "mesh_level": 0,
    "nu": 1.0,
    "lam": 1.0,
    "mu": 50.0,
    "g_magnitude": 0.05,
    "dg_magnitude": 1.0,
    "tol": 1e-9,
    "max_iter": 50,
    "relaxation": 1.0,
    "traction_interpretation": "full-vector",
    "warm_start": True,
    "linearized_mode": "direct",
    "h_list": [1e-2, 3e-3, 1e-3, 3e-4],
    "mms_kind": "trig",
    "mms_levels": 4,
    "mms_h0": 0.2,
    "g_sweep": [0.02, 0.05, 0.08, 0.12],
    "probe_samples": 3,
}

_GEOMETRY_KEYS = (
    "channel_length", "channel_height", "obstacle_outer", "obstacle_inner",
    "target_edge_length", "mesh_level",
)
_FSI_KEYS = _GEOMETRY_KEYS + (
    "nu", "lam", "mu", "g_magnitude", "tol", "max_iter", "relaxation",
    "traction_interpretation", "warm_start",
)

SCENARIOS = {}


def scenario(name, keys, blurb, artifacts):
    def wrap(fn):
        SCENARIOS[name] = {
            "runner": fn, "keys": tuple(keys), "blurb": blurb,
            "artifacts": tuple(artifacts),
        }
        return fn
    return wrap


def resolve_config(raw):
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    cfg.update(raw)
    if not 0.0 < float(cfg["relaxation"]) <= 1.0:
        raise ConfigError("relaxation must lie in (0, 1]")
    for key in ("tol", "nu", "mu", "target_edge_length"):
        if float(cfg[key]) <= 0:
            raise ConfigError(f"{key} must be positive")
    if float(cfg["lam"]) < 0:
        raise ConfigError("lam must be nonnegative")
    if int(cfg["mesh_level"]) < 0:
        raise ConfigError("mesh_level must be nonnegative")
    if cfg["traction_interpretation"] not in ("full-vector", "normal-projected"):
        raise ConfigError("traction_interpretation must be full-vector or "
                          "normal-projected")
    if cfg["linearized_mode"] not in ("direct", "T-iteration"):
        raise ConfigError("linearized_mode must be direct or T-iteration")
    if cfg["mms_kind"] not in ("trig", "polynomial"):
        raise ConfigError("mms_kind must be trig or polynomial")
    return cfg


def _rect(vals):
    if vals is None:
        return None
    x0, y0, x1, y1 = (float(v) for v in vals)
    return rect_polygon(x0, x1, y0, y1)


def geometry_from_config(cfg) -> ChannelGeometry:
    return ChannelGeometry(
        channel_length=float(cfg["channel_length"]),
        channel_height=float(cfg["channel_height"]),
        obstacle_outer=_rect(cfg["obstacle_outer"]),
        obstacle_inner=_rect(cfg["obstacle_inner"]),
        target_edge_length=float(cfg["target_edge_length"]),
    )


def mesh_from_config(cfg):
    mesh = build_channel_mesh(geometry_from_config(cfg))
    for _ in range(int(cfg["mesh_level"])):
        mesh = refine_uniform(mesh)
    return mesh


def _inflow(cfg, key="g_magnitude"):
    return InflowProfile(float(cfg[key]), float(cfg["channel_height"]))


def _coupling_options(cfg):
    return CouplingOptions(
        relaxation=float(cfg["relaxation"]),
        tol=float(cfg["tol"]),
        max_outer_iter=int(cfg["max_iter"]),
        traction_interpretation=cfg["traction_interpretation"],
        warm_start=bool(cfg["warm_start"]),
    )


@scenario(
    "mesh", _GEOMETRY_KEYS,
    "Builds the tagged two-subdomain channel mesh, runs the independent "
    "half-edge validator, and reports counts, loops, and the Euler "
    "characteristic.",
    ("mesh.txt", "mesh.vtk", "summary.json"),
)
def run_mesh(cfg, out, seed):
    mesh = mesh_from_config(cfg)
    report = validate_mesh(mesh)
    save_mesh(os.path.join(out, "mesh.txt"), mesh)
    write_vtk(os.path.join(out, "mesh.vtk"), mesh)
    return {
        "valid": bool(report.ok),
        "nodes": int(mesh.num_nodes),
        "triangles": int(mesh.num_triangles),
        "euler_characteristic": int(report.euler_characteristic),
        "boundary_loops": int(report.num_boundary_loops),
        "tag_edge_counts": {k: int(v) for k, v in report.tag_edge_counts.items()},
    }, bool(report.ok)


@scenario(
    "solve-ns",
    _GEOMETRY_KEYS + ("nu", "g_magnitude", "tol", "max_iter"),
    "Solves the steady Navier-Stokes problem on the undeformed reference "
    "domain (identity flow map) by the lagged-convection fixed point and "
    "writes the velocity/pressure fields and the iteration report.",
    ("fields_ns.vtk", "report_ns.csv", "summary.json"),
)
def run_solve_ns(cfg, out, seed):
    mesh = mesh_from_config(cfg)
    state, rep = solve_navier_stokes(
        mesh, g=_inflow(cfg), nu=float(cfg["nu"]),
        tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]),
    )
    write_vtk(os.path.join(out, "fields_ns.vtk"), mesh, point_data={
        "velocity": vertex_values(state.w),
        "pressure": vertex_values(state.p),
    })
    write_csv(os.path.join(out, "report_ns.csv"),
              ("iter", "residual", "ratio"), rep.rows())
    residual = float(rep.residual_history[-1])
    return {
        "iterations": rep.iterations,
        "final_residual": residual,
        "max_increment_ratio": float(max(rep.increment_ratios, default=0.0)),
    }, bool(rep.converged and residual <= 1e-8)


@scenario(
    "solve-fsi", _FSI_KEYS,
    "Runs the partitioned coupling: fluid solve on the current flow map, "
    "pressure traction on the interface, clamped elasticity solve, "
    "relaxed displacement update, iterated to the coupled fixed point.",
    ("fields_fsi.vtk", "report_fsi.csv", "summary.json"),
)
def run_solve_fsi(cfg, out, seed):
    mesh = mesh_from_config(cfg)
    solver = FSISolver(mesh, (float(cfg["lam"]), float(cfg["mu"])),
                       float(cfg["nu"]))
    state = solver.solve(_inflow(cfg), _coupling_options(cfg))
    residual = float(solver.residual(state, _inflow(cfg)))
    write_vtk(os.path.join(out, "fields_fsi.vtk"), mesh, point_data={
        "velocity": vertex_values(state.fluid.w),
        "pressure": vertex_values(state.fluid.p),
        "displacement": vertex_values(state.u),
    })
    write_csv(os.path.join(out, "report_fsi.csv"),
              ("iter", "increment", "ratio", "fluid_iters", "min_J",
               "min_eig_A"), state.log_rows)
    return {
        "outer_iterations": state.report.iterations,
        "max_outer_ratio": float(max(state.report.increment_ratios, default=0.0)),
        "coupled_residual": residual,
        "max_interface_displacement": float(
            np.abs(interface_trace(state.u)).max()),
    }, bool(state.report.converged and residual <= 1e-7)


@scenario(
    "sensitivity",
    _FSI_KEYS + ("dg_magnitude",),
    "Computes the directional derivative of the coupled state with respect "
    "to the inflow profile via the derivative fixed point (linearized fluid "
    "solve, traction product rule, elasticity solve).",
    ("fields_sens.vtk", "report_sens.csv", "summary.json"),
)
def run_sensitivity(cfg, out, seed):
    mesh = mesh_from_config(cfg)
    solver = FSISolver(mesh, (float(cfg["lam"]), float(cfg["mu"])),
                       float(cfg["nu"]))
    base = solver.solve(_inflow(cfg), _coupling_options(cfg))
    sens = solve_fsi_sensitivity(solver, base, _inflow(cfg, "dg_magnitude"))
    write_vtk(os.path.join(out, "fields_sens.vtk"), mesh, point_data={
        "dvelocity": vertex_values(sens.dw),
        "dpressure": vertex_values(sens.dp),
        "ddisplacement": vertex_values(sens.du),
    })
    write_csv(os.path.join(out, "report_sens.csv"),
              ("iter", "residual", "ratio"), sens.report.rows())
    return {
        "iterations": sens.report.iterations,
        "max_ratio": float(max(sens.report.increment_ratios, default=0.0)),
    }, bool(sens.report.converged)


@scenario(
    "taylor-test",
    _FSI_KEYS + ("dg_magnitude", "h_list"),
    "Full nonlinear solves at perturbed inflow magnitudes versus the "
    "computed derivative: Taylor remainders must shrink at second order "
    "for displacement, velocity, and pressure.",
    ("report_taylor.csv", "summary.json"),
)
def run_taylor(cfg, out, seed):
    mesh = mesh_from_config(cfg)
    solver = FSISolver(mesh, (float(cfg["lam"]), float(cfg["mu"])),
                       float(cfg["nu"]))
    m0 = float(cfg["g_magnitude"])
    dm = float(cfg["dg_magnitude"])
    H = float(cfg["channel_height"])
    report = taylor_test(
        solver,
        lambda h: InflowProfile(m0 + h * dm, H),
        InflowProfile(dm, H),
        [float(h) for h in cfg["h_list"]],
        _coupling_options(cfg),
    )
    write_csv(os.path.join(out, "report_taylor.csv"),
              ("h", "R_u", "R_w", "R_p"), report.rows())
    slopes = {
        "slope_u": report.slope_u,
        "slope_w": report.slope_w,
        "slope_p": report.slope_p,
    }
    ok = all(s >= 1.8 for s in slopes.values())
    return {**slopes, "n_valid_h": len(report.hs)}, ok


@scenario(
    "mms",
    ("nu", "mms_kind", "mms_levels", "mms_h0"),
    "Manufactured-solution convergence study on the straight channel: "
    "errors against an exact pair on uniformly refined meshes with "
    "least-squares fitted rates.",
    ("report_mms.csv", "summary.json"),
)
def run_mms(cfg, out, seed):
    table = mms_convergence_study(
        kind=cfg["mms_kind"], levels=int(cfg["mms_levels"]),
        h0=float(cfg["mms_h0"]), nu=float(cfg["nu"]),
    )
    write_csv(os.path.join(out, "report_mms.csv"),
              ("h", "h1_velocity_error", "l2_pressure_error"), table.rows())
    ok = (abs(table.rate_velocity - 2.0) <= 0.2
          and abs(table.rate_pressure - 2.0) <= 0.3)
    if cfg["mms_kind"] == "polynomial":
        ok = max(table.h1_velocity) <= 1e-10 and max(table.l2_pressure) <= 1e-10
    return {
        "rate_velocity": table.rate_velocity,
        "rate_pressure": table.rate_pressure,
        "finest_h1_velocity_error": table.h1_velocity[-1],
        "finest_l2_pressure_error": table.l2_pressure[-1],
    }, bool(ok)


@scenario(
    "probes",
    _FSI_KEYS + ("g_sweep", "probe_samples"),
    "Contraction diagnostics along an inflow-magnitude sweep: outer "
    "coupling ratios, power-iteration norm of the interface coupling map, "
    "and the constant-coefficient linearized iteration's ratios.",
    ("report_probes.csv", "summary.json"),
)
def run_probes(cfg, out, seed):
    from .fluid import solve_linearized

    mesh = mesh_from_config(cfg)
    solver = FSISolver(mesh, (float(cfg["lam"]), float(cfg["mu"])),
                       float(cfg["nu"]))
    H = float(cfg["channel_height"])
    opts = _coupling_options(cfg)
    rows = []
    etas = []
    for mag in cfg["g_sweep"]:
        base = solver.solve(InflowProfile(float(mag), H), opts)
        outer = max(base.report.increment_ratios, default=0.0)
        power = max(contraction_probe(
            solver, base, n_samples=int(cfg["probe_samples"]), seed=seed))
        _, _, lrep = solve_linearized(
            solver.vspace, solver.pspace, base.fields, base.fluid.w,
            dg=InflowProfile(1.0, H), nu=solver.nu, mode="T-iteration",
        )
        eta_T = max(lrep.increment_ratios, default=0.0)
        rows.append((float(mag), float(outer), float(power), float(eta_T)))
        etas.append(power)
    write_csv(os.path.join(out, "report_probes.csv"),
              ("g_magnitude", "outer_ratio", "coupling_map_norm",
               "T_iteration_eta"), rows)
    return {
        "max_coupling_map_norm": float(max(etas)),
        "sweep": [list(r) for r in rows],
    }, bool(all(e < 1.0 for e in etas))


def _hash_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def run(name, cfg_raw, out, seed=0):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}")
    cfg = resolve_config(cfg_raw)
    os.makedirs(out, exist_ok=True)
    np.random.seed(seed)
    checks, ok = SCENARIOS[name]["runner"](cfg, out, seed)
    artifacts = {}
    for fname in sorted(os.listdir(out)):
        if fname == "summary.json":
            continue
        artifacts[fname] = _hash_file(os.path.join(out, fname))
    write_json(os.path.join(out, "summary.json"), {
        "scenario": name,
        "seed": seed,
        "config": cfg,
        "checks": checks,
        "pass": bool(ok),
        "artifacts": artifacts,
    })
    return 0 if ok else EXIT_CHECKS_FAILED


def describe(name):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}")
    info = SCENARIOS[name]
    lines = [f"scenario: {name}", "", info["blurb"], "",
             "config keys read:"]
    lines += [f"  {k}" for k in info["keys"]]
    lines.append("artifacts written:")
    lines += [f"  {a}" for a in info["artifacts"]]
    return "\n".join(lines)


def _load_numeric_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


def compare(dir_a, dir_b, tol=0.0):
    """Per-field relative differences between two result directories."""
    diffs = []
    ok = True
    names = sorted(
        set(os.listdir(dir_a)) & set(os.listdir(dir_b))
    )
    if not names:
        raise ConfigError("no common artifacts to compare")
    for name in names:
        pa, pb = os.path.join(dir_a, name), os.path.join(dir_b, name)
        if name.endswith(".csv"):
            ha, ra = _load_numeric_csv(pa)
            hb, rb = _load_numeric_csv(pb)
            if ha != hb or len(ra) != len(rb):
                diffs.append((name, "structure", float("inf")))
                ok = False
                continue
            worst = 0.0
            for rowa, rowb in zip(ra, rb):
                for ca, cb in zip(rowa, rowb):
                    try:
                        va, vb = float(ca), float(cb)
                    except ValueError:
                        if ca != cb:
                            worst = float("inf")
                        continue
                    denom = max(abs(va), abs(vb), 1e-300)
                    worst = max(worst, abs(va - vb) / denom)
            diffs.append((name, "relative", worst))
            ok = ok and worst <= tol
        else:
            same = _hash_file(pa) == _hash_file(pb)
            diffs.append((name, "hash", 0.0 if same else float("inf")))
            ok = ok and (same or tol == float("inf"))
    return diffs, ok


def main(argv=None):
    parser = argparse.ArgumentParser(prog="fsichannel", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--out", default=f"out-{name}")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--log-level", default="info")
    dp = sub.add_parser("describe")
    dp.add_argument("scenario")
    cp = sub.add_parser("compare")
    cp.add_argument("dir_a")
    cp.add_argument("dir_b")
    cp.add_argument("--tol", type=float, default=0.0)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        if args.command == "describe":
            print(describe(args.scenario))
            return 0
        if args.command == "compare":
            diffs, ok = compare(args.dir_a, args.dir_b, args.tol)
            for name, kind, value in diffs:
                print(f"{name}: {kind} diff {value!r}")
            print("PASS" if ok else "FAIL")
            return 0 if ok else EXIT_CHECKS_FAILED
        cfg_raw = {}
        if args.config:
            with open(args.config) as fh:
                cfg_raw = json.load(fh)
        return run(args.command, cfg_raw, args.out, args.seed)
    except (ConfigError, GeometryError, MeshError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, OuterDivergenceError, MeshTangledError,
            TangledMeshError, EllipticityError) as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
