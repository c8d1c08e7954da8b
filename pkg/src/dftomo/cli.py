"""Scenario ingestion and batch experiment orchestration.

A scenario is one JSON file declaring the geometry (box, optional boundary,
metric or symbol as expression strings), the transform, the field, and one
task.  Runs are deterministic for a fixed seed and write their artifacts
next to a manifest (config hash, versions, wall time).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SchemaError
from .expressions import compile_expression
from .fibration import from_defining_function, random_canonical_points
from .geometry import ChartGeometry, ScalarField, Symbol
from .bolker import bolker_report, fiber_immersion_check, pvs_membership
from .microlocal import critical_point_solve, wavefront_scan
from .recovery import Foliation, foliation_validate, layer_strip
from .transforms import Sinogram, TransformSpec, forward, read_grid_csv, sinogram

log = logging.getLogger("dftomo")

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["geometry", "task"],
    "properties": {
        "geometry": {
            "type": "object",
            "required": ["dim", "box"],
            "properties": {
                "dim": {"type": "integer", "minimum": 1},
                "box": {"type": "array"},
                "boundary": {"type": "string"},
                "metric": {"type": "array"},
                "symbol": {"type": "string"},
            },
        },
        "transform": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["euclidean_radon", "generic", "codim_k_radon"]},
                "kappa": {"type": "string"},
                "defining": {"type": "array", "items": {"type": "string"}},
                "theta_dim": {"type": "integer", "minimum": 1},
                "theta_box": {"type": "array"},
                "grid": {"type": "object"},
                "nodes_per_unit": {"type": "integer", "minimum": 1},
            },
        },
        "field": {
            "type": "object",
            "properties": {
                "expr": {"type": "string"},
                "grid_file": {"type": "string"},
                "support": {"type": "array"},
            },
        },
        "task": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["forward", "bolker", "wavefront",
                                  "phase-check", "recover"]},
            },
        },
        "seed": {"type": "integer"},
        "tolerances": {"type": "object"},
    },
}


def load_scenario(path) -> dict:
    """Parse and schema-validate a scenario file."""
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"scenario invalid at '{field}': {exc.message}",
                          field=field) from exc
    if "field" in cfg and "grid_file" in cfg["field"]:
        gf = Path(cfg["field"]["grid_file"])
        if not gf.is_absolute():
            gf = Path(path).parent / gf
        if not gf.exists():
            raise SchemaError(f"grid file not found: {gf}", field="field/grid_file")
        cfg["field"]["grid_file"] = str(gf)
    return cfg


def _coord_names(n, prefix="x"):
    return [f"{prefix}{i+1}" for i in range(n)]


def build_chart(cfg: dict) -> ChartGeometry:
    g = cfg["geometry"]
    n = g["dim"]
    names = _coord_names(n)
    boundary_fn = None
    if "boundary" in g:
        rho = compile_expression(g["boundary"], names)
        boundary_fn = lambda x: float(rho(np.asarray(x)[None, :])[0])
    metric = None
    if "metric" in g:
        entries = [[compile_expression(e, names) for e in row] for row in g["metric"]]

        def metric(x, entries=entries):
            x = np.asarray(x)[None, :]
            return np.array([[float(e(x)[0]) for e in row] for row in entries])

    return ChartGeometry(dim_n=n, box=np.asarray(g["box"], dtype=float),
                         boundary_fn=boundary_fn, metric=metric)


def build_symbol(cfg: dict) -> Symbol:
    g = cfg["geometry"]
    n = g["dim"]
    if "symbol" not in g:
        raise SchemaError("geometry.symbol required for this task",
                          field="geometry/symbol")
    names = _coord_names(n) + _coord_names(n, "k")
    fn = compile_expression(g["symbol"], names)

    def fun(x, xi):
        return float(fn(np.concatenate([x, xi])[None, :])[0])

    return Symbol(fun=fun)


def build_field(cfg: dict, n: int) -> ScalarField:
    f = cfg.get("field")
    if f is None:
        raise SchemaError("scenario requires a field", field="field")
    if "grid_file" in f:
        axes, _, values = read_grid_csv(f["grid_file"])
        return ScalarField.from_grid(axes, values)
    expr = compile_expression(f["expr"], _coord_names(n))
    support = np.asarray(f.get("support", cfg["geometry"]["box"]), dtype=float)
    return ScalarField(fun=expr, support_box=support, dim=n)


def build_transform(cfg: dict) -> TransformSpec:
    t = cfg.get("transform", {})
    kind = t.get("kind", "euclidean_radon")
    n = cfg["geometry"]["dim"]
    kappa = None
    if "kappa" in t and t["kappa"].strip() not in ("1", "1.0"):
        m = t.get("theta_dim", 1)
        names = _coord_names(m, "t") + ["s"] + _coord_names(n)
        kexpr = compile_expression(t["kappa"], names)

        def kappa(z, xs, kexpr=kexpr, m=m):
            xs = np.atleast_2d(xs)
            zz = np.broadcast_to(np.asarray(z)[: m + 1], (xs.shape[0], m + 1))
            return kexpr(np.concatenate([zz, xs], axis=1))

    if kind == "euclidean_radon":
        return TransformSpec(kind=kind, kappa=kappa,
                             nodes_per_unit=t.get("nodes_per_unit", 64))
    if kind in ("generic", "codim_k_radon"):
        m = t.get("theta_dim", 1)
        k = len(t["defining"])
        b_names = _coord_names(n) + _coord_names(m, "t")
        exprs = [compile_expression(e, b_names) for e in t["defining"]]

        def b(x, th):
            v = np.concatenate([np.asarray(x, dtype=float),
                                np.asarray(th, dtype=float)])[None, :]
            return np.array([float(e(v)[0]) for e in exprs])

        fib = from_defining_function(
            b, n=n, m=m, k=k, x_box=cfg["geometry"]["box"],
            theta_box=np.asarray(t["theta_box"], dtype=float), kappa=kappa)
        return TransformSpec(kind="generic", fibration=fib, kappa=kappa,
                             nodes_per_unit=t.get("nodes_per_unit", 64))
    raise SchemaError(f"transform kind {kind!r} not supported by the CLI",
                      field="transform/kind")


def _axes_from_grid(grid: dict):
    axes, names = [], []
    for name, spec in grid.items():
        lo, hi, count = float(spec[0]), float(spec[1]), int(spec[2])
        endpoint = bool(spec[3]) if len(spec) > 3 else True
        axes.append(np.linspace(lo, hi, count, endpoint=endpoint))
        names.append(name)
    return axes, names


def run(scenario_path, out_dir, seed=None, threads=1) -> int:
    """Execute a scenario; returns the process exit status."""
    t_start = time.time()
    cfg = load_scenario(scenario_path)
    if seed is not None:
        cfg["seed"] = int(seed)
    rng_seed = int(cfg.get("seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = cfg["task"]
    name = task["name"]
    outputs = []

    if name == "forward":
        spec = build_transform(cfg)
        f = build_field(cfg, cfg["geometry"]["dim"])
        axes, names = _axes_from_grid(cfg["transform"]["grid"])
        sino, report = sinogram(spec, f, axes, names)
        sino.to_csv(out / "sinogram.csv")
        outputs.append("sinogram.csv")
        if report:
            with open(out / "errors.json", "w") as fh:
                json.dump([{k: (v.tolist() if isinstance(v, np.ndarray) else v)
                            for k, v in e.items() if k != "index"}
                           for e in report], fh, indent=2)
            outputs.append("errors.json")
    elif name == "bolker":
        reports = []
        probes = task.get("probes", [])
        if probes and "xi" in probes[0]:
            symbol = build_symbol(cfg)
            for pr in probes:
                res = fiber_immersion_check(symbol, np.asarray(pr["x"], float),
                                            np.asarray(pr["xi"], float),
                                            np.asarray(pr["eta"], float))
                entry = {"probe": pr, "immersion": {"pass": res.passed,
                                                    "verdict": res.verdict,
                                                    "margin": res.margin}}
                if task.get("pvs", False):
                    pv = pvs_membership(symbol, np.asarray(pr["x"], float),
                                        np.asarray(pr["eta"], float))
                    entry["pvs"] = {"visible": pv.visible, "residual": pv.residual}
                reports.append(entry)
        else:
            spec = build_transform(cfg)
            fib = spec.fibration
            if fib is None:
                raise SchemaError("bolker task needs a fibration-backed transform",
                                  field="transform/kind")
            rng = np.random.default_rng(rng_seed)
            pts = []
            if task.get("random", 0):
                pts += random_canonical_points(fib, rng, int(task["random"]))
            from .fibration import canonical_point

            for pr in probes:
                pts.append(canonical_point(fib, np.asarray(pr["z"], float),
                                           np.asarray(pr["x"], float),
                                           np.asarray(pr["eta"], float)))
            for pt in pts:
                rep = bolker_report(fib, pt)
                reports.append(json.loads(rep.to_json()))
        with open(out / "bolker.json", "w") as fh:
            json.dump(reports, fh, indent=2)
        outputs.append("bolker.json")
    elif name == "wavefront":
        f = build_field(cfg, cfg["geometry"]["dim"])
        pts = [(np.asarray(p["u1"], float), np.asarray(p["u2"], float))
               for p in task["points"]]
        lams = task.get("lambdas", None)
        report = wavefront_scan(f, pts, lam_list=lams or
                                tuple(8.0 * 2 ** k for k in range(8)))
        report.to_csv(out / "wavefront.csv")
        outputs.append("wavefront.csv")
    elif name == "phase-check":
        spec = build_transform(cfg)
        fib = spec.fibration
        if fib is None:
            raise SchemaError("phase-check needs a fibration-backed transform",
                              field="transform/kind")
        diags = []
        for pr in task["points"]:
            diag = critical_point_solve(
                fib, np.asarray(pr["x"], float),
                (np.asarray(pr["v1"], float), np.asarray(pr["v2"], float)))
            diags.append(diag.to_json_dict())
        with open(out / "phase.json", "w") as fh:
            json.dump(diags, fh, indent=2)
        outputs.append("phase.json")
    elif name == "recover":
        spec = build_transform(cfg)
        fib = spec.fibration
        if fib is None:
            raise SchemaError("recover needs a fibration-backed transform",
                              field="transform/kind")
        f = build_field(cfg, cfg["geometry"]["dim"])
        symbol = build_symbol(cfg)
        fol_cfg = task["foliation"]
        names = _coord_names(cfg["geometry"]["dim"])
        Fexpr = compile_expression(fol_cfg["F"], names)
        fol = Foliation(F=lambda x: float(Fexpr(np.asarray(x)[None, :])[0]),
                        s_min=float(fol_cfg["s_min"]), s_max=float(fol_cfg["s_max"]),
                        dim=cfg["geometry"]["dim"],
                        r_max=float(fol_cfg.get("r_max", 10.0)))
        if task.get("validate_foliation", True):
            rep = foliation_validate(fol, symbol)
            with open(out / "foliation.json", "w") as fh:
                json.dump({"passed": rep.passed,
                           "failures": len(rep.failures)}, fh, indent=2)
            outputs.append("foliation.json")

        def data_oracle(zs):
            zs = np.atleast_2d(zs)
            return np.array([forward(spec, f, z) for z in zs])

        result = layer_strip(fol, fib, data_oracle, symbol,
                             points_per_level=int(task.get("points_per_level", 16)),
                             level_step=float(task.get("level_step", 0.05)))
        with open(out / "recovery.json", "w") as fh:
            fh.write(result.to_json())
        outputs.append("recovery.json")
    else:
        raise SchemaError(f"unknown task {name!r}", field="task/name")

    manifest = {
        "tool": "dftomo",
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "config_hash": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "seed": rng_seed,
        "threads": threads,
        "wall_time_s": time.time() - t_start,
        "outputs": outputs,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    log.info("wrote %s artifacts to %s in %.2fs", len(outputs), out,
             manifest["wall_time_s"])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dftomo",
        description="Double fibration transforms, recoverability checks, and "
                    "wave-packet singularity analysis.")
    parser.add_argument("command",
                        choices=["forward", "bolker", "wavefront", "phase-check",
                                 "recover", "validate"])
    parser.add_argument("--config", required=True, help="scenario JSON path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.config)
        if args.command == "validate":
            print("scenario OK")
            return 0
        if cfg["task"]["name"] != args.command:
            raise SchemaError(
                f"task name {cfg['task']['name']!r} does not match the "
                f"subcommand {args.command!r}", field="task/name")
        return run(args.config, args.out, seed=args.seed, threads=args.threads)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface module error names
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
