"""Command-line front end.

Commands: solve, counterexample, inequalities, verify, radii.  Exit codes:
0 success, 2 bad input or precondition, 3 continuation stuck or admissibility
window exceeded, 4 an oracle or check failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import capdomain as cd
from . import counterex as ce
from . import reconstruct as rc
from . import solver as sv
from . import symfun
from .errors import (
    ArgumentError,
    CapCurvError,
    ConeMembershipError,
    ContinuationStuckError,
    NotAdmissibleError,
    TTooLargeError,
)

log = logging.getLogger("capcurv")

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_STUCK = 3
EXIT_ORACLE = 4

SOLVER_KEYS = {f.name for f in dataclasses.fields(sv.SolverOptions)} - {"k"}
COMMON_KEYS = {"theta", "n", "k", "grid", "N1", "N2", "f", "seed", "out"}
COMMAND_KEYS = {
    "solve": COMMON_KEYS | SOLVER_KEYS,
    "radii": COMMON_KEYS | SOLVER_KEYS | {"solution"},
    "verify": COMMON_KEYS | {"solution", "residual_tol"},
    "counterexample": COMMON_KEYS | {"t_samples", "autoscale_t"},
    "inequalities": {"seed", "out", "n_values", "maclaurin_count", "concavity_count", "lambdas"},
}
DEFAULTS = {
    "theta": np.pi / 2,
    "n": 2,
    "k": 1,
    "N1": 64,
    "N2": 128,
    "f": "const:1",
    "seed": 0,
    "out": "out",
    "residual_tol": 1e-3,
    "n_values": [2, 3, 4, 5, 6],
    "maclaurin_count": 100000,
    "concavity_count": 10000,
}


class UsageError(Exception):
    pass


# -- config ---------------------------------------------------------------------------


def parse_grid(text: str):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise UsageError(f"grid must look like N1xN2, got {text!r}") from exc


def build_config(command: str, args: argparse.Namespace) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    unknown = set(cfg) - COMMAND_KEYS[command]
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    for key in ("theta", "n", "k", "f", "seed", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "grid", None):
        cfg["grid"] = args.grid
    if getattr(args, "solution", None):
        cfg["solution"] = args.solution
    if getattr(args, "t_samples", None):
        cfg["t_samples"] = [float(x) for x in args.t_samples.split(",")]
    if "grid" in cfg:
        cfg["N1"], cfg["N2"] = parse_grid(cfg.pop("grid")) if isinstance(cfg["grid"], str) else cfg.pop("grid")
    allowed = COMMAND_KEYS[command]
    for key, val in DEFAULTS.items():
        if key in allowed or key in ("N1", "N2"):
            cfg.setdefault(key, val)
    return {k: cfg[k] for k in sorted(cfg)}


def make_grid(cfg: dict) -> cd.CapGrid:
    return cd.build_grid(float(cfg["theta"]), int(cfg["n"]), int(cfg["N1"]), int(cfg["N2"]))


def solver_options(cfg: dict) -> sv.SolverOptions:
    kw = {k: cfg[k] for k in SOLVER_KEYS if k in cfg}
    return sv.SolverOptions(k=int(cfg["k"]), **kw)


def f_inverse(spec: str, grid: cd.CapGrid) -> cd.ScalarField:
    """f^-1 on the grid from ``const:c``, ``even-bump:a`` or ``file:path``.

    ``const:c`` means f = c; a file holds f values in the field CSV format.
    """
    kind, _, arg = spec.partition(":")
    if kind == "const":
        c = float(arg)
        if c <= 0:
            raise ArgumentError("const f must be positive")
        return cd.ScalarField(grid, np.full(grid.shape, 1.0 / c), "even_reflection_only")
    if kind == "even-bump":
        a = float(arg)
        if abs(a) >= 1:
            raise ArgumentError("even-bump amplitude must satisfy |a| < 1")
        return cd.ScalarField(grid, 1.0 + a * sv.bump_profile(grid), "even_reflection_only")
    if kind == "file":
        try:
            text = Path(arg).read_text(encoding="utf-8")
        except OSError as exc:
            raise ArgumentError(f"cannot read f file: {exc}") from exc
        f = cd.field_from_csv(text, grid, "even_reflection_only")
        if np.min(f.values) <= 0:
            raise ArgumentError("f read from file must be positive")
        return f.replace(values=1.0 / f.values)
    raise ArgumentError(f"unknown f spec {spec!r}; use const:c, even-bump:a or file:path")


# -- output ---------------------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    atomic_write(path, sv.dumps(obj) + "\n")


def envelope(command: str, cfg: dict, grid: cd.CapGrid | None, body: dict, status: int) -> dict:
    return {
        "command": command,
        "config": cfg,
        "grid_checksum": grid.checksum() if grid is not None else None,
        "exit_status": status,
        "result": body,
    }


def write_run_info(out: Path, started: float) -> None:
    write_json(
        out / "run_info.json",
        {
            "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "elapsed_seconds": round(time.time() - started, 3),
        },
    )


# -- oracle battery ---------------------------------------------------------------------------


def oracle_battery(h: cd.ScalarField, f_inv: cd.ScalarField, k: int, residual_tol: float) -> dict:
    """All checks on a support function; ``failed`` lists the names that did not pass."""
    checks = {}
    failed = []
    try:
        r = sv.residual(h, f_inv, k).values
    except NotAdmissibleError as exc:
        return {"admissibility": {"pass": False, "node": exc.node, "margin": exc.margin}, "failed": ["admissibility"]}
    rel = float(np.max(np.abs(r) / f_inv.values))
    checks["equation_residual"] = {"max_relative": rel, "tol": residual_tol, "pass": rel <= residual_tol}
    A = cd.radii_operator(h)
    res = sv.SolveResult(
        h=h,
        t=1.0,
        residual_norm=float(np.max(np.abs(r))),
        newton_iters=0,
        convexity_margin=A.min_eigenvalue,
        robin_residual_norm=float(np.max(np.abs(cd.robin_residual(h)))),
        evenness_defect=float(np.max(np.abs(h.values - cd.reflect(h).values))),
    )
    est = sv.estimate_oracles(res, f_inv, k)
    checks["inner_radius"] = est["inner_radius"]
    checks["gradient"] = est["gradient"]
    checks["sigma_n_lower"] = est["sigma_n_lower"]
    checks["eigenvalues"] = est["eigenvalues"]
    cw = rc.chou_wang_check(h)
    checks["chou_wang"] = {**cw.as_dict(), "pass": cw.cw_pass}
    rel21 = rc.classical_radii_relation(h, radii=cw)
    checks["classical_radii"] = rel21
    checks["integral_condition"] = {"moments": sv.integral_condition(f_inv).tolist()}
    checks["robin_residual"] = {"max": res.robin_residual_norm}
    for name, val in checks.items():
        if isinstance(val, dict) and val.get("pass") is False:
            failed.append(name)
    checks["failed"] = failed
    return checks


# -- commands ------------------------------------------------------------------------------------


def cmd_solve(cfg: dict, out: Path) -> int:
    grid = make_grid(cfg)
    k = int(cfg["k"])
    opts = solver_options(cfg)
    f_inv = f_inverse(cfg["f"], grid)
    try:
        path = sv.continuation(f_inv, k, opts)
    except ContinuationStuckError as exc:
        write_json(out / "report.json", envelope("solve", cfg, grid, {"error": str(exc), "diagnostics": exc.diagnostics}, EXIT_STUCK))
        return EXIT_STUCK
    final = path.final
    battery = oracle_battery(final.h, f_inv, k, cfg.get("residual_tol", 1e-3))
    report = sv.solver_report(path, f_inv, k)
    report["checks"] = battery
    report["step_history"] = path.step_history
    status = EXIT_OK if not battery["failed"] else EXIT_ORACLE
    atomic_write(out / "solution.csv", cd.field_to_csv(final.h))
    atomic_write(out / "mesh.txt", rc.embed(final.h).to_text())
    write_json(out / "report.json", envelope("solve", cfg, grid, report, status))
    return status


def _load_solution(cfg: dict, grid: cd.CapGrid) -> cd.ScalarField:
    if "solution" not in cfg:
        raise ArgumentError("a solution CSV is required (--solution)")
    try:
        text = Path(cfg["solution"]).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArgumentError(f"cannot read solution: {exc}") from exc
    return cd.field_from_csv(text, grid)


def cmd_verify(cfg: dict, out: Path) -> int:
    grid = make_grid(cfg)
    k = int(cfg["k"])
    h = _load_solution(cfg, grid)
    f_inv = f_inverse(cfg["f"], grid)
    battery = oracle_battery(h, f_inv, k, float(cfg["residual_tol"]))
    status = EXIT_OK if not battery["failed"] else EXIT_ORACLE
    write_json(out / "verify.json", envelope("verify", cfg, grid, battery, status))
    if battery["failed"]:
        print("failed oracles: " + ", ".join(battery["failed"]), file=sys.stderr)
    return status


def cmd_radii(cfg: dict, out: Path) -> int:
    grid = make_grid(cfg)
    k = int(cfg["k"])
    if "solution" in cfg:
        h = _load_solution(cfg, grid)
    else:
        try:
            h = sv.continuation(f_inverse(cfg["f"], grid), k, solver_options(cfg)).final.h
        except ContinuationStuckError as exc:
            write_json(out / "radii.json", envelope("radii", cfg, grid, {"error": str(exc)}, EXIT_STUCK))
            return EXIT_STUCK
    cw = rc.chou_wang_check(h)
    rel = rc.classical_radii_relation(h, radii=cw)
    ok = bool(cw.cw_pass and rel["pass"])
    status = EXIT_OK if ok else EXIT_ORACLE
    write_json(out / "radii.json", envelope("radii", cfg, grid, {"radii": cw.as_dict(), "relation": rel}, status))
    return status


def cmd_counterexample(cfg: dict, out: Path) -> int:
    grid = make_grid(cfg)
    k = int(cfg["k"])
    explicit = "t_samples" in cfg
    ts = cfg.get("t_samples", list(ce.DEFAULT_T_SAMPLES))
    autoscale = cfg.get("autoscale_t", not explicit)
    try:
        run = ce.expansion_verify(grid, k, ts, scale_samples=autoscale)
    except TTooLargeError as exc:
        body = {"error": "t samples leave the convexity window", "t_max": exc.t_max, "t_samples": ts}
        write_json(out / "counterexample.json", envelope("counterexample", cfg, grid, body, EXIT_STUCK))
        return EXIT_STUCK
    mink_ok = all(abs(x) <= 1e-3 for x in run.minkowski_residuals.values())
    ok = run.passed and mink_ok
    body = json.loads(run.to_json())
    body["minkowski_pass"] = mink_ok
    status = EXIT_OK if ok else EXIT_ORACLE
    write_json(out / "counterexample.json", envelope("counterexample", cfg, grid, body, status))
    rows = "t,I\n" + "".join(f"{t:.17g},{i:.17g}\n" for t, i in zip(run.t_samples, run.I_values))
    atomic_write(out / "moment.csv", rows)
    return status


def cmd_inequalities(cfg: dict, out: Path) -> int:
    rng = np.random.default_rng(int(cfg["seed"]))
    for lam in cfg.get("lambdas", []):
        if not symfun.in_gamma_k(np.asarray(lam, dtype=float), len(lam)):
            raise ConeMembershipError(f"lambda = {lam} is not in the positive cone")
    mac = []
    for n in cfg["n_values"]:
        mac.append(symfun.maclaurin_suite(rng, int(n), int(cfg["maclaurin_count"])))
    for lam in cfg.get("lambdas", []):
        for t in symfun.admissible_index_tuples(len(lam)):
            holds, lhs, rhs = symfun.maclaurin_chain_check(lam, *t)
            if not holds:
                mac.append({"n": len(lam), "violations": 1, "offender": {"lambda": lam, "tuple": list(t)}})
    conc = []
    for n in (2, 3, 4):
        conc.append(symfun.concavity_suite(rng, n, int(cfg["concavity_count"])))
    violations = sum(r["violations"] for r in mac) + sum(r["violations"] for r in conc)
    status = EXIT_OK if violations == 0 else EXIT_ORACLE
    body = {"maclaurin": mac, "concavity": conc, "total_violations": violations}
    write_json(out / "inequalities.json", envelope("inequalities", cfg, None, body, status))
    if violations:
        for r in mac + conc:
            if r.get("offender"):
                print(f"violation: {json.dumps(r['offender'])}", file=sys.stderr)
    return status


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "radii": cmd_radii,
    "counterexample": cmd_counterexample,
    "inequalities": cmd_inequalities,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capcurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config; flags override its values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if name != "inequalities":
            p.add_argument("--grid", help="N1xN2, e.g. 64x128")
            p.add_argument("--theta", type=float, help="contact angle in radians")
            p.add_argument("--n", type=int)
            p.add_argument("--k", type=int)
            p.add_argument("--f", help="const:c | even-bump:a | file:path")
        if name in ("verify", "radii"):
            p.add_argument("--solution", help="solution CSV in the field dump format")
        if name == "counterexample":
            p.add_argument("--t-samples", dest="t_samples", help="comma-separated t values (used as given)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = build_config(args.command, args)
        out = Path(cfg["out"])
        status = COMMANDS[args.command](cfg, out)
    except (UsageError, ArgumentError, ConeMembershipError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ContinuationStuckError as exc:
        print(f"continuation stuck: {exc}", file=sys.stderr)
        return EXIT_STUCK
    except CapCurvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    write_run_info(out, started)
    return status


if __name__ == "__main__":
    sys.exit(main())
