"""Command-line front end: convergence sweeps, coarsening runs, verification.

Three subcommands:

* ``converge``  -- forced manufactured-solution runs on graded meshes,
  emitting an N/error/order table (CSV + figure);
* ``simulate``  -- a coarsening run on a fixed or adaptive time mesh,
  emitting trace/step-size CSVs, height-field snapshots, and figures;
* ``verify``    -- the randomized kernel/inequality certification battery
  plus a kernel-table dump.

Options may also be supplied through ``--config FILE`` holding flat
``key = value`` lines grouped in arbitrary ``[sections]``; explicit
command-line flags win over file values.  Every run writes an echo file
with the effective parameters.  Exit codes: 0 success, 1 solver failure,
2 configuration error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import figures, model, verify
from .adaptive import ControllerConfig, run_adaptive
from .grid import GridSpec, write_snapshot
from .grid import l2_array
from .model import ModelParams, write_trace_csv
from .solver import SolverConfig, SolverError, march
from .timekernels import RATIO_LIMIT, TimeMesh, doc_table, doc_table_recursion

TWO_PI = 6.283185307179586


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).split(",") if tok.strip() != ""]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok.strip() != ""]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


# Per-key converters used for config-file values.
_CONVERT = {
    "M": int, "L": float, "delta": float, "T": float, "tau": float,
    "N_list": _int_list, "graded_r": float, "forcing": str, "adaptive": _bool,
    "rho": float, "tol": float, "tau_min": float, "tau_max": float,
    "ratio_cap": float, "picard_tol": float, "max_picard": int, "omega": float,
    "snapshots": _float_list, "out": str, "seed": int, "trials": int,
    "e_metric": str,
}

_DEFAULTS = {
    "converge": dict(
        M=64, L=TWO_PI, delta=0.1, T=1.0, N_list=[40, 80, 160, 320],
        graded_r=2.0, forcing="discrete", picard_tol=1e-12, max_picard=500,
        omega=1.0, out="out", seed=0,
    ),
    "simulate": dict(
        M=128, L=TWO_PI, delta=0.1, T=30.0, tau=1e-3, adaptive=False,
        forcing="none", rho=0.9, tol=1e-3, tau_min=1e-4, tau_max=0.1,
        ratio_cap=2.414, picard_tol=1e-12, max_picard=500, omega=1.0,
        e_metric="absolute", snapshots=[0.0, 0.05, 2.5, 5.5, 8.0, 30.0],
        out="out", seed=0,
    ),
    "verify": dict(out="out", seed=0, trials=None),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbeslope",
        description="Variable-step implicit BDF2 solver for thin-film growth with slope selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, help="key = value config file; flags win")
        p.add_argument("--M", type=int, help="grid points per direction")
        p.add_argument("--L", type=float, help="domain edge length")
        p.add_argument("--delta", type=float, help="corner-width coefficient")
        p.add_argument("--picard-tol", dest="picard_tol", type=float)
        p.add_argument("--max-picard", dest="max_picard", type=int)
        p.add_argument("--omega", type=float, help="sweep relaxation weight")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--seed", type=int)

    pc = sub.add_parser("converge", help="temporal convergence table on graded meshes")
    common(pc)
    pc.add_argument("--T", type=float, help="final time")
    pc.add_argument("--N-list", dest="N_list", type=_int_list, help="comma-separated level counts")
    pc.add_argument("--graded-r", dest="graded_r", type=float, help="mesh grading exponent")
    pc.add_argument("--forcing", choices=("none", "discrete", "analytic"))

    ps = sub.add_parser("simulate", help="coarsening run (fixed or adaptive steps)")
    common(ps)
    ps.add_argument("--T", type=float, help="final time")
    ps.add_argument("--tau", type=float, help="fixed step size")
    ps.add_argument("--adaptive", action="store_true", default=None)
    ps.add_argument("--forcing", choices=("none", "discrete", "analytic"))
    ps.add_argument("--rho", type=float, help="safety coefficient")
    ps.add_argument("--tol", type=float, help="step-change tolerance")
    ps.add_argument("--tau-min", dest="tau_min", type=float)
    ps.add_argument("--tau-max", dest="tau_max", type=float)
    ps.add_argument("--ratio-cap", dest="ratio_cap", type=float)
    ps.add_argument("--e-metric", dest="e_metric", choices=("absolute", "relative"))
    ps.add_argument("--snapshots", type=_float_list, help="comma-separated snapshot times")

    pv = sub.add_parser("verify", help="randomized kernel/inequality certification")
    common(pv)
    pv.add_argument("--trials", type=int, help="override every sweep's trial count")
    pv.add_argument("--inject-bad-kernel", action="store_true", default=None,
                    help=argparse.SUPPRESS)

    return parser


_KEY_LOOKUP = {k.lower(): k for k in _CONVERT}


def _read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError("--config", f"cannot read {path}")
    values = {}
    sections = list(parser.sections())
    if parser.defaults():
        sections.insert(0, "DEFAULT")
    for section in sections:
        for key, raw in parser.items(section):
            norm = _KEY_LOOKUP.get(key.strip().replace("-", "_").lower())
            if norm is None:
                raise ConfigError("--config", f"unknown key {key!r}")
            try:
                values[norm] = _CONVERT[norm](raw)
            except ValueError as exc:
                raise ConfigError("--config", f"bad value for {key!r}: {exc}") from exc
    return values


def _effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[args.command])
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config)
        # keys irrelevant to this subcommand are tolerated so one file can
        # drive several runs
        cfg.update({k: v for k, v in file_values.items() if k in cfg})
    for key in cfg:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            cfg[key] = cli_val
    extra = getattr(args, "inject_bad_kernel", None)
    cfg["inject_bad_kernel"] = bool(extra)
    cfg["command"] = args.command
    return cfg


def _validate_common(cfg: dict):
    if cfg["command"] == "verify":
        return
    if cfg["M"] < 4:
        raise ConfigError("--M", f"need at least 4 grid points, got {cfg['M']}")
    if cfg["L"] <= 0:
        raise ConfigError("--L", f"must be positive, got {cfg['L']}")
    if cfg["delta"] <= 0:
        raise ConfigError("--delta", f"must be positive, got {cfg['delta']}")
    if cfg["picard_tol"] <= 0:
        raise ConfigError("--picard-tol", f"must be positive, got {cfg['picard_tol']}")
    if cfg["max_picard"] < 1:
        raise ConfigError("--max-picard", f"must be at least 1, got {cfg['max_picard']}")
    if not 0 < cfg["omega"] <= 1:
        raise ConfigError("--omega", f"must lie in (0, 1], got {cfg['omega']}")


def _validate(cfg: dict):
    _validate_common(cfg)
    cmd = cfg["command"]
    if cmd == "converge":
        if cfg["T"] <= 0:
            raise ConfigError("--T", f"must be positive, got {cfg['T']}")
        if not cfg["N_list"] or any(n < 1 for n in cfg["N_list"]):
            raise ConfigError("--N-list", f"need positive level counts, got {cfg['N_list']}")
        if cfg["graded_r"] < 1:
            raise ConfigError("--graded-r", f"must be at least 1, got {cfg['graded_r']}")
        if cfg["forcing"] == "none":
            raise ConfigError("--forcing", "convergence runs need a manufactured source "
                                           "(choose discrete or analytic)")
        for N in cfg["N_list"]:
            mesh = TimeMesh.graded(cfg["T"], N, cfg["graded_r"]) if N > 1 else None
            if mesh is not None and not mesh.admissible(RATIO_LIMIT):
                raise ConfigError(
                    "--graded-r",
                    f"grading {cfg['graded_r']} gives step ratio "
                    f"{mesh.max_ratio:.3f} past the limit {RATIO_LIMIT} at N={N}",
                )
    elif cmd == "simulate":
        if cfg["T"] < 0:
            raise ConfigError("--T", f"must be nonnegative, got {cfg['T']}")
        if cfg["tau"] <= 0:
            raise ConfigError("--tau", f"must be positive, got {cfg['tau']}")
        if not 0 < cfg["rho"] <= 1:
            raise ConfigError("--rho", f"must lie in (0, 1], got {cfg['rho']}")
        if cfg["tol"] <= 0:
            raise ConfigError("--tol", f"must be positive, got {cfg['tol']}")
        if not 0 < cfg["tau_min"] <= cfg["tau_max"]:
            raise ConfigError("--tau-min", f"need 0 < tau_min <= tau_max, got "
                                           f"{cfg['tau_min']} and {cfg['tau_max']}")
        if not 1 < cfg["ratio_cap"] <= 4.864:
            raise ConfigError("--ratio-cap", f"must lie in (1, 4.864], got {cfg['ratio_cap']}")
        if any(t < 0 for t in cfg["snapshots"]):
            raise ConfigError("--snapshots", "snapshot times must be nonnegative")
    elif cmd == "verify":
        if cfg.get("trials") is not None and cfg["trials"] < 1:
            raise ConfigError("--trials", f"must be at least 1, got {cfg['trials']}")


def _echo_config(cfg: dict, out: Path):
    lines = []
    for key in sorted(cfg):
        if key in ("inject_bad_kernel",):
            continue
        val = cfg[key]
        if isinstance(val, list):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    (out / "config_echo.txt").write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# converge

def _run_one_case(N: int, cfg: dict, params: ModelParams) -> float:
    grid = params.grid
    provider = model.forcing_provider(params, cfg["forcing"])
    mesh = TimeMesh.graded(cfg["T"], N, cfg["graded_r"])
    phi0 = model.manufactured(0.0, grid)
    u0 = model.initial_data(phi0, params, mesh.tau(1), forcing_at_0=provider(0.0))
    solver_cfg = SolverConfig(
        picard_tol=cfg["picard_tol"], max_picard=cfg["max_picard"],
        relaxation=cfg["omega"], mode=cfg["forcing"],
    )
    result = march(u0, mesh, solver_cfg, params, forcing_provider=provider)
    exact = model.manufactured(cfg["T"], grid)
    # final-time error per unit domain measure
    return l2_array(result.final.values - exact.values, grid.h) / grid.L


def cmd_converge(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(L=cfg["L"], M=cfg["M"])
    params = ModelParams(delta=cfg["delta"], grid=grid)
    Ns = list(cfg["N_list"])

    with ThreadPoolExecutor(max_workers=min(4, len(Ns))) as pool:
        errors = list(pool.map(lambda N: _run_one_case(N, cfg, params), Ns))

    orders = [""]
    for i in range(1, len(Ns)):
        orders.append(_fmt(math.log(errors[i - 1] / errors[i], 2)))

    with open(out / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "error", "order"])
        for N, err, order in zip(Ns, errors, orders):
            writer.writerow([N, _fmt(err), order])

    _echo_config(cfg, out)
    figures.render_convergence(Ns, errors, out / "convergence.png")
    print(f"{'N':>6} {'error':>14} {'order':>8}")
    for N, err, order in zip(Ns, errors, orders):
        print(f"{N:>6} {err:>14.4e} {order if not order else float(order):>8}")
    return 0


# ---------------------------------------------------------------------------
# simulate

def _snapshot_paths(out: Path, taken: dict) -> None:
    for requested, (t_real, field) in sorted(taken.items()):
        stem = f"snapshot_t{requested:g}"
        write_snapshot(field, t_real, out / f"{stem}.mbe1")
        figures.render_height(field, t_real, out / f"height_t{requested:g}.png")


def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(L=cfg["L"], M=cfg["M"])
    params = ModelParams(delta=cfg["delta"], grid=grid)
    provider = model.forcing_provider(params, cfg["forcing"])
    phi0 = model.manufactured(0.0, grid) if provider else model.coarsening_initial(grid)
    snapshot_times = sorted(t for t in cfg["snapshots"] if t <= cfg["T"] + 1e-12)
    solver_cfg = SolverConfig(
        picard_tol=cfg["picard_tol"], max_picard=cfg["max_picard"],
        relaxation=cfg["omega"], mode=cfg["forcing"],
    )

    if cfg["T"] == 0.0:
        u0 = phi0
        obs = model.observables(u0.values, grid, params.delta)
        trace = [model.EnergyRecord(step=0, t=0.0, tau=0.0, E=obs.energy,
                                    E_mod=obs.energy, roughness=obs.roughness,
                                    picard_iters=0)]
        write_trace_csv(trace, out / "trace.csv")
        _write_stepsizes(trace, out)
        if snapshot_times:
            _snapshot_paths(out, {0.0: (0.0, u0)})
        _echo_config(cfg, out)
        figures.render_energy(trace, out / "energy.png")
        figures.render_roughness(trace, out / "roughness.png")
        print("T = 0: wrote initial state only")
        return 0

    if cfg["adaptive"]:
        tau1 = cfg["tau_min"]
        controller = ControllerConfig(
            rho=cfg["rho"], tol=cfg["tol"], tau_min=cfg["tau_min"],
            tau_max=cfg["tau_max"], ratio_cap=cfg["ratio_cap"],
            e_metric=cfg["e_metric"],
        )
        u0 = model.initial_data(phi0, params, tau1,
                                forcing_at_0=provider(0.0) if provider else None)
        result = run_adaptive(u0, cfg["T"], controller, solver_cfg, params,
                              forcing_provider=provider, snapshot_times=snapshot_times)
        extra_rows = [(1, int(r)) for r in result.rejections]
        write_trace_csv(result.trace, out / "trace.csv",
                        extra_columns=("accepted", "rejections"), extra_rows=extra_rows)
        print(f"adaptive run: {result.accepted_steps} accepted steps, "
              f"{result.total_rejections} rejections, "
              f"tau in [{result.tau_min_realized:.3e}, {result.tau_max_realized:.3e}], "
              f"E(T) = {result.trace[-1].E:.6f}")
    else:
        N = max(1, round(cfg["T"] / cfg["tau"]))
        mesh = TimeMesh.uniform(cfg["T"], N)
        u0 = model.initial_data(phi0, params, mesh.tau(1),
                                forcing_at_0=provider(0.0) if provider else None)
        result = march(u0, mesh, solver_cfg, params, forcing_provider=provider,
                       snapshot_times=snapshot_times)
        write_trace_csv(result.trace, out / "trace.csv")
        print(f"fixed-step run: {mesh.N} steps of tau = {mesh.tau(1):.3e}, "
              f"E(T) = {result.trace[-1].E:.6f}")

    _write_stepsizes(result.trace, out)
    _snapshot_paths(out, result.snapshots)
    _echo_config(cfg, out)
    figures.render_energy(result.trace, out / "energy.png")
    figures.render_stepsizes(result.trace, out / "stepsizes.png")
    figures.render_roughness(result.trace, out / "roughness.png")
    return 0


def _write_stepsizes(trace, out: Path):
    with open(out / "stepsizes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "tau"])
        for rec in trace:
            writer.writerow([rec.step, _fmt(rec.t), _fmt(rec.tau)])


# ---------------------------------------------------------------------------
# verify

def _dump_kernel_table(out: Path, seed: int):
    rng = np.random.default_rng(seed)
    mesh = verify.random_mesh(rng, n_max=40)
    rows = doc_table(mesh, mesh.N)
    rows_rec = doc_table_recursion(mesh, mesh.N)
    with open(out / "kernels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "k", "theta", "theta_product_formula", "abs_diff"])
        for n in range(1, mesh.N + 1):
            for k in range(1, n + 1):
                recursion_val = rows_rec[n - 1][k - 1]
                product_val = rows[n - 1][k - 1]
                writer.writerow([
                    n, k, _fmt(recursion_val), _fmt(product_val),
                    _fmt(abs(recursion_val - product_val)),
                ])


def cmd_verify(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    reports = verify.run_all(
        seed=cfg["seed"], trials=cfg.get("trials"),
        _corrupt_kernels=cfg.get("inject_bad_kernel", False),
    )
    for rep in reports:
        print(rep.line())
    with open(out / "verify_reports.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "trials", "worst_slack", "tolerance", "passed"])
        for rep in reports:
            writer.writerow([rep.name, rep.trials, _fmt(rep.worst_slack),
                             _fmt(rep.tolerance), int(rep.passed)])
    _dump_kernel_table(out, cfg["seed"])
    _echo_config(cfg, out)
    return 0 if all(r.passed for r in reports) else 3


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        _validate(cfg)
        if args.command == "converge":
            return cmd_converge(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_verify(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
