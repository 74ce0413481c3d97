"""``vimpc`` command line: train, certify, simulate, compare.

Exit codes: 0 success, 1 usage/config error, 2 value iteration did not
converge, 3 certification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from vimpc import config as config_mod
from vimpc.approximator import ValueApproximator
from vimpc.closed_loop import (
    Artifacts,
    Controller,
    SimConfig,
    check_value_decrease,
    compare_runs,
    comparison_csv,
    performance_sum,
    plot_traces,
    run_closed_loop,
)
from vimpc.errors import CertificationError, UsageError, VimpcError
from vimpc.horizon_cert import (
    HorizonCertificate,
    compute_horizons,
    estimate_epsilon,
    estimate_gamma,
    estimate_V_bar,
    sweep,
    sweep_csv,
)
from vimpc.models import lqr_baseline
from vimpc.value_iteration import ViResult, estimate_region_radius, vi_run

log = logging.getLogger("vimpc")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_CERT = 0, 1, 2, 3


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, data):
    _write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _setup_logging(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger("vimpc")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    fh = logging.FileHandler(out / "run.log")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    sh.setLevel(logging.WARNING)
    root.addHandler(sh)


# --- commands ----------------------------------------------------------------

def cmd_vi_train(cfg: dict, out: Path, args) -> int:
    model = config_mod.build_model(cfg)
    result = vi_run(model, config_mod.build_vi_config(cfg, model), config_mod.build_inner_config(cfg))
    _write_json(out / "approximator.json", result.approximator.to_dict())
    _write_json(out / "vi_result.json", result.to_dict())
    _write(out / "history.csv", result.history_csv())
    summary = {
        "iterations": result.iterations,
        "converged": result.converged,
        "c_e": result.c_e_measured,
        "c_delta": result.c_delta_measured,
        "c_e_plus_c_delta": result.c_e_measured + result.c_delta_measured,
    }
    _write_json(out / "vi_summary.json", summary)
    log.info("vi-train: %s", summary)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _states_of_interest(cfg: dict) -> np.ndarray:
    states = [cfg["simulate"]["x0"]]
    for run in cfg["compare"]["runs"]:
        if "x0" in run:
            states.append(run["x0"])
    return np.asarray(states, dtype=float)


def cmd_certify(cfg: dict, out: Path, args) -> int:
    cc = cfg["certificate"]
    keys = ("gamma", "epsilon", "V_bar", "c_e", "c_delta")
    vals = {k: cc[k] for k in keys}
    region = None
    if any(v is None for v in vals.values()):
        vi_path = Path(args.vi_result) if args.vi_result else out / "vi_result.json"
        if not vi_path.exists():
            raise UsageError(f"missing VI result {vi_path}; run vi-train first")
        result = ViResult.from_dict(json.loads(vi_path.read_text()))
        model = config_mod.build_model(cfg)
        inner = config_mod.build_inner_config(cfg)
        approx = result.approximator
        omega = approx.domain or config_mod.build_vi_config(cfg, model).resolved_domain(model)
        if vals["c_e"] is None:
            vals["c_e"] = result.c_e_measured
        if vals["c_delta"] is None:
            vals["c_delta"] = result.c_delta_measured
        if vals["gamma"] is None:
            samples = result.eval_states[: cc["gamma_samples"]]
            vals["gamma"] = estimate_gamma(approx, model, omega, samples, cc["N_roll"], inner)
        if vals["epsilon"] is None:
            vals["epsilon"] = estimate_epsilon(approx, model, omega, inner,
                                               n_points=cc["epsilon_points"], seed=cfg["seed"])
        if vals["V_bar"] is None:
            vals["V_bar"] = estimate_V_bar(approx, model, _states_of_interest(cfg), cc["N_roll"], inner)
        try:
            region = estimate_region_radius(approx, omega, cc["region_grid_density"])
        except UsageError as exc:
            log.warning("region radius unavailable: %s", exc)
    cert = compute_horizons(region_radius=region, **{k: float(v) for k, v in vals.items()})
    _write_json(out / "certificate.json", cert.to_dict())
    if cc["sweep"]:
        rows = sweep(cert, cc["sweep_lo"], cc["sweep_hi"], cc["sweep_steps"])
        _write(out / "sweep.csv", sweep_csv(rows))
    log.info("certify: N_Omega=%d N_Vbar=%d", cert.N_Omega, cert.N_Vbar)
    return EXIT_OK


def _load_artifacts(cfg: dict, out: Path, args, controllers) -> Artifacts:
    model = config_mod.build_model(cfg)
    approx = cert = lqr = None
    approx_path = Path(args.approximator) if args.approximator else out / "approximator.json"
    cert_path = Path(args.certificate) if args.certificate else out / "certificate.json"
    needs_approx = any(c in (Controller.ADP_MPC, Controller.RAW_POLICY) for c in controllers)
    if approx_path.exists():
        approx = ValueApproximator.from_dict(json.loads(approx_path.read_text()))
    elif needs_approx:
        raise UsageError(f"missing approximator {approx_path}")
    if cert_path.exists():
        cert = HorizonCertificate.from_dict(json.loads(cert_path.read_text()))
    elif args.certificate:
        raise UsageError(f"missing certificate {cert_path}")
    if Controller.LQR_TERMINAL in controllers:
        lqr = lqr_baseline(model)
    return Artifacts(approx, cert, lqr, config_mod.build_inner_config(cfg))


def _sim_config(cfg: dict, controller, N, x0) -> SimConfig:
    mpc = cfg["mpc"]
    return SimConfig(controller=controller, x0=x0, N=N, steps=cfg["simulate"]["steps"],
                     warm_start=mpc["warm_start"], mu=mpc["mu"], tol=mpc["tol"],
                     max_iter=mpc["max_iter"])


def _trace_summary(trace, model, cert) -> dict:
    summary = {
        "controller": trace.controller.value,
        "N": trace.N,
        "x0": trace.x0.tolist(),
        "steps": trace.steps,
        "sum_stage_cost": performance_sum(trace),
        "final_norm": float(np.linalg.norm(trace.states[-1])),
        "feasible_steps": int(np.sum(trace.feasible)),
    }
    if trace.terminal_in_B_eps is not None:
        summary["terminal_in_B_eps_steps"] = int(np.sum(trace.terminal_in_B_eps))
    if cert is not None and trace.controller is not Controller.RAW_POLICY:
        rep = check_value_decrease(trace, cert)
        summary["value_decrease_violations"] = rep.violations
    return summary


def cmd_simulate(cfg: dict, out: Path, args) -> int:
    model = config_mod.build_model(cfg)
    controller = Controller(cfg["mpc"]["controller"])
    artifacts = _load_artifacts(cfg, out, args, [controller])
    sim = _sim_config(cfg, controller, cfg["mpc"]["N"], cfg["simulate"]["x0"])
    trace = run_closed_loop(model, sim, artifacts)
    _write(out / "trace.csv", trace.to_csv())
    _write_json(out / "simulate_summary.json", _trace_summary(trace, model, artifacts.certificate))
    if cfg["output"]["plots"]:
        plot_traces([trace], [controller.value], out / "trace.svg")
    return EXIT_OK


def parse_run_spec(text: str, default_x0) -> dict:
    """``[label=]CONTROLLER:N[@x1,x2,...]``."""
    label = None
    if "=" in text:
        label, text = text.split("=", 1)
    x0 = default_x0
    if "@" in text:
        text, xs = text.split("@", 1)
        x0 = [float(v) for v in xs.split(",")]
    try:
        controller, N = text.split(":")
        Controller(controller)
        N = int(N)
    except ValueError as exc:
        raise UsageError(f"bad run spec {text!r}: expected CONTROLLER:N") from exc
    return {"label": label or f"{controller}_N{N}", "controller": controller, "N": N, "x0": x0}


def cmd_compare(cfg: dict, out: Path, args) -> int:
    model = config_mod.build_model(cfg)
    default_x0 = cfg["simulate"]["x0"]
    runs = [dict({"x0": default_x0}, **r) for r in cfg["compare"]["runs"]]
    runs += [parse_run_spec(s, default_x0) for s in (args.run or [])]
    if len(runs) < 2:
        raise UsageError("compare needs at least two run specs")
    x0s = {tuple(float(v) for v in r["x0"]) for r in runs}
    if len(x0s) > 1:
        raise UsageError("all compared runs must share x0")
    controllers = [Controller(r["controller"]) for r in runs]
    artifacts = _load_artifacts(cfg, out, args, controllers)
    sims = [_sim_config(cfg, c, int(r["N"]), r["x0"]) for c, r in zip(controllers, runs)]
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        traces = list(pool.map(lambda s: run_closed_loop(model, s, artifacts), sims))
    labels = [r.get("label") or f"{r['controller']}_N{r['N']}" for r in runs]
    rows = compare_runs(traces, labels, model)
    _write(out / "comparison.csv", comparison_csv(rows))
    for trace, label in zip(traces, labels):
        _write(out / f"trace_{label}.csv", trace.to_csv())
    if cfg["output"]["plots"]:
        plot_traces(traces, labels, out / "comparison.svg")
    return EXIT_OK


COMMANDS = {
    "vi-train": cmd_vi_train,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vimpc", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="worker cap for parallel runs")
    parser.add_argument("--print-config", action="store_true",
                        help="print the fully resolved configuration and exit")
    parser.add_argument("--vi-result", help="VI result JSON for certify (default OUT/vi_result.json)")
    parser.add_argument("--approximator", help="approximator JSON (default OUT/approximator.json)")
    parser.add_argument("--certificate", help="certificate JSON (default OUT/certificate.json)")
    parser.add_argument("--run", action="append",
                        help="compare run spec [label=]CONTROLLER:N[@x0,...]; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = config_mod.load_config(args.config, overrides)
        if args.out:
            cfg["output"]["directory"] = args.out
        if args.print_config:
            print(config_mod.dumps(cfg))
            return EXIT_OK
        out = Path(cfg["output"]["directory"])
        _setup_logging(out)
        return COMMANDS[args.command](cfg, out, args)
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VimpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
