"""Command-line front end: ``awh-lab {run,oracle,diagnose,ode} --config FILE``.

Exit codes: 0 ok, 1 a check failed, 2 configuration error, 3 runtime error.
Every command is a pure function of the config file and flags; outputs carry
no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import awh, config as cfgmod, diagnostics as diag, fixtures, kernels, ode
from .ergodic import ErgodicTracker, Observable, optimal_zeta
from .model import (
    EnergyModel,
    ModelError,
    exact_expectation,
    free_energies,
    optimal_theta,
    validate_rho,
)
from .reports import theta_header, trajectory_rows, write_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

# diagnose thresholds
IDENTITY_TOL = 1e-12
SIGN_TOL = 1e-14
GRAD_TOL = 1e-6
EXT_SIGN_TOL = 1e-12
JENSEN_TOL = 1e-12
ENUM_TOL = 1e-12


@dataclass
class Experiment:
    cfg: cfgmod.Config
    model: EnergyModel
    kernel: object
    rho: np.ndarray
    box: awh.HyperRectangle
    observables: list
    targets: list
    oracle: bool
    seed: int

    def awh_config(self, **overrides) -> awh.AwhConfig:
        c = self.cfg
        kw = dict(
            model=self.model, kernel=self.kernel, rho=self.rho, box=self.box,
            N=c.get_int("awh.N"), N_I=c.get_int("awh.N_I"), theta0=self.theta0(),
            x0=c.get_int("awh.x0"), lambda0=c.get_int("awh.lambda0"), seed=self.seed,
            update_mode=c.get_str("awh.update_mode"),
        )
        kw.update(overrides)
        return awh.AwhConfig(**kw)

    def theta0(self) -> np.ndarray:
        raw = self.cfg.get_str("awh.theta0")
        if raw == "zeros":
            return np.zeros(self.model.n_lambda)
        v = self.cfg.get_vector("awh.theta0")
        if len(v) != self.model.n_lambda:
            self.cfg.fail("awh.theta0", f"expected {self.model.n_lambda} values")
        return np.array(v)


# --------------------------------------------------------------------------
# config -> objects
# --------------------------------------------------------------------------


def _build_model(cfg: cfgmod.Config) -> EnergyModel:
    name = cfg.get_str("model.name")
    labels = cfg.get_vector("model.labels")
    if name == "csv":
        path = cfg.get_str("model.csv")
        if not path:
            cfg.fail("model.csv", "required when model.name = csv")
        p = Path(path)
        if not p.is_absolute():
            p = Path(cfg.source).parent / p
        if not p.exists():
            cfg.fail("model.csv", f"file not found: {p}")
        try:
            return EnergyModel.from_csv(p, labels=labels)
        except (ModelError, ValueError) as exc:
            cfg.fail("model.csv", str(exc))
    params = {}
    if name.startswith("double-well-"):
        for k in ("height", "width", "tilt"):
            if cfg.get_str(f"model.{k}") is not None:
                params[k] = cfg.get_float(f"model.{k}")
    elif name.startswith("ising-chain-"):
        for k in ("coupling", "field"):
            if cfg.get_str(f"model.{k}") is not None:
                params[k] = cfg.get_float(f"model.{k}")
    if labels is not None:
        params["ladder"] = tuple(labels)
    try:
        return fixtures.build(name, **params)
    except (ModelError, ValueError) as exc:
        cfg.fail("model.name", str(exc))


def _build_kernel(cfg: cfgmod.Config, model: EnergyModel):
    kind = cfg.get_str("kernel.proposal")
    table = {
        "default": lambda: fixtures.default_neighbors(model),
        "lattice": lambda: kernels.lattice_neighbors(model.n_states),
        "complete": lambda: kernels.complete_neighbors(model.n_states),
        "spin-flip": lambda: kernels.spin_flip_neighbors(model.n_states.bit_length() - 1),
    }
    if kind not in table:
        cfg.fail("kernel.proposal", f"expected one of {sorted(table)}")
    try:
        return kernels.MetropolisKernel(model, table[kind]())
    except kernels.KernelError as exc:
        cfg.fail("kernel.proposal", str(exc))


def _build_rho(cfg: cfgmod.Config, n: int) -> np.ndarray:
    if cfg.get_str("rho") == "uniform":
        return np.full(n, 1.0 / n)
    v = np.array(cfg.get_vector("rho"))
    if v.shape != (n,) or np.any(v <= 0) or abs(v.sum() - 1.0) > 1e-9:
        cfg.fail("rho", f"expected {n} positive weights summing to 1")
    return validate_rho(v / v.sum(), n)


def _build_box(cfg: cfgmod.Config, model: EnergyModel, rho, oracle: bool) -> awh.HyperRectangle:
    lo, hi = cfg.get_vector("box.lower"), cfg.get_vector("box.upper")
    try:
        if lo is not None or hi is not None:
            if lo is None or hi is None:
                cfg.fail("box.lower", "box.lower and box.upper go together")
            return awh.HyperRectangle(np.array(lo), np.array(hi))
        bound = cfg.get_str("box.bound")
        if bound == "auto":
            if not oracle:
                cfg.fail("box.bound", "auto bound needs oracle = on")
            return awh.default_box(model, rho)
        return awh.HyperRectangle.cube(cfg.get_float("box.bound"), model.n_lambda)
    except ModelError as exc:
        cfg.fail("box.bound", str(exc))


_OBS = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*:\s*(coordinate|indicator|constant)\s*(?:\((.*)\))?\s*$")


def _parse_states(text: str, n: int) -> list[int]:
    out = []
    for tok in text.split():
        if "-" in tok:
            a, b = tok.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    if not out or min(out) < 0 or max(out) >= n:
        raise ValueError("state index out of range")
    return out


def _build_observables(cfg: cfgmod.Config, n_states: int) -> list[Observable]:
    text = cfg.get_str("observables") or ""
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        m = _OBS.match(item)
        if not m:
            cfg.fail("observables", f"cannot parse {item!r}")
        name, kind, arg = m.groups()
        try:
            if kind == "coordinate":
                out.append(Observable.coordinate(n_states, name))
            elif kind == "indicator":
                out.append(Observable.indicator(n_states, _parse_states(arg or "", n_states), name))
            else:
                out.append(Observable.constant(n_states, float(arg), name))
        except (TypeError, ValueError) as exc:
            cfg.fail("observables", f"{item!r}: {exc}")
    if len({o.name for o in out}) != len(out):
        cfg.fail("observables", "observable names must be unique")
    return out


def _build_targets(cfg: cfgmod.Config, n: int) -> list[int]:
    raw = cfg.get_str("targets")
    if raw == "mid":
        return [n // 2]
    if raw == "all":
        return list(range(n))
    try:
        t = [int(s) for s in raw.split(",")]
    except ValueError:
        cfg.fail("targets", f"expected 'mid', 'all' or indices, got {raw!r}")
    if min(t) < 0 or max(t) >= n:
        cfg.fail("targets", "grid index out of range")
    return t


def build_experiment(cfg: cfgmod.Config, seed: int | None = None) -> Experiment:
    model = _build_model(cfg)
    kernel = _build_kernel(cfg, model)
    rho = _build_rho(cfg, model.n_lambda)
    oracle = cfg.get_bool("oracle")
    box = _build_box(cfg, model, rho, oracle)
    exp = Experiment(cfg, model, kernel, rho, box, _build_observables(cfg, model.n_states),
                     _build_targets(cfg, model.n_lambda), oracle,
                     cfg.get_int("awh.seed") if seed is None else seed)
    if cfg.get_str("awh.update_mode") not in awh.UPDATE_MODES:
        cfg.fail("awh.update_mode", f"expected one of {awh.UPDATE_MODES}")
    try:
        exp.awh_config()
    except ModelError as exc:
        cfg.fail("awh.N", str(exc))
    return exp


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _v_series(exp: Experiment, thetas) -> np.ndarray | None:
    if not exp.oracle:
        return None
    return np.array([diag.lyapunov_V(exp.model, th, exp.rho).v for th in thetas])


def cmd_run(exp: Experiment, out: Path, args) -> int:
    model, rho = exp.model, exp.rho
    tracker = ErgodicTracker(model.n_states, tuple(exp.targets), tuple(exp.observables))
    traj = awh.run(exp.awh_config(), observers=[tracker])
    n_l = model.n_lambda
    write_csv(out / "trajectory.csv", theta_header(n_l),
              trajectory_rows(traj.thetas, traj.clamped_coords(), _v_series(exp, traj.thetas)))

    labels = model.grid.labels
    est = awh.free_energy_table(traj.final_theta, rho)
    exact = None
    if exp.oracle:
        f = free_energies(model)
        exact = f[:, None] - f[None, :]
    rows = []
    for i in range(n_l):
        for j in range(i + 1, n_l):
            o = None if exact is None else exact[i, j]
            rows.append([i, j, labels[i], labels[j], est[i, j], o,
                         None if o is None else abs(est[i, j] - o)])
    write_csv(out / "free_energy.csv",
              ["i", "j", "lambda_i", "lambda_j", "estimate", "oracle", "abs_error"], rows)

    theta = traj.final_theta
    rows = [[j, labels[j], theta[j], theta[j] - theta[0]] for j in range(n_l)]
    header = ["grid_index", "lambda_label", "theta", "theta_anchored"]
    if not exp.cfg.get_bool("awh.report_anchored"):
        rows = [r[:3] for r in rows]
        header = header[:3]
    write_csv(out / "theta_final.csv", header, rows)

    if exp.observables:
        rows = []
        for o in exp.observables:
            for t in exp.targets:
                e = tracker.expectation(t, o.values)
                ref = exact_expectation(model, o.values, t) if exp.oracle else None
                rows.append([o.name, labels[t], e, ref, None if ref is None else abs(e - ref)])
        write_csv(out / "ergodic.csv",
                  ["observable_name", "lambda_label", "estimate", "oracle_value", "abs_error"], rows)
    return EXIT_OK


def cmd_oracle(exp: Experiment, out: Path, args) -> int:
    model, rho = exp.model, exp.rho
    f = free_energies(model)
    ts = optimal_theta(model, rho)
    labels = model.grid.labels
    write_csv(out / "oracle_free_energy.csv",
              ["grid_index", "lambda_label", "free_energy", "theta_star"],
              [[j, labels[j], f[j], ts[j]] for j in range(model.n_lambda)])
    rows = []
    for o in exp.observables:
        for t in exp.targets:
            rows.append([o.name, labels[t], exact_expectation(model, o.values, t),
                         optimal_zeta(model, rho, t, o.values)])
    write_csv(out / "oracle_expectations.csv",
              ["observable_name", "lambda_label", "expectation", "zeta_star"], rows)
    model.to_csv(out / "energies.csv")
    return EXIT_OK


def cmd_diagnose(exp: Experiment, out: Path, args) -> int:
    model, rho, box = exp.model, exp.rho, exp.box
    k = exp.cfg.get_int("diagnose.samples")
    rng = np.random.default_rng(exp.cfg.get_int("diagnose.seed"))
    sign = -1.0 if args.debug_corrupt_gradient else 1.0

    obs = exp.observables[0] if exp.observables else Observable.coordinate(model.n_states)
    target = exp.targets[0]
    bound = obs.bound
    m = diag.exact_m(model, box)
    delta = diag.safe_delta(m, bound) if bound > 0 else 0.0  # C = 0: zeta is pinned
    t_star = optimal_theta(model, rho)
    z_star = optimal_zeta(model, rho, target, obs.values)

    thetas = [t_star] + [box.sample(rng) for _ in range(max(k - 1, 0))]
    zetas = [z_star] + [float(rng.uniform(-bound, bound)) for _ in range(max(k - 1, 0))]
    rows = []
    failed = []
    for i, (th, z) in enumerate(zip(thetas, zetas)):
        lv = diag.lyapunov_V(model, th, rho)
        g = diag.gbar_of(model, th, rho)
        ip = float(sign * lv.grad @ g)
        var = diag.gbar_variance(model, th, rho)
        resid = abs(ip + 2.0 * var)
        fd = diag.central_difference(lambda t: diag.lyapunov_V(model, t, rho).v, th)
        # relative error, absolute near a stationary point where the gradient vanishes
        scale = float(np.max(np.abs(lv.grad)))
        gerr = float(np.max(np.abs(sign * lv.grad - fd))) / (scale if scale > GRAD_TOL else 1.0)
        lvd = diag.lyapunov_V_delta(model, th, z, rho, obs.values, target, box, delta)
        gext = diag.gbar_extended(model, th, z, rho, obs.values, target)
        ext_ip = float((lvd.grad * np.append(np.full(model.n_lambda, sign), 1.0)) @ gext)
        ok = (resid <= IDENTITY_TOL and ip <= SIGN_TOL and ext_ip <= EXT_SIGN_TOL
              and gerr <= GRAD_TOL)
        if i == 0:
            ok = ok and lvd.v <= 1e-14
        if not ok:
            failed.append(i)
        rows.append([i, lv.v, ip, var, resid, gerr, lvd.v, ext_ip, ok])
    write_csv(out / "diagnostics.csv",
              ["sample", "V", "inner_product", "variance", "identity_residual",
               "grad_rel_error", "V_delta", "ext_inner_product", "pass"], rows)

    n_j = exp.cfg.get_int("diagnose.jensen_instances")
    jrows = []
    for i in range(n_j):
        n = int(rng.integers(2, 9))
        x = rng.normal(size=n) * 3.0
        p = rng.dirichlet(np.ones(n))
        lhs, rhs, r = diag.jensen_difference_check(x, p)
        jrows.append([i, n, lhs, rhs, r, r <= JENSEN_TOL])
    write_csv(out / "jensen.csv", ["instance", "n", "lhs", "rhs", "residual", "pass"], jrows)
    j_fail = sum(not r[-1] for r in jrows)

    summary = [["m", m, None, True], ["delta", delta, None, True],
               ["samples_failed", len(failed), 0, not failed],
               ["jensen_failed", j_fail, 0, j_fail == 0]]
    small = (model.n_states <= diag.MAX_STATES and model.n_lambda <= diag.MAX_GRID
             and exp.kernel.has_matrix)
    if small:
        worst = 0.0
        for n_inner in (1, 2, 3):
            for th in thetas[: min(len(thetas), 50)]:
                bf = diag.bruteforce_mean_h(model, exp.kernel, th, rho, n_inner)
                worst = max(worst, float(np.max(np.abs(bf - diag.gbar_of(model, th, rho)))))
        summary.append(["enumerated_mean_error", worst, ENUM_TOL, worst <= ENUM_TOL])
    write_csv(out / "summary.csv", ["check", "value", "threshold", "pass"], summary)
    ok = all(r[-1] for r in summary)
    if not args.quiet:
        for r in summary:
            print(f"{'PASS' if r[-1] else 'FAIL'} {r[0]} = {r[1]}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_ode(exp: Experiment, out: Path, args) -> int:
    cfg = exp.cfg
    model, rho = exp.model, exp.rho
    if not exp.oracle:
        cfg.fail("oracle", "the ODE needs the exact mean field; set oracle = on")
    raw = cfg.get_str("ode.theta0")
    if raw == "awh":
        theta0 = exp.theta0()
    elif raw == "random":
        theta0 = exp.box.sample(np.random.default_rng(exp.seed))
    else:
        theta0 = np.array(cfg.get_vector("ode.theta0"))
    try:
        oc = ode.OdeConfig(theta0, exp.box, cfg.get_float("ode.h_step"), cfg.get_float("ode.t_end"))
    except ValueError as exc:
        cfg.fail("ode.theta0", str(exc))
    tr = ode.integrate(model, rho, oc)
    every = max(cfg.get_int("ode.record_every"), 1)
    idx = np.unique(np.append(np.arange(0, len(tr.t), every), len(tr.t) - 1))
    clamped = np.append(0, tr.clamped_coords())
    write_csv(out / "ode_trajectory.csv", theta_header(model.n_lambda, "t"),
              ([tr.t[i], *tr.thetas[i].tolist(), tr.V[i], int(clamped[i])] for i in idx))
    report = ode.check_monotone_descent(tr)

    traj = awh.run(exp.awh_config())
    ov = ode.sa_vs_ode_overlay(model, rho, traj, tr)
    write_csv(out / "overlay.csv", ["iter", "t", "V_sa", "V_ode"],
              ([n, ov.t[n], ov.V_sa[n], ov.V_ode[n]] for n in range(len(ov.t))))
    v_end = float(tr.V[-1])
    threshold = cfg.get_float("ode.v_threshold")
    checks = [["descent_violations", len(report.violations), 0, report.passed],
              ["first_violation", report.first_violation, None, report.passed],
              ["V_end", v_end, threshold, v_end <= threshold]]
    write_csv(out / "ode_summary.csv", ["check", "value", "threshold", "pass"], checks)
    if not args.quiet:
        for r in checks:
            print(f"{'PASS' if r[-1] else 'FAIL'} {r[0]} = {r[1]}")
    return EXIT_OK if all(r[-1] for r in checks) else EXIT_CHECK


COMMANDS = {"run": cmd_run, "oracle": cmd_oracle, "diagnose": cmd_diagnose, "ode": cmd_ode}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _output_dir(args, cfg: cfgmod.Config) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.get_str("output.dir"):
        p = Path(cfg.get_str("output.dir"))
        return p if p.is_absolute() else Path(cfg.source).parent / p
    root = os.environ.get("AWH_LAB_OUT", "awh_lab_out")
    return Path(root) / Path(cfg.source).stem


def _execute(args, seed: int | None, out: Path) -> int:
    cfg = cfgmod.load(args.config)
    if seed is not None:
        cfg.set("awh.seed", str(seed))
        cfg.set("diagnose.seed", str(seed))
    if getattr(args, "samples", None) is not None:
        cfg.set("diagnose.samples", str(args.samples))
    exp = build_experiment(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(cfg.dumps())
    if not args.quiet:
        print(f"# {args.command}: {cfg.source} -> {out}")
        sys.stdout.write(cfg.dumps())
    return COMMANDS[args.command](exp, out, args)


def _guarded(args, seed, out) -> int:
    try:
        return _execute(args, seed, out)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="awh-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output directory (default: output.dir, then $AWH_LAB_OUT/<stem>)")
        p.add_argument("--seed", type=int, help="override awh.seed")
        p.add_argument("--replicas", type=int, default=1, help="independent runs with seed + r")
        p.add_argument("--quiet", action="store_true")
        if name == "diagnose":
            p.add_argument("--samples", type=int, help="number of sampled theta")
            p.add_argument("--debug-corrupt-gradient", action="store_true",
                           help="negate the analytic gradient (negative control)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = cfgmod.load(args.config)
        out = _output_dir(args, cfg)
        base_seed = args.seed if args.seed is not None else cfg.get_int("awh.seed")
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.replicas <= 1:
        return _guarded(args, args.seed, out)
    jobs = [(args, base_seed + r, out / f"replica_{r:03d}") for r in range(args.replicas)]
    with ProcessPoolExecutor(max_workers=min(args.replicas, os.cpu_count() or 1)) as pool:
        codes = list(pool.map(_guarded, *zip(*jobs)))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
