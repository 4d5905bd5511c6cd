"""Batch command line: ``ergodic-w2 <subcommand> [options]``.

Outputs go to ``--out``, else ``[output] dir`` from the config file, else
``$ERGODIC_W2_OUTPUT``, else ``./ergodic_w2_out``. One process at a time may
write to a given output directory (a lock file guards it).

Exit codes: 0 success, 1 assumption violation (or failed self-test), 2
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from ..errors import AssumptionViolation, ConfigError, ErgodicW2Error, InvalidParameter, UnknownModel
from ..measures import DiscreteMeasure, MollifierKernel, occupation_measure
from ..models import DEFAULT_BOX, PairSampler, build_model, check_confluence, check_lipschitz, hajek_constants
from ..simulate import IntegratorConfig, integrate, warm_start
from . import io
from .averaging import averaging_lemma_check
from .concentration import concentration_check, z_spec
from .config import load_config, validate
from .exponents import theoretical_exponents
from .rates import as_path_study, geometric_grid, rate_experiment

OUTPUT_ENV = "ERGODIC_W2_OUTPUT"
DEFAULT_OUTPUT = "ergodic_w2_out"


def _floats(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _spec(text: str):
    """``name`` or ``name:value`` as used by --g, --u."""
    if ":" in text:
        name, value = text.split(":", 1)
        return name, float(value)
    try:
        return float(text)
    except ValueError:
        return text


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [model] [simulate] [mollifier] [rates] [output]")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--dt", type=float)
    common.add_argument("--model", dest="model_kind", help="ou | cubic | anisotropic_ou | bounded_sigma")
    common.add_argument("--theta", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--sigma0", type=float)
    common.add_argument("--amplitude", type=float)
    common.add_argument("--d", type=int)
    common.add_argument("--A", help="drift matrix as JSON, e.g. [[1,0],[0,2]]")
    common.add_argument("--box", type=_floats, help="lo,hi")
    common.add_argument("--burn-in", type=float)
    common.add_argument("--plot", action="store_true", help="write an SVG plot when matplotlib is available")

    p = argparse.ArgumentParser(prog="ergodic-w2", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[common], help="confluence, Lipschitz and Hajek certificates")
    s.add_argument("--n-pairs", type=int, default=10_000)

    s = sub.add_parser("simulate", parents=[common], help="one Euler path and its occupation measure")
    s.add_argument("--horizon", type=float)
    s.add_argument("--x0", type=_floats)
    s.add_argument("--record-stride", type=int)
    s.add_argument("--replication", type=int, default=0)

    s = sub.add_parser("rates", parents=[common], help="W2 rate experiment and log-log fit")
    s.add_argument("--t", type=_floats)
    s.add_argument("--reps", type=int)
    s.add_argument("--w2", choices=("auto", "quantile_1d", "exact_lp", "entropic"))
    s.add_argument("--n-ref", type=int)
    s.add_argument("--record-stride", type=int)

    s = sub.add_parser("aspath", parents=[common], help="single-path envelope study")
    s.add_argument("--horizon", type=float)
    s.add_argument("--checkpoints", type=_floats)
    s.add_argument("--n-checkpoints", type=int, default=9)
    s.add_argument("--settle-t", type=float, default=1e2)
    s.add_argument("--n-ref", type=int)
    s.add_argument("--replication", type=int, default=0)

    s = sub.add_parser("concentration", parents=[common], help="tails of stochastic integrals")
    s.add_argument("--kind", choices=("bounded", "polynomial"), default="bounded")
    s.add_argument("--z", choices=("constant", "sin_of_state", "state_linear"), default="constant")
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--t", type=float, default=10.0)
    s.add_argument("--ell", type=_floats, default=[0.5, 1.0, 2.0, 3.0, 4.0])
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--a", type=float, default=2.0)

    s = sub.add_parser("averaging", parents=[common], help="Cesaro and Kronecker averages")
    s.add_argument("--kind", choices=("cesaro", "kronecker", "stochastic_kronecker"), default="kronecker")
    s.add_argument("--g", type=_spec, default="constant", help="constant | power:rho")
    s.add_argument("--u", type=_spec, default=1.0, help="c | power:p")
    s.add_argument("--T", type=float, default=1e4)
    s.add_argument("--lower", type=float, default=0.0)
    s.add_argument("--reps", type=int, default=10_000)

    sub.add_parser("selftest", parents=[common], help="fast internal consistency checks")
    return p


# --------------------------------------------------------------------------
# settings


def _settings(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    cfg = {k: dict(v) for k, v in cfg.items()}
    model = cfg.setdefault("model", {})
    if args.model_kind is not None:
        model["kind"] = args.model_kind
    for key in ("theta", "sigma", "sigma0", "amplitude", "d"):
        value = getattr(args, key, None)
        if value is not None:
            model[key] = value
    if args.A is not None:
        try:
            model["A"] = json.loads(args.A)
        except json.JSONDecodeError:
            raise ConfigError("not valid JSON", key="model.A") from None
    if args.box is not None:
        model["box"] = list(args.box)
    simulate = cfg.setdefault("simulate", {})
    for key, attr in (("dt", "dt"), ("seed", "seed"), ("burn_in", "burn_in"), ("horizon", "horizon"),
                      ("record_stride", "record_stride")):
        value = getattr(args, attr, None)
        if value is not None:
            simulate[key] = value
    rates = cfg.setdefault("rates", {})
    for key, attr in (("t", "t"), ("reps", "reps"), ("w2", "w2"), ("n_ref", "n_ref")):
        value = getattr(args, attr, None)
        if value is not None and args.command == "rates":
            rates[key] = value
    cfg.setdefault("mollifier", {})
    cfg.setdefault("output", {})
    if args.plot:
        cfg["output"]["plot"] = True
    return validate(cfg)


def _model(cfg: dict):
    spec = dict(cfg["model"])
    kind = spec.pop("kind", "ou")
    spec.pop("box", None)
    if "A" in spec:
        spec["A"] = np.asarray(spec["A"], dtype=float)
    if kind == "anisotropic_ou" and "sigma0" in spec:
        spec["sigma0"] = np.asarray(spec["sigma0"], dtype=float)
    try:
        return build_model(kind, **spec)
    except UnknownModel as exc:
        raise ConfigError(exc.args[0], key="model.kind") from None
    except InvalidParameter as exc:
        raise ConfigError(str(exc), key="model") from None


def _integrator(cfg: dict, **overrides) -> IntegratorConfig:
    sim = cfg["simulate"]
    kw = {"dt": sim.get("dt", 1e-2), "seed": sim.get("seed", 0), "record_stride": sim.get("record_stride", 1)}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return IntegratorConfig(**kw)
    except InvalidParameter as exc:
        raise ConfigError(str(exc), key="simulate") from None


def _box(cfg: dict):
    return tuple(float(v) for v in cfg["model"].get("box", DEFAULT_BOX))


def _output_dir(args, cfg: dict) -> Path:
    out = args.out or cfg["output"].get("dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# subcommands


def _certificates(model, box, n_pairs: int, seed: int) -> dict:
    sampler = PairSampler(box=box, seed=seed)
    conf = check_confluence(model, sampler, n_pairs)
    lip = check_lipschitz(model, sampler, n_pairs)
    report = {"model": model.to_dict(), "box": list(box), "confluence": conf.to_dict(), "lipschitz_hat": lip}
    if not conf.violation:
        axes = np.linspace(box[0], box[1], 2001 if model.d == 1 else max(int(round(40000 ** (1 / model.d))), 3))
        grid = np.stack([m.ravel() for m in np.meshgrid(*([axes] * model.d), indexing="ij")], axis=1)
        report["hajek"] = hajek_constants(model, grid).to_dict()
    return report, conf


def cmd_check(args, cfg, out: Path) -> int:
    model = _model(cfg)
    report, conf = _certificates(model, _box(cfg), args.n_pairs, cfg["simulate"].get("seed", 0))
    io.write_json(out / "report.json", report)
    sys.stdout.write(io.dumps(report["confluence"]))
    return 1 if conf.violation else 0


def cmd_simulate(args, cfg, out: Path) -> int:
    model = _model(cfg)
    config = _integrator(cfg)
    horizon = cfg["simulate"].get("horizon", 10.0)
    if args.x0 is not None:
        x0 = np.asarray(args.x0, dtype=float)
    else:
        x0 = warm_start(model, config, burn_in=cfg["simulate"].get("burn_in"), n=args.replication + 1)[-1]
    traj = integrate(model, x0, horizon, config, replication=args.replication)
    traj.to_csv(out / "trajectory.csv")
    nu = occupation_measure(traj)
    io.write_measure_csv(out / "measure.csv", nu)
    io.write_json(out / "report.json", {"model": model.to_dict(), "config": config.to_dict(), "horizon": horizon,
                                        "n_points": int(traj.times.size), "x0": x0.tolist()})
    return 0


def cmd_rates(args, cfg, out: Path) -> int:
    model = _model(cfg)
    rates = cfg["rates"]
    config = _integrator(cfg)
    t_grid = rates.get("t", [1e2, 3e2, 1e3, 3e3, 1e4])
    exp = rate_experiment(model, t_grid, replications=rates.get("reps", 64), w2_spec=rates.get("w2", "auto"),
                          config=config, burn_in=cfg["simulate"].get("burn_in"), n_ref=rates.get("n_ref"),
                          reg=rates.get("reg", 1e-2))
    exp.table.to_csv(out / "rates.csv")
    io.write_json(out / "fit.json", exp.fit.to_dict())
    report, _ = _certificates(model, _box(cfg), 10_000, config.seed)
    report.update({"rates": exp.to_dict(), "config": config.to_dict()})
    io.write_json(out / "report.json", report)
    if cfg["output"].get("plot"):
        io.plot_loglog(out / "rates.svg", exp.table.t, {"RMS W2": exp.table.rms,
                                                        "floor-corrected": exp.table.rms_corrected},
                       title=model.name)
    return 0


def cmd_aspath(args, cfg, out: Path) -> int:
    model = _model(cfg)
    config = _integrator(cfg)
    horizon = cfg["simulate"].get("horizon", 1e4)
    cps = args.checkpoints or geometric_grid(min(10.0, horizon / 2), horizon, args.n_checkpoints)
    unit = config.dt * config.record_stride
    cps = [round(c / unit) * unit for c in cps]
    table = as_path_study(model, horizon, cps, config, settle_t=args.settle_t, replication=args.replication,
                          burn_in=cfg["simulate"].get("burn_in"), n_ref=args.n_ref)
    table.to_csv(out / "aspath.csv")
    io.write_json(out / "report.json", {"model": model.to_dict(), "config": config.to_dict(),
                                        "envelope": table.to_dict()})
    if cfg["output"].get("plot"):
        io.plot_loglog(out / "aspath.svg", table.t, {"W2": table.statistic, "envelope ratio": table.ratio},
                       title=model.name)
    return 0


def cmd_concentration(args, cfg, out: Path) -> int:
    config = _integrator(cfg)
    model = _model(cfg) if args.z != "constant" else None
    z = z_spec(args.z, model=model, c=args.c)
    rep = concentration_check(args.kind, z, args.t, "sqrt", args.ell, args.reps, config, a=args.a,
                              burn_in=cfg["simulate"].get("burn_in"))
    rep.to_csv(out / "concentration.csv")
    io.write_json(out / "report.json", rep.to_dict())
    return 0 if rep.passes else 1


def cmd_averaging(args, cfg, out: Path) -> int:
    table = averaging_lemma_check(args.kind, args.g, args.u, T=args.T, lower=args.lower, replications=args.reps,
                                  seed=cfg["simulate"].get("seed", 0))
    table.to_csv(out / "averaging.csv")
    io.write_json(out / "report.json", table.to_dict())
    return 0


def cmd_selftest(args, cfg, out: Path) -> int:
    from ..transport import w2_1d_quantile, w2_exact_discrete

    checks = {}
    r = theoretical_exponents(1, 2)
    checks["exponents"] = bool(abs(r.l2_exponent - 1 / 14) < 1e-15 and abs(r.as_exponent - 1 / 36) < 1e-15
                               and abs(r.exp_l2_exponent - 1 / 8) < 1e-15 and abs(r.exp_l2_log_power - 3 / 8) < 1e-15)
    gen = np.random.default_rng(cfg["simulate"].get("seed", 0))
    worst = 0.0
    for _ in range(10):
        mu = DiscreteMeasure.from_samples(gen.normal(size=(32, 1)))
        nu = DiscreteMeasure.from_samples(gen.normal(size=(48, 1)) + 0.3)
        a, b = w2_1d_quantile(mu, nu).value, w2_exact_discrete(mu, nu).value
        worst = max(worst, abs(a - b) / max(a, 1e-300))
    checks["solver_agreement"] = bool(worst <= 1e-9)
    kernel = MollifierKernel(eps=0.5)
    pts = np.linspace(-0.5, 0.5, 20001)[:, None]
    checks["kernel_mass"] = bool(abs(kernel(pts).sum() * (pts[1, 0] - pts[0, 0]) - 1.0) < 1e-3)
    table = averaging_lemma_check("kronecker", "constant", ("power", -0.5), T=1e4, lower=1.0)
    checks["kronecker"] = bool(abs(table.final - 2 * (100 - 1) / 1e4) < 1e-6)
    report = {"checks": checks, "passed": all(checks.values())}
    io.write_json(out / "selftest.json", report)
    sys.stdout.write(io.dumps(report))
    return 0 if report["passed"] else 1


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "aspath": cmd_aspath,
    "concentration": cmd_concentration,
    "averaging": cmd_averaging,
    "selftest": cmd_selftest,
}


def run_cli(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _settings(args)
        out = _output_dir(args, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    lock = FileLock(str(out / ".ergodic_w2.lock"))
    try:
        with lock.acquire(timeout=0):
            return COMMANDS[args.command](args, cfg, out)
    except Timeout:
        sys.stderr.write(f"output directory {str(out)!r} is in use by another run\n")
        return 2
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except AssumptionViolation as exc:
        sys.stderr.write(f"assumption violated: {exc}\n")
        return 1
    except (InvalidParameter, ErgodicW2Error) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run_cli())
