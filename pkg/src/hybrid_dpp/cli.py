"""``hybrid-dpp`` command-line front end.

Subcommands ``weights``, ``calibrate``, ``oc``, ``optimize`` and ``eess``
read an INI configuration (see :mod:`hybrid_dpp.config`) and write
comma-separated tables preceded by ``#`` comment lines carrying the tool
version, seed, config hash and the effective configuration.

Exit codes: 0 success (an infeasible optimization included), 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys

from . import __version__
from .betacalc import DomainError, NumericError
from .borrowing import dynamic_weight, eess, eess_alternative, gate_open
from .config import ConfigError, RunConfig, load_config
from .engine import calibrate_tau, oc_sweep
from .optimizer import candidate_grid, min_sample_size

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

OC_COLUMNS = [
    "method",
    "delta_max",
    "n_ch_e",
    "p_c",
    "p_t",
    "tau",
    "reject_prob",
    "mean_pmd",
    "sd_pmd",
    "xi_eps",
    "eess",
    "mode",
    "n_sims",
    "mc_se",
]


def _p(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _e(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _dm(x: float) -> str:
    return "inf" if math.isinf(x) else _p(x)


def _header(command: str, cfg: RunConfig) -> list[str]:
    lines = [
        f"# hybrid-dpp {__version__}",
        f"# command: {command}",
        f"# seed: {cfg.simulation.seed}",
        f"# config_hash: {cfg.hash()}",
        "# effective config:",
    ]
    lines += [f"#   {ln}" if ln else "#" for ln in cfg.to_text().rstrip("\n").splitlines()]
    return lines


def _table(command: str, cfg: RunConfig, columns: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    buf.write("\n".join(_header(command, cfg)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- calibration records -------------------------------------------------------


def _record_text(cfg: RunConfig, taus: dict[str, float]) -> str:
    s = cfg.simulation
    lines = [
        "# hybrid-dpp calibration record",
        f"version = {__version__}",
        f"design_hash = {cfg.design_hash()}",
        f"config_hash = {cfg.hash()}",
        f"mode = {s.mode}",
        f"n_sims = {'exact' if s.mode == 'exact' else s.n_sims}",
        f"seed = {s.seed}",
        f"alpha = {s.alpha!r}",
    ]
    for v in cfg.borrowing:
        p_null = s.p_null if s.p_null is not None else cfg.hist_for(v).p_hat
        lines.append(f"p_null.{v.label} = {p_null!r}")
        lines.append(f"tau.{v.label} = {taus[v.label]!r}")
    return "\n".join(lines) + "\n"


def read_record(path: str) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read calibration record {path!r}: {e.strerror}") from None
    rec = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"calibration record {path!r} line {n}: expected key = value")
        k, v = line.split("=", 1)
        rec[k.strip()] = v.strip()
    return rec


def _taus(cfg: RunConfig, args) -> dict[str, float]:
    labels = [v.label for v in cfg.borrowing]
    if args.tau is not None:
        if not 0.0 < args.tau < 1.0:
            raise ConfigError(f"--tau must lie in (0, 1), got {args.tau}")
        return {lb: args.tau for lb in labels}
    if args.calibration:
        rec = read_record(args.calibration)
        if rec.get("design_hash") != cfg.design_hash():
            raise ConfigError(
                f"calibration record {args.calibration!r} was made for a different design "
                f"(design_hash {rec.get('design_hash')} != {cfg.design_hash()}); recalibrate"
            )
        out = {}
        for lb in labels:
            if f"tau.{lb}" not in rec:
                raise ConfigError(f"calibration record {args.calibration!r} has no tau for variant {lb!r}")
            out[lb] = float(rec[f"tau.{lb}"])
        return out
    if cfg.simulation.tau is not None:
        return {lb: cfg.simulation.tau for lb in labels}
    raise ConfigError(
        "no decision threshold: run `hybrid-dpp calibrate --config <file> --out <record>` "
        "and pass --calibration <record>, or give --tau / [simulation] tau"
    )


# -- commands ------------------------------------------------------------------


def cmd_weights(cfg: RunConfig, args) -> int:
    d, w = cfg.design, cfg.weights
    ys = list(w.y_c) if w.y_c else [int(math.floor(p * d.n_c + 0.5)) for p in w.p_hat_c]
    priors = list(w.hyperpriors) or [d.prior_c]
    rows = []
    for v in cfg.borrowing:
        spec = cfg.design_for(v)
        for prior in priors:
            for y in ys:
                w_d = dynamic_weight(y, d.n_c, spec.hist, prior, spec.policy)
                is_open = gate_open(y / d.n_c, spec.hist.p_hat, v.delta_max)
                w_all = spec.policy.global_a * w_d if is_open else 0.0
                rows.append(
                    [
                        v.label,
                        v.method.value,
                        f"{prior.alpha:g} {prior.beta:g}",
                        str(d.n_c),
                        str(y),
                        _p(y / d.n_c),
                        _p(w_d),
                        "1" if is_open else "0",
                        _p(w_all),
                    ]
                )
    cols = ["variant", "method", "hyperprior", "n_c", "y_c", "p_hat_c", "w_d", "gate", "w"]
    _emit(_table("weights", cfg, cols, rows), args.out)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    mode = cfg.mode()
    taus = {}
    for v in cfg.borrowing:
        spec = cfg.design_for(v)
        taus[v.label] = calibrate_tau(spec, cfg.simulation.p_null, mode)
    text = _record_text(cfg, taus)
    if args.out:
        _emit(text, args.out)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oc(cfg: RunConfig, args) -> int:
    taus = _taus(cfg, args)
    scenarios = cfg.scenario_list()
    mode = cfg.mode()
    rows = []
    for v in cfg.borrowing:
        spec = cfg.design_for(v)
        results = oc_sweep(spec, scenarios, taus[v.label], mode, cfg.simulation.eps) if scenarios else []
        for r in results:
            rows.append(
                [
                    v.method.value,
                    _dm(v.delta_max),
                    str(spec.hist.n_ch_e),
                    _p(r.p_c),
                    _p(r.p_t),
                    _p(r.tau),
                    _p(r.reject_prob),
                    _p(r.mean_pmd),
                    _p(r.sd_pmd),
                    _p(r.xi_eps),
                    _e(r.eess),
                    r.mode,
                    str(r.n_sims),
                    _p(r.mc_se),
                ]
            )
    _emit(_table("oc", cfg, OC_COLUMNS, rows), args.out)
    return EXIT_OK


def cmd_eess(cfg: RunConfig, args) -> int:
    d = cfg.design
    rows = []
    for v in cfg.borrowing:
        spec = cfg.design_for(v)
        for p_c in cfg.scenarios.p_c:
            rows.append(
                [
                    v.method.value,
                    _dm(v.delta_max),
                    str(d.n_c),
                    str(spec.hist.n_ch_e),
                    _p(p_c),
                    _e(eess(d.n_c, p_c, spec.hist, d.prior_c, spec.policy)),
                    _e(eess_alternative(d.n_c, p_c, spec.hist, d.prior_c, spec.policy)),
                ]
            )
    cols = ["method", "delta_max", "n_c", "n_ch_e", "p_c", "eess", "eess_alt"]
    _emit(_table("eess", cfg, cols, rows), args.out)
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args) -> int:
    d, o = cfg.design, cfg.optimize
    cons = cfg.constraints()
    grid = candidate_grid(range(o.n_c_min, o.n_c_max + 1), o.ratio, o.multipliers)
    threads = cfg.simulation.threads
    rows, report = [], []
    for v in cfg.borrowing:
        res = min_sample_size(
            grid, cons, d.hist(), d.prior_c, d.prior_t, v.template(), o.center, cfg.mode(), threads
        )
        s = res.selected
        desc = (
            f"variant={v.label} method={v.method.value} n_t={s.n_t} n_c={s.n_c} n_ch_e={s.n_ch_e} "
            f"tau={_p(s.tau)} power={_p(s.power)}"
        )
        if res.feasible:
            report.append(f"selected: {desc}")
        else:
            report.append(f"INFEASIBLE: no candidate meets the constraints; best power: {desc}")
            report += [f"  reason: {r}" for r in s.reasons]
        for c in res.candidates:
            for p_c, (null, alt) in c.oc_at.items():
                rows.append(
                    [
                        v.label,
                        v.method.value,
                        _dm(v.delta_max),
                        str(c.n_t),
                        str(c.n_c),
                        str(c.n_ch_e),
                        _p(c.tau),
                        _p(p_c),
                        _p(alt.p_t),
                        _p(null.reject_prob),
                        _p(alt.reject_prob),
                        _p(null.mean_pmd),
                        _p(null.xi_eps),
                        _e(null.eess),
                        "1" if c.feasible else "0",
                        "1" if c is s and res.feasible else "0",
                    ]
                )
    cols = [
        "variant",
        "method",
        "delta_max",
        "n_t",
        "n_c",
        "n_ch_e",
        "tau",
        "p_c",
        "p_t",
        "type1",
        "power",
        "mean_pmd",
        "xi_eps",
        "eess",
        "feasible",
        "selected",
    ]
    sys.stdout.write("\n".join(report) + "\n")
    _emit(_table("optimize", cfg, cols, rows), args.out)
    return EXIT_OK


COMMANDS = {
    "weights": (cmd_weights, "dynamic and overall borrowing weights per control count"),
    "calibrate": (cmd_calibrate, "calibrate the decision threshold and write a record"),
    "oc": (cmd_oc, "operating characteristics for each scenario"),
    "optimize": (cmd_optimize, "minimal sample size search"),
    "eess": (cmd_eess, "expected effective historical sample size"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI configuration file")
    common.add_argument("--seed", type=int, help="override [simulation] seed (unsigned 64-bit)")
    common.add_argument("--mode", choices=["exact", "mc"], help="override [simulation] mode")
    common.add_argument("--sims", type=int, help="override [simulation] n_sims")
    common.add_argument("--threads", type=int, help="worker threads, 0 = auto")
    common.add_argument("--out", help="write the table (or record) to this path")

    parser = argparse.ArgumentParser(prog="hybrid-dpp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"hybrid-dpp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "oc":
            p.add_argument("--tau", type=float, help="decision threshold for every variant")
            p.add_argument("--calibration", help="calibration record written by `calibrate`")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, mode=args.mode, n_sims=args.sims, threads=args.threads
        )
        return func(cfg, args)
    except (ConfigError, DomainError) as e:
        print(f"hybrid-dpp: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"hybrid-dpp: numerical failure: {e}", file=sys.stderr)
        for k, v in e.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
