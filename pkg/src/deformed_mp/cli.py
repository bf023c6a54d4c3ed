"""Command-line front end.

Every option may also come from a ``key = value`` config file (``--config``);
flags on the command line win. Output files start with a comment header
that echoes the effective configuration, so ``--config <output file>``
reruns the experiment.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 failed
acceptance criteria.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, acceptance, empirical, ensemble, extremal, freeconv
from .errors import (
    DeformedMPError,
    DomainError,
    EvaluationError,
    NumericalError,
    ParameterError,
    RegimeError,
    RootError,
    RunError,
    SolverError,
)
from .measure import measure_from_spec, parse_kv_lines

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4
HEADER_TAG = "# deformed_mp"
CONFIG_TAG = "# config:"

log = logging.getLogger("deformed_mp")


class ConfigError(DeformedMPError):
    pass


def _key(name: str) -> str:
    return name.strip().replace("-", "_")


def read_config(path: str) -> dict:
    """Parse a config file, or the config echo embedded in an output file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path!r} not found")
    lines = p.read_text(encoding="utf-8").splitlines()
    if lines and lines[0].startswith(HEADER_TAG):
        echo = []
        in_block = False
        for line in lines:
            if not line.startswith("#"):
                break
            if line.startswith(CONFIG_TAG):
                in_block = True
                continue
            if in_block:
                echo.append(line[1:])
        lines = echo
    try:
        return {_key(k): v for k, v in parse_kv_lines(lines).items()}
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


# option name -> (type, default); None default means "required or optional per command"
OPTIONS = {
    "measure": (str, None),
    "d": (float, None),
    "M": (int, None),
    "N": (int, None),
    "trials": (int, 1),
    "seed": (int, None),
    "entry_dist": (str, "gaussian"),
    "sigma_source": (str, "measure"),
    "freeze_sigma": (lambda s: str(s).lower() in ("1", "true", "yes", "on"), False),
    "top_k": (int, 5),
    "hist": (str, None),
    "out": (str, None),
    "threads": (int, None),
    "emin": (float, None),
    "emax": (float, None),
    "points": (int, 200),
    "phi": (str, "auto"),
    "n0": (int, 11),
    "c": (float, 0.95),
    "sigma_file": (str, None),
    "mode": (str, None),
    "input": (str, None),
    "gamma": (str, "1"),
    "ecdf": (str, None),
    "ks_limit": (float, 0.20),
    "ks_coupling": (float, 0.10),
    "var_tol": (float, 0.30),
    "suite": (str, "all"),
    "scale": (str, "desk"),
}

COMMAND_KEYS = {
    "edge": ("measure", "d"),
    "density": ("measure", "d", "emin", "emax", "points", "out"),
    "omega": ("measure", "M", "N", "d", "seed", "phi", "n0", "c", "sigma_file"),
    "simulate": ("measure", "M", "N", "d", "trials", "seed", "entry_dist", "sigma_source", "freeze_sigma",
                 "top_k", "hist", "out", "threads"),
    "extremal": ("mode", "input", "measure", "d", "M", "gamma", "ecdf", "ks_limit", "ks_coupling", "var_tol"),
    "verify": ("suite", "scale", "threads"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deformed-mp", description="Edge statistics of deformed Marchenko-Pastur laws.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "edge": "right edge, threshold and regime of the limiting law",
        "density": "density of the limiting law on an energy grid (CSV E,rho)",
        "omega": "good-configuration check for one population spectrum",
        "simulate": "Monte Carlo of the largest sample eigenvalues (CSV)",
        "extremal": "compare a simulate CSV with the Weibull or Gaussian limit",
        "verify": "run the acceptance criteria",
    }
    for name, keys in COMMAND_KEYS.items():
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="key = value file (or an output file with a config echo)")
        sp.add_argument("-v", "--verbose", action="store_true")
        for k in keys:
            flag = "--in" if k == "input" else "--" + k.replace("_", "-")
            if k == "freeze_sigma":
                sp.add_argument(flag, dest=k, action="store_const", const="true", default=None)
            else:
                sp.add_argument(flag, dest=k, default=None)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) and convert types."""
    keys = COMMAND_KEYS[args.command]
    raw = {}
    if args.config:
        raw.update(read_config(args.config))
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    unknown = set(raw) - set(keys)
    if unknown:
        raise ConfigError(f"unknown keys for {args.command}: {sorted(unknown)}")
    cfg = {}
    for k in keys:
        typ, default = OPTIONS[k]
        if k in raw:
            try:
                cfg[k] = typ(raw[k])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {raw[k]!r}") from exc
        else:
            cfg[k] = default
    if "measure" in cfg and cfg["measure"] is None and args.command != "extremal":
        cfg["measure"] = "f1"
    if args.config:
        src = Path(args.config).resolve()
        for k in ("out", "ecdf"):
            if cfg.get(k) and Path(cfg[k]).resolve() == src:
                raise ConfigError("refusing to overwrite the config file with output")
    return cfg


def _dims(cfg: dict, need_seed: bool = False):
    M, N, d = cfg.get("M"), cfg.get("N"), cfg.get("d")
    if M is None:
        raise ConfigError("M is required")
    if (N is None) == (d is None):
        raise ConfigError("give exactly one of N or d together with M")
    if N is None:
        N = int(round(d * M))
    if need_seed and cfg.get("seed") is None:
        raise ConfigError("seed is required")
    return M, N


# keys that do not influence results; leaving them out keeps reruns byte-identical
NOT_ECHOED = ("out", "threads", "ecdf")


def _measure(cfg: dict, echo: dict = None):
    return measure_from_spec(cfg.get("measure") or (echo or {}).get("measure") or "f1")


def header(command: str, cfg: dict) -> str:
    lines = [
        f"{HEADER_TAG} {__version__} {command}",
        f"# generated: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
        CONFIG_TAG,
    ]
    lines += [f"# {k} = {v}" for k, v in cfg.items() if v is not None and k not in NOT_ECHOED]
    return "\n".join(lines) + "\n"


def write_output(path: str, command: str, cfg: dict, body: str):
    Path(path).write_text(header(command, cfg) + body, encoding="utf-8")


# -- commands ----------------------------------------------------------------------


def cmd_edge(cfg, out):
    if cfg["d"] is None:
        raise ConfigError("d is required")
    m = _measure(cfg)
    out.write(freeconv.edge(m, cfg["d"]).record() + "\n")
    return EXIT_OK


def cmd_density(cfg, out):
    if cfg["d"] is None:
        raise ConfigError("d is required")
    m = _measure(cfg)
    e = freeconv.edge(m, cfg["d"])
    emin = 0.0 if cfg["emin"] is None else cfg["emin"]
    emax = 1.05 * e.L_plus if cfg["emax"] is None else cfg["emax"]
    if not emax > emin or cfg["points"] < 2:
        raise ConfigError("need emin < emax and at least two points")
    E = np.linspace(emin, emax, cfg["points"])
    E = E[E != 0.0] if cfg["d"] > 1 else E
    rho = freeconv.density_curve(m, cfg["d"], E)
    body = "E,rho\n" + "".join(f"{x!r},{y!r}\n" for x, y in zip(E.tolist(), rho.tolist()))
    if cfg["out"]:
        write_output(cfg["out"], "density", cfg, body)
    else:
        out.write(body)
    return EXIT_OK


def cmd_omega(cfg, out):
    m = _measure(cfg)
    phi = None if cfg["phi"] == "auto" else float(cfg["phi"])
    ocfg = empirical.OmegaConfig(phi=phi, n0=cfg["n0"], c_threshold=cfg["c"])
    if cfg["sigma_file"]:
        sig = np.loadtxt(cfg["sigma_file"], dtype=float, comments="#", ndmin=1)
        cfg = dict(cfg, M=cfg["M"] or sig.size)
        M, N = _dims(cfg)
        if sig.size != M:
            raise ConfigError(f"sigma file has {sig.size} values but M = {M}")
    else:
        M, N = _dims(cfg, need_seed=True)
        sig = m.sample(M, ensemble.stream(cfg["seed"], "sigma"))
    rep = empirical.omega_check(empirical.PopulationSpectrum(sig, N), ocfg, m)
    out.write(f"M={M} N={N} phi={ocfg.resolve_phi(m.beta)!r} " + rep.record() + "\n")
    return EXIT_OK


def cmd_simulate(cfg, out):
    m = _measure(cfg)
    M, N = _dims(cfg, need_seed=True)
    bins = None
    if cfg["hist"]:
        h = parse_kv_lines(cfg["hist"].split(",")) if "=" in cfg["hist"] else {"bins": cfg["hist"]}
        try:
            bins = int(h["bins"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad --hist value {cfg['hist']!r}; use bins=<count>") from exc
    spec = ensemble.SampleSpec(M, N, cfg["entry_dist"], cfg["sigma_source"], cfg["seed"], cfg["freeze_sigma"])
    col = ensemble.Collector(top_k=min(cfg["top_k"], M), hist_bins=bins)
    tab = ensemble.run_monte_carlo(spec, cfg["trials"], col, m, workers=cfg["threads"])
    for t, msg in tab.failures:
        log.warning("trial %d failed: %s", t, msg)
    if cfg["out"]:
        write_output(cfg["out"], "simulate", cfg, tab.to_csv())
        if bins:
            hist_path = Path(cfg["out"]).with_name("hist.csv")
            write_output(str(hist_path), "simulate", cfg, tab.hist_csv())
    else:
        out.write(tab.to_csv())
    return EXIT_OK


def read_trials(path: str):
    """Columns of a simulate CSV (comment lines skipped) plus its config echo."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file {path!r} not found")
    echo = read_config(path) if p.read_text(encoding="utf-8").startswith(HEADER_TAG) else {}
    with p.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if len(rows) < 2:
        raise ConfigError(f"{path!r} has no data rows")
    try:
        cols = np.array(rows[1:], dtype=float).T
    except ValueError as exc:
        raise ConfigError(f"{path!r} is not a numeric CSV: {exc}") from exc
    return dict(zip(rows[0], cols)), echo


def _gammas(text: str):
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in text.split(",")]


def cmd_extremal(cfg, out):
    if cfg["mode"] not in ("weibull", "gaussian"):
        raise ConfigError("mode must be weibull or gaussian")
    if not cfg["input"]:
        raise ConfigError("--in is required")
    cols, echo = read_trials(cfg["input"])
    m = _measure(cfg, echo)
    M = cfg["M"] or (int(echo["M"]) if "M" in echo else None)
    d = cfg["d"]
    if d is None and "d" in echo:
        d = float(echo["d"])
    if d is None and "N" in echo and M:
        d = int(echo["N"]) / M
    if M is None or d is None:
        raise ConfigError("M and d are required (flags or the input's config echo)")
    if cfg["mode"] == "weibull":
        gammas = _gammas(cfg["gamma"])
        lam = {g: cols[f"lambda{g}"] for g in gammas if f"lambda{g}" in cols}
        sig = {g: cols[f"sigma{g}"] for g in gammas if f"sigma{g}" in cols}
        if 1 not in lam:
            raise ConfigError("the input has no lambda1 column")
        rep = extremal.weibull_report(lam, sig, m, d, M, ks_limit=cfg["ks_limit"], ks_coupling=cfg["ks_coupling"])
        p = extremal.weibull_params(m, d, M)
        e = freeconv.edge(m, d)
        x, Femp, Fref = extremal.ecdf_table(extremal.rescale_supercritical(lam[1], e.L_plus, M, m.beta), p.cdf)
    else:
        rep = extremal.gaussian_report(cols["lambda1"], m, d, M, cols.get("L_plus_pred"), cfg["ks_limit"],
                                       cfg["var_tol"])
        g = extremal.gaussian_reference(m, d)
        x, Femp, Fref = extremal.ecdf_table(math.sqrt(M) * (cols["lambda1"] - g.L_plus), g.cdf)
    out.write(rep.record() + "\n")
    ecdf = cfg["ecdf"] or str(Path(cfg["input"]).with_name("ecdf.csv"))
    body = "s,F_emp,F_ref\n" + "".join(f"{a!r},{b!r},{c!r}\n" for a, b, c in zip(x.tolist(), Femp.tolist(), Fref.tolist()))
    write_output(ecdf, "extremal", cfg, body)
    return EXIT_OK


def cmd_verify(cfg, out):
    if cfg["suite"] not in acceptance.SUITE_MEMBERS:
        raise ConfigError(f"suite must be one of {acceptance.SUITES}")
    if cfg["scale"] not in acceptance.SCALES:
        raise ConfigError("scale must be desk or smoke")
    out.write(f"# deformed_mp {__version__} verify suite={cfg['suite']} scale={cfg['scale']}\n")
    res = acceptance.verify(cfg["suite"], cfg["scale"], cfg["threads"], emit=lambda s: (out.write(s + "\n"), out.flush()))
    failed = [r.number for r in res if not r.passed]
    out.write(f"summary: {len(res) - len(failed)}/{len(res)} passed" + (f"; failed {failed}" if failed else "") + "\n")
    return EXIT_ACCEPT if failed else EXIT_OK


COMMANDS = {
    "edge": cmd_edge,
    "density": cmd_density,
    "omega": cmd_omega,
    "simulate": cmd_simulate,
    "extremal": cmd_extremal,
    "verify": cmd_verify,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, ParameterError, DomainError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, NumericalError, EvaluationError, RootError, RunError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
