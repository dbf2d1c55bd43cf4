"""sos-layering command line: contours, exact sums, expansion, weights,
layering points and Monte Carlo runs."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .contours import ContourError, enumerate_contours, parse_contour, serialize
from .io import (ConfigError, OutputError, RunManifest, csv_text, load_config_file, parse_config,
                 to_json, write_text)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UNRESOLVED = 3
EXIT_IO = 4

THREADS_ENV = "SOS_LAYERING_THREADS"


class Unresolved(Exception):
    """Carries the diagnostic output of a run whose numbers could not be resolved."""

    def __init__(self, text, files):
        super().__init__("unresolved")
        self.text = text
        self.files = files


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ConfigError(f"sizes must be positive, got {text!r}")
    return w, h


def _point(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected X,Y, got {text!r}") from None
    return x, y


def _u_grid(text: str) -> np.ndarray:
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise ConfigError(f"expected lo:hi:steps, got {text!r}") from None
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    return np.linspace(lo, hi, steps)


# --- commands ----------------------------------------------------------------
# each returns (stdout text, {file name: text})

def cmd_contours_enumerate(p, g):
    anchor = _point(p["anchor"]) if p["anchor"] else None
    cs = enumerate_contours(_size(p["window"]), p["max_len"], anchor)
    lines = [serialize(c) for c in cs] + [f"count {len(cs)}"]
    text = "\n".join(lines) + "\n"
    return text, {"contours.txt": text}


def cmd_exact_z(p, g):
    from .exact import ModelParams, restricted_z, wall_partition
    params = ModelParams(p["beta"], p["u"], p["level"])
    dom = p["domain"]
    if dom[:1] in "+-":
        res = restricted_z(parse_contour(dom), p["level"], params, p["hmax"], barred=p["barred"])
    else:
        if p["barred"]:
            raise ConfigError("--barred needs a contour domain")
        res = wall_partition(_size(dom), params, p["hmax"])
    text = csv_text(["log_value", "tail_bound"], [[res.log_value, res.tail_bound]], g["digits"])
    return text, {"z.csv": text}


def cmd_expansion_free_energy(p, g):
    from .weights import truncated_free_energy
    fe = truncated_free_energy(p["level"], p["beta"], p["u"], p["lmax"], p["truncated"])
    cols = ["beta", "u", "level", "lmax", "value", "trunc_error"]
    text = csv_text(cols, [[p["beta"], p["u"], p["level"], p["lmax"], fe.value, fe.trunc_error]], g["digits"])
    return text, {"free_energy.csv": text}


def cmd_weights_scan(p, g):
    from .contours import contour_shapes
    from .weights import stability_cap, weight_poly
    rows = []
    us = _u_grid(p["u_grid"])
    for s in contour_shapes(p["max_len"]):
        for c in (s, s.flipped()):
            lw = weight_poly(c, p["level"], p["beta"]).log_weight(us)
            cap = stability_cap(c, p["beta"])
            for u, v in zip(us, lw):
                rows.append([serialize(c), float(u), float(v), bool(v <= cap)])
    text = csv_text(["contour_id", "u", "log_w", "stable"], rows, g["digits"])
    return text, {"weights.csv": text}


def cmd_layering_locate(p, g):
    from .layering import estimate_alphas, locate_u_star
    alphas = estimate_alphas(p["beta"], max(2, p["n"]))
    rep = locate_u_star(p["n"], p["beta"], p["lmax"], alphas=alphas)
    text = to_json(rep.to_dict(), g["digits"]) + "\n"
    if rep.status != "resolved":
        raise Unresolved(text, {"layering.json": text})
    return text, {"layering.json": text}


def cmd_layering_table(p, g):
    from .layering import layering_table
    rows = layering_table(p["beta"], p["n_max"], p["lmax"])
    text = csv_text(["n", "u_minus", "u_star", "u_plus", "ratio_to_asymptotic", "status"], rows, g["digits"])
    if any(r["status"] != "resolved" for r in rows):
        raise Unresolved(text, {"layering_table.csv": text})
    return text, {"layering_table.csv": text}


def cmd_mcmc_run(p, g):
    from .exact import ModelParams
    from .mcmc import load_checkpoint, run_chain, save_checkpoint
    if g["seed"] is None:
        raise ConfigError("--seed is required for mcmc")
    obs = [o.strip() for o in p["observables"].split(",") if o.strip()]
    bad = set(obs) - {"contact", "height", "center", "histogram", "percolation"}
    if bad:
        raise ConfigError(f"unknown observables: {sorted(bad)}")
    params = ModelParams(p["beta"], p["u"], p["level"])
    size = _size(p["size"])
    state = None
    if p["resume"]:
        try:
            state = load_checkpoint(p["resume"])
        except OSError as e:
            raise OutputError(f"cannot read checkpoint {p['resume']}: {e}") from e
        if state.params != params or state.field.shape != size or state.seed != g["seed"]:
            raise ConfigError("checkpoint does not match the requested run")
    res = run_chain(size, params, p["sweeps"], g["seed"], observables=[o for o in obs if o in ("contact", "height", "center")] or ["contact"],
                    burn_in=p["burn_in"], state=state,
                    percolation_every=p["percolation_every"] if "percolation" in obs else None)
    files = {}
    summary = []
    for name, s in res.series.items():
        files[f"{name}.csv"] = csv_text(["sweep", name], zip(s.sweeps.tolist(), s.samples.tolist()), g["digits"])
        summary.append([name, s.mean, s.stderr, s.stderr_batch, s.tau_int, len(s.samples)])
    if "histogram" in obs:
        files["histogram.csv"] = csv_text(["height", "count"], enumerate(res.histogram.tolist()), g["digits"])
    if "percolation" in obs:
        cols = ["level", "largest_fraction", "crossing", "crossing_lr", "crossing_tb",
                "off_level_mass", "off_level_largest", "max_off_level_diameter"]
        files["percolation.csv"] = csv_text(cols, res.percolation, g["digits"])
    text = csv_text(["observable", "mean", "stderr", "stderr_batch", "tau_int", "samples"], summary, g["digits"])
    files["summary.csv"] = text
    if p["checkpoint"]:
        try:
            save_checkpoint(res.state, p["checkpoint"])
        except OSError as e:
            raise OutputError(f"cannot write checkpoint {p['checkpoint']}: {e}") from e
    return text, files


COMMANDS = {
    "contours enumerate": cmd_contours_enumerate,
    "exact z": cmd_exact_z,
    "expansion free-energy": cmd_expansion_free_energy,
    "weights scan": cmd_weights_scan,
    "layering locate": cmd_layering_locate,
    "layering table": cmd_layering_table,
    "mcmc run": cmd_mcmc_run,
}


# --- argument parsing --------------------------------------------------------

def _add_globals(sp):
    sp.add_argument("--config", help="JSON file of parameters; flags override it")
    sp.add_argument("--out", dest="output_dir", help="directory for output files and manifest")
    sp.add_argument("--digits", type=int, help="significant digits (default 17)")
    sp.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sos-layering")
    top = ap.add_subparsers(dest="group", required=True)

    g = top.add_parser("contours").add_subparsers(dest="action", required=True)
    sp = g.add_parser("enumerate")
    sp.add_argument("--window")
    sp.add_argument("--max-len", dest="max_len", type=int)
    sp.add_argument("--anchor", help="dual vertex X,Y in doubled (odd) coordinates")
    _add_globals(sp)

    g = top.add_parser("exact").add_subparsers(dest="action", required=True)
    sp = g.add_parser("z")
    sp.add_argument("--domain", help="WxH rectangle or a serialized contour")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--u", type=float)
    sp.add_argument("--level", type=int)
    sp.add_argument("--barred", action="store_true", default=None)
    sp.add_argument("--hmax", type=int)
    _add_globals(sp)

    g = top.add_parser("expansion").add_subparsers(dest="action", required=True)
    sp = g.add_parser("free-energy")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--u", type=float)
    sp.add_argument("--level", type=int)
    sp.add_argument("--lmax", type=int)
    sp.add_argument("--truncated", action="store_true", default=None)
    _add_globals(sp)

    g = top.add_parser("weights").add_subparsers(dest="action", required=True)
    sp = g.add_parser("scan")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--level", type=int)
    sp.add_argument("--max-len", dest="max_len", type=int)
    sp.add_argument("--u-grid", dest="u_grid", help="lo:hi:steps")
    _add_globals(sp)

    g = top.add_parser("layering").add_subparsers(dest="action", required=True)
    sp = g.add_parser("locate")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--lmax", type=int)
    _add_globals(sp)
    sp = g.add_parser("table")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--n-max", dest="n_max", type=int)
    sp.add_argument("--lmax", type=int)
    _add_globals(sp)

    g = top.add_parser("mcmc").add_subparsers(dest="action", required=True)
    sp = g.add_parser("run")
    sp.add_argument("--size")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--u", type=float)
    sp.add_argument("--level", type=int)
    sp.add_argument("--sweeps", type=int)
    sp.add_argument("--observables", help="comma list of contact,height,center,histogram,percolation")
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--percolation-every", dest="percolation_every", type=int)
    sp.add_argument("--checkpoint", help="write a restartable field dump here")
    sp.add_argument("--resume", help="continue from a field dump")
    _add_globals(sp)
    return ap


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    command = f"{args.group} {args.action}"
    flags = {k: v for k, v in vars(args).items() if k not in ("group", "action", "config")}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        if "threads" not in file_values and os.environ.get(THREADS_ENV):
            flags["threads"] = os.environ[THREADS_ENV]
        cfg = parse_config(command, file_values, flags)
        manifest = RunManifest(cfg)
        if args.config:
            manifest.add_input(args.config)
        status = EXIT_OK
        try:
            text, files = COMMANDS[command](cfg.params, cfg.globals)
        except Unresolved as u:
            text, files, status = u.text, u.files, EXIT_UNRESOLVED
        stdout.write(text)
        out = cfg.globals["output_dir"]
        if out is None and command == "mcmc run":
            out = "mcmc-run"
        if out is not None:
            for name, body in files.items():
                path = Path(out) / name
                write_text(path, body)
                manifest.add_output(path)
            manifest.write(out)
        return status
    except (ConfigError, ContourError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
