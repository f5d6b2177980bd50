"""Command-line front end: JSON experiment config in, CSV and JSON files out."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ModelDomainError, ModelMismatchError, NumericalError, RegimeError

COMMANDS = ("wave", "radius", "mu-c", "coeffs", "simulate", "asymptotics", "compare", "report")

_NUM = {"type": "number"}
_NUM_LIST = {"type": "array", "items": _NUM, "minItems": 1}
_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

_LAW_SCHEMA = {
    "type": "object",
    "properties": {
        "family": {"enum": ["explicit", "geometric-tail", "polylog-tail"]},
        "p": _NUM_LIST,
        "params": {
            "type": "object",
            "properties": {"r": _NUM, "gamma": _NUM, "p0": _NUM},
            "additionalProperties": False,
        },
    },
    "required": ["family"],
    "additionalProperties": False,
}

_NUMERICS_KEYS = (
    "h", "picard_tol", "picard_max_iter", "residual_tol", "tail_eps", "ode_rtol", "ode_atol",
    "event_tol", "cross_tol", "interp_tol", "x_guard", "qprime_guard", "seed_eps",
    "switch_frac", "s_guard", "coeff_h",
)

_PARAMS = {
    "wave": {},
    "radius": {"mu_grid": _NUM_LIST, "cross_check": {"type": "boolean"}},
    "mu-c": {"tol": _NUM},
    "coeffs": {"N": {"type": "integer", "minimum": 1}, "x_grid": _NUM_LIST},
    "simulate": {
        "replicates": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 1},
        "max_generation": {"type": "integer", "minimum": 0},
        "imax": {"type": "integer", "minimum": 0},
        "runs": {"type": "boolean"},
    },
    "asymptotics": {
        "formula": {"enum": ["theorem5", "muc_tail_sum", "supercritical_link", "fprime_at_muc",
                             "critical_tail", "critical_point", "subcritical_shape"]},
        "n": _INT_LIST,
        "s": _NUM_LIST,
        "C": _NUM, "rho": _NUM, "t": _NUM, "m": {"type": "integer", "minimum": 0},
        "mu_from_critical": _NUM,
    },
    "compare": {
        "regime": {"enum": ["below", "at", "above"]},
        "N": {"type": "integer", "minimum": 1},
        "n": _INT_LIST,
        "C": _NUM, "rho": _NUM, "t": _NUM, "m": {"type": "integer", "minimum": 0},
        "mu_from_critical": _NUM,
    },
    "report": {
        "inputs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "model_hash": {"type": "string"},
    },
}


def config_schema(command: str) -> dict:
    return {
        "type": "object",
        "properties": {
            "command": {"enum": list(COMMANDS)},
            "model": {
                "type": "object",
                "properties": {"law": _LAW_SCHEMA, "beta": _NUM, "mu": _NUM},
                "required": ["law", "beta", "mu"],
                "additionalProperties": False,
            },
            "numerics": {
                "type": "object",
                "properties": {k: _NUM for k in _NUMERICS_KEYS},
                "additionalProperties": False,
            },
            "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
            "x": {"type": "number", "exclusiveMinimum": 0},
            "params": {"type": "object", "properties": _PARAMS[command], "additionalProperties": False},
        },
        "required": ["model"],
        "additionalProperties": False,
    }


def validate(conf: dict, command: str) -> None:
    import jsonschema

    try:
        jsonschema.validate(conf, config_schema(command))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelDomainError(f"invalid config at {where}: {exc.message}") from None
    if conf.get("command", command) != command:
        raise ModelDomainError(f"config is for command {conf['command']!r}, not {command!r}")


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def model_hash(model: dict) -> str:
    return hashlib.sha256(canonical(model).encode()).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "infinite" if obj > 0 else ("-infinite" if obj < 0 else "nan")
    return obj


def csv_text(header, rows) -> str:
    """RFC-4180 CSV with CRLF line ends and 17 significant digits."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.17g}"
        s = str(v)
        if any(c in s for c in ',"\r\n'):
            s = '"' + s.replace('"', '""') + '"'
        return s

    lines = [",".join(header)] + [",".join(cell(v) for v in r) for r in rows]
    return "\r\n".join(lines) + "\r\n"


class Experiment:
    """Resolved config plus the objects it describes."""

    def __init__(self, command: str, conf: dict, args):
        from .offspring import ModelConfig, Numerics, law_from_json

        self.command = command
        model = dict(conf["model"])
        if args.mu is not None:
            model["mu"] = args.mu
        if args.beta is not None:
            model["beta"] = args.beta
        self.law = law_from_json(model["law"])
        self.model = {"law": self.law.to_dict(), "beta": float(model["beta"]), "mu": float(model["mu"])}
        numerics = Numerics()
        if conf.get("numerics"):
            over = dict(conf["numerics"])
            for k in ("picard_max_iter",):
                if k in over:
                    over[k] = int(over[k])
            numerics = numerics.replace(**over)
        self.numerics = numerics
        self.config = ModelConfig(self.law, self.model["beta"], self.model["mu"], numerics)
        self.seed = int(args.seed if args.seed is not None else conf.get("seed", 0))
        self.x = float(args.x if args.x is not None else conf.get("x", 1.0))
        self.params = dict(conf.get("params") or {})
        self.workers = args.workers

    def resolved(self) -> dict:
        from dataclasses import asdict

        return {
            "command": self.command,
            "model": self.model,
            "numerics": asdict(self.numerics),
            "seed": self.seed,
            "x": self.x,
            "params": self.params,
        }


# -- commands ---------------------------------------------------------------------------


def _cmd_wave(ex: Experiment):
    from .wave import solve_profile

    prof = solve_profile(ex.config)
    return {"wave.csv": prof.to_csv(), "wave.json": prof.sidecar_json() + "\n"}, prof.summary()


def _cmd_radius(ex: Experiment):
    from .generator import integrate_a, radius

    mus = ex.params.get("mu_grid", [ex.model["mu"]])
    check = ex.params.get("cross_check", True)
    rows = []
    mu0 = ex.config.consts.mu0
    for mu in mus:
        cfg = ex.config.with_mu(float(mu))
        if mu <= -mu0:
            rows.append((float(mu), 1.0, "no_wave", "none"))
            continue
        R = radius(cfg, cross_check=check)
        curve = integrate_a(cfg)
        rows.append((float(mu), R, curve.regime, curve.termination))
    files = {"radius.csv": csv_text(["mu", "R", "regime", "termination"], rows)}
    if ex.model["mu"] > -mu0:
        files["generator.csv"] = integrate_a(ex.config).to_csv()
    return files, {"points": len(rows)}


def _cmd_mu_c(ex: Experiment):
    from .generator import mu_c_locate
    from .offspring import IntegralClass

    cls = ex.law.integral_class()
    if cls is IntegralClass.INFINITE:
        result = {"mu_c": "infinite", "criterion": "integral_divergent"}
    else:
        tol = float(ex.params.get("tol", 1e-10))
        mu_c = mu_c_locate(ex.law, ex.model["beta"], tol=tol, numerics=ex.numerics)
        result = {"mu_c": mu_c, "criterion": "integral_finite", "tol": tol}
    return {"mu_c.json": _json(result)}, result


def _cmd_coeffs(ex: Experiment):
    from .coeffs import picard_coefficients
    from .wave import solve_profile

    prof = solve_profile(ex.config)
    grid = ex.params.get("x_grid", [ex.x])
    table = picard_coefficients(prof, N=int(ex.params.get("N", 64)), x_grid=grid)
    return {"coeffs.csv": table.to_csv()}, table.manifest()


def _cmd_simulate(ex: Experiment):
    from .sim import SimConfig, estimate

    p = ex.params
    cfg = SimConfig(
        ex.law, ex.model["beta"], ex.model["mu"], ex.x,
        replicates=int(p.get("replicates", 100_000)), n_max=int(p.get("n_max", 100_000)),
        seed=ex.seed, max_generation=p.get("max_generation"),
    )
    summary = estimate(cfg, workers=ex.workers)
    imax = int(p.get("imax", 20))
    qh, lo, hi = summary.histogram(imax)
    rows = [(i, float(qh[i]), float(lo[i]), float(hi[i])) for i in range(imax + 1)]
    files = {
        "sim.csv": csv_text(["i", "q_hat", "ci_low", "ci_high"], rows),
        "sim.json": _json(summary.to_dict(imax)),
    }
    if p.get("runs"):
        files["runs.csv"] = summary.runs_csv()
    return files, {"Q_bracket": list(summary.Q_bracket), "replicates": summary.n}


def _tail_params(ex: Experiment, default_rho: float = 0.0):
    law = ex.law
    R = law.radius
    rho = float(ex.params.get("rho", default_rho))
    if "C" in ex.params:
        C = float(ex.params["C"])
    elif rho == 0.0 and math.isfinite(R) and law.converges_at_radius(0):
        C = float(law.g(R) - R)
    else:
        raise ModelDomainError("tail constant C must be given in params")
    return C, rho


def _model_at(ex: Experiment):
    """Profile and curve at the model drift, or at mu_c + offset when requested."""
    from .generator import integrate_a, mu_c_locate
    from .wave import solve_profile

    cfg = ex.config
    if "mu_from_critical" in ex.params:
        mu_c = mu_c_locate(ex.law, ex.model["beta"], numerics=ex.numerics)
        if not math.isfinite(mu_c):
            raise RegimeError("law has no finite critical drift")
        cfg = cfg.with_mu(mu_c + float(ex.params["mu_from_critical"]))
    return cfg, solve_profile(cfg), integrate_a(cfg)


def _cmd_asymptotics(ex: Experiment):
    from . import asymptotics as asy

    p = ex.params
    formula = p.get("formula", "theorem5")
    n = p.get("n", list(range(2, 41)))
    rows = []
    if formula in ("critical_tail", "critical_point", "subcritical_shape"):
        vals = np.atleast_1d(asy.maillard_formulas(np.array(n, dtype=float), ex.x, formula, ex.law,
                                                   ex.model["beta"], ex.model["mu"]))
        rows = [(k, float(v)) for k, v in zip(n, vals)]
        header = ["n", "formula"]
    else:
        cfg, prof, curve = _model_at(ex)
        if formula == "theorem5":
            rows = [(k, asy.theorem5_equiv(k, ex.x, prof, curve)) for k in n]
            header = ["i", "formula"]
        elif formula == "muc_tail_sum":
            C, rho = _tail_params(ex)
            vals = np.atleast_1d(asy.muc_tail_sum(np.array(n), ex.x, C, rho, prof, curve))
            rows = [(k, float(v)) for k, v in zip(n, vals)]
            header = ["n", "formula"]
        elif formula == "supercritical_link":
            C, rho = _tail_params(ex, default_rho=1.0)
            lhs, rhs = asy.supercritical_link(np.array(n), ex.x, float(p.get("t", 0.0)),
                                              int(p.get("m", 3)), C, rho, prof, curve)
            rows = [(k, float(a), float(b)) for k, a, b in zip(n, lhs, rhs)]
            header = ["n", "formula_power", "formula_offspring"]
        else:
            R = ex.law.radius
            s_vals = p.get("s") or [R - 10.0**-k for k in range(1, 6)]
            rows = [(float(s), asy.fprime_equiv_at_muc(float(s), ex.x, prof, curve)) for s in s_vals]
            header = ["s", "formula"]
    return {"asymptotics.csv": csv_text(header, rows)}, {"formula": formula, "rows": len(rows)}


def _cmd_compare(ex: Experiment):
    from . import asymptotics as asy
    from .coeffs import picard_coefficients
    from .generator import ABOVE, AT, BELOW

    p = ex.params
    regime = p.get("regime", "below")
    wanted = {"below": BELOW, "at": AT, "above": ABOVE}[regime]
    cfg, prof, curve = _model_at(ex)
    if curve.regime != wanted:
        raise RegimeError(f"requested regime {wanted} but the model is {curve.regime}")
    N = int(p.get("N", 64))
    table = picard_coefficients(prof, N=N, x_grid=[ex.x])
    q = table.values[0]
    idx = np.arange(N + 1)
    rows = []
    if regime == "below":
        d = ex.law.span
        for i in p.get("n", [k for k in range(1, N) if d * k + 1 <= N]):
            j = d * i + 1
            if j > N:
                raise ModelDomainError(f"index {j} beyond the table size N={N}")
            f = asy.theorem5_equiv(i, ex.x, prof, curve)
            rows.append((i, float(q[j]), f, float(q[j]) / f))
        header = ["i", "computed", "formula", "ratio"]
    else:
        R = ex.law.radius
        w = q * R**idx
        ns = p.get("n", list(range(8, N + 1, 8)))
        if regime == "at":
            C, rho = _tail_params(ex)
            f0 = float(prof.Q(prof.x0 + ex.x))
            for n in ns:
                comp = f0 - float(w[:n].sum())
                f = asy.muc_tail_sum(n, ex.x, C, rho, prof, curve)
                rows.append((n, comp, f, comp / f))
            header = ["i", "computed", "formula", "ratio"]
        else:
            t = float(p.get("t", 0.0))
            f0, f1, f2 = asy.weighted_totals(prof, curve, ex.x)
            totals = {0.0: f0, 1.0: f1 * R, 2.0: f2 * R * R + f1 * R}
            if t not in totals:
                raise ModelDomainError("computed tail sums are available for t in {0, 1, 2}")
            C, rho = _tail_params(ex, default_rho=1.0)
            for n in ns:
                comp = totals[t] - float((w[:n] * idx[:n] ** t).sum())
                lhs, rhs = asy.supercritical_link(n, ex.x, t, int(p.get("m", 3)), C, rho, prof, curve)
                rows.append((n, comp, lhs, comp / lhs, rhs))
            header = ["i", "computed", "formula", "ratio", "formula_offspring"]
    name = f"compare_{regime}.csv"
    return {name: csv_text(header, rows)}, {"regime": regime, "mu": cfg.mu, "rows": len(rows)}


def _cmd_report(ex: Experiment):
    want = ex.params.get("model_hash", model_hash(ex.model))
    inputs = ex.params.get("inputs")
    if not inputs:
        raise ModelDomainError("report needs params.inputs: a list of output directories")
    rows, runs = [], []
    for d in inputs:
        man_path = Path(d) / "manifest.json"
        if not man_path.is_file():
            raise ModelMismatchError(f"{d}: no manifest.json")
        man = json.loads(man_path.read_text())
        if man.get("model_hash") != want:
            raise ModelMismatchError(f"{d}: model hash {man.get('model_hash')} does not match {want}")
        runs.append({"dir": str(d), "command": man.get("command"), "result": man.get("result")})
        for name in man.get("files", []):
            digest = hashlib.sha256((Path(d) / name).read_bytes()).hexdigest()
            rows.append((str(d), man.get("command"), name, digest))
    files = {
        "report.csv": csv_text(["dir", "command", "file", "sha256"], rows),
        "report.json": _json({"model_hash": want, "runs": runs}),
    }
    return files, {"inputs": len(inputs)}


_HANDLERS = {
    "wave": _cmd_wave, "radius": _cmd_radius, "mu-c": _cmd_mu_c, "coeffs": _cmd_coeffs,
    "simulate": _cmd_simulate, "asymptotics": _cmd_asymptotics, "compare": _cmd_compare,
    "report": _cmd_report,
}


def _versions() -> dict:
    import numba
    import scipy

    return {
        "bbm_absorb": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "numba": numba.__version__,
    }


def run(command: str, conf: dict, args) -> None:
    validate(conf, command)
    ex = Experiment(command, conf, args)
    out = Path(args.out)
    t0 = time.perf_counter()
    files, result = _HANDLERS[command](ex)
    wall = time.perf_counter() - t0
    for name, text in files.items():
        atomic_write(out / name, text)
    manifest = {
        "command": command,
        "config": ex.resolved(),
        "model_hash": model_hash(ex.model),
        "seed": ex.seed,
        "result": result,
        "files": sorted(files),
        "versions": _versions(),
        "wall_time_s": wall,
    }
    atomic_write(out / "manifest.json", _json(manifest))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbm-absorb", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--mu", type=float, default=None)
        sp.add_argument("--beta", type=float, default=None)
        sp.add_argument("--x", type=float, default=None)
        if name == "simulate":
            sp.add_argument("--workers", type=int, default=1)
        else:
            sp.set_defaults(workers=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            conf = json.load(fh)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ModelDomainError("seed must be an unsigned 64-bit integer")
        run(args.command, conf, args)
    except (ModelDomainError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"bbm-absorb {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ArithmeticError) as exc:
        print(f"bbm-absorb {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
