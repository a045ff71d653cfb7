"""Command-line entry point: ``prp {simulate,meanfield,chain,brw,sweep,critical}``.

A run is described by one flat JSON object (``--config``) whose keys can be
overridden by flags.  Every artifact embeds the resolved configuration and
master seed.  Exit status: 0 success, 1 configuration error, 2 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

from . import brw, chain, criticality, meanfield
from .model import FAMILIES, PRESETS, ControlSpec, Geometry, Params, preset
from .series import Inconclusive, NumericalError
from .simulator import LatticeState, Stopping, default_initial, run

COMMANDS = ("simulate", "meanfield", "chain", "brw", "sweep", "critical")
COMMAND_HELP = {
    "simulate": "Monte Carlo survival estimate for one parameter point",
    "meanfield": "stationary mean-field profile and optional ODE trajectory",
    "chain": "classify the single-patch walk and compute the subcritical lambda bound",
    "brw": "expected occupancy of the dominating branching random walk",
    "sweep": "survival table over a parameter grid (resumable CSV)",
    "critical": "bisect the critical lambda or phi for a survival threshold",
}


class ConfigError(ValueError):
    def __init__(self, problems: dict[str, str]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


# --------------------------------------------------------------------------
# key schema


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_rational(v):
    # control values may be written as "a/b" strings
    if _is_num(v):
        return True
    if isinstance(v, str):
        try:
            Fraction(v)
            return True
        except (ValueError, ZeroDivisionError):
            return False
    return False


def _num_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_is_num(x) for x in v)


def _int_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_is_int(x) for x in v)


@dataclass(frozen=True)
class Key:
    check: Callable[[Any], bool]
    kind: str
    help: str
    default: Any = None


MODEL_KEYS = {
    "lambda": Key(_is_num, "number", "inter-patch rate per neighbour patch"),
    "phi": Key(_is_num, "number", "intra-patch rate"),
    "d": Key(_is_int, "integer", "lattice dimension", 1),
    "N": Key(_is_int, "integer", "patch size", 1),
    "control": Key(lambda v: isinstance(v, dict), "object", "control function, e.g. {\"family\": \"logistic\", \"kappa\": 4}"),
    "family": Key(lambda v: v in FAMILIES, f"one of {FAMILIES}", "control family (shorthand for control)"),
    "kappa": Key(_is_int, "integer", "kappa of the indicator/logistic control"),
    "p": Key(_is_rational, "number", "constant control value for i >= 1"),
    "values": Key(lambda v: isinstance(v, list) and all(_is_rational(x) for x in v), "list of numbers",
                  "table control values c(0), c(1), ..."),
    "tail": Key(_is_rational, "number", "table control value beyond the stored entries"),
    "base": Key(_is_rational, "number", "quadratic_ratio base"),
    "lambda_own_patch": Key(lambda v: isinstance(v, bool), "boolean", "include the own patch in the lambda sum", False),
    "preset": Key(lambda v: v in PRESETS, f"one of {PRESETS}", "named special case"),
}
GEOMETRY_KEYS = {
    "side": Key(_is_int, "integer", "box half-width L (box is {-L..L}^d)", 10),
    "boundary": Key(lambda v: v in ("periodic", "absorbing"), "periodic|absorbing", "box boundary", "periodic"),
}
STOP_KEYS = {
    "t_max": Key(_is_num, "number", "time cap", 200.0),
    "pop_cap": Key(_is_int, "integer", "population cap", 2000),
}
COMMON_KEYS = {
    "command": Key(lambda v: v in COMMANDS, f"one of {COMMANDS}", "subcommand"),
    "seed": Key(lambda v: _is_int(v) and 0 <= v < 2 ** 64, "unsigned 64-bit integer", "master seed", 0),
    "out": Key(lambda v: isinstance(v, str), "path", "output file (stdout when absent)"),
    "format": Key(lambda v: v in ("csv", "json"), "csv|json", "output format", "json"),
}
REPLICAS = {"replicas": Key(_is_int, "integer", "Monte Carlo replicas", 100)}
COMMAND_KEYS = {
    "simulate": {**REPLICAS, **MODEL_KEYS, **GEOMETRY_KEYS, **STOP_KEYS,
                 "events": Key(lambda v: isinstance(v, str), "path", "event log of replica 0 as CSV")},
    "meanfield": {
        "flavor": Key(lambda v: v in ("logistic", "selfreg"), "logistic|selfreg", "mean-field system"),
        "lambda": MODEL_KEYS["lambda"], "phi": MODEL_KEYS["phi"],
        "kappa": MODEL_KEYS["kappa"], "control": MODEL_KEYS["control"], "family": MODEL_KEYS["family"],
        "p": MODEL_KEYS["p"], "values": MODEL_KEYS["values"], "tail": MODEL_KEYS["tail"],
        "base": MODEL_KEYS["base"],
        "K": Key(_is_int, "integer", "truncation level for selfreg profiles"),
        "t_end": Key(_is_num, "number", "integrate the ODE up to this time"),
        "dt": Key(_is_num, "number", "RK4 step", 0.01),
        "u_init": Key(_num_list, "list of numbers", "initial concentrations for the ODE", [0.9, 0.1]),
    },
    "chain": {
        "phi": MODEL_KEYS["phi"], "N": MODEL_KEYS["N"], "d": MODEL_KEYS["d"],
        "control": MODEL_KEYS["control"], "family": MODEL_KEYS["family"], "kappa": MODEL_KEYS["kappa"],
        "p": MODEL_KEYS["p"], "values": MODEL_KEYS["values"], "tail": MODEL_KEYS["tail"],
        "base": MODEL_KEYS["base"],
        "H": Key(_is_int, "integer", "height cap of the absorption solve"),
    },
    "brw": {
        "phi": MODEL_KEYS["phi"], "lambda": MODEL_KEYS["lambda"], "d": MODEL_KEYS["d"],
        "t": Key(_is_num, "number", "time"),
        "R": Key(_is_int, "integer", "box radius of the output field"),
        "n_max": Key(_is_int, "integer", "series truncation"),
        "method": Key(lambda v: v in ("series", "ode"), "series|ode", "evaluation method", "series"),
    },
    "sweep": {
        "lambdas": Key(_num_list, "list of numbers", "lambda grid"),
        "phis": Key(_num_list, "list of numbers", "phi grid"),
        "Ns": Key(_int_list, "list of integers", "patch-size grid", [1]),
        "controls": Key(lambda v: isinstance(v, list) and len(v) > 0 and all(isinstance(x, dict) for x in v),
                        "list of objects", "control grid", [{"family": "all_one"}]),
        "d": MODEL_KEYS["d"], **GEOMETRY_KEYS, **STOP_KEYS, **REPLICAS,
    },
    "critical": {**REPLICAS, **MODEL_KEYS, **GEOMETRY_KEYS, **STOP_KEYS,
                 "axis": Key(lambda v: v in ("lambda", "phi"), "lambda|phi", "parameter to bisect"),
                 "threshold": Key(_is_num, "number", "survival threshold", 0.05),
                 "tol": Key(_is_num, "number", "bracket width tolerance", 0.05),
                 "lo": Key(_is_num, "number", "initial lower end", 0.0),
                 "hi": Key(_is_num, "number", "initial upper end"),
                 "max_value": Key(_is_num, "number", "give up doubling beyond this value", 64.0),
                 "budget": Key(_is_int, "integer", "maximum number of decisions", 40),
                 "sequential": Key(lambda v: isinstance(v, bool), "boolean",
                                   "stop a decision early once its interval excludes the threshold", True),
                 "log": Key(lambda v: isinstance(v, str), "path", "JSON-lines log of the decisions")},
}
REQUIRED = {
    "simulate": ("lambda", "phi"),
    "meanfield": ("flavor", "lambda", "phi"),
    "chain": ("phi",),
    "brw": ("phi", "lambda", "t"),
    "sweep": ("lambdas", "phis"),
    "critical": ("axis",),
}
CONTROL_SHORTHAND = ("family", "kappa", "p", "values", "tail", "base")


@dataclass
class RunConfig:
    """Resolved configuration: the validated flat key/value mapping plus its command."""

    command: str
    values: dict = field(default_factory=dict)

    def get(self, key: str):
        if key in self.values:
            return self.values[key]
        spec = {**COMMON_KEYS, **COMMAND_KEYS[self.command]}.get(key)
        return None if spec is None else spec.default

    def to_dict(self) -> dict:
        return {"command": self.command, **self.values}

    def resolved(self) -> dict:
        """All keys of the command with defaults filled in (what is embedded in artifacts)."""
        out = {"command": self.command}
        for k, spec in {**COMMON_KEYS, **COMMAND_KEYS[self.command]}.items():
            if k == "command":
                continue
            v = self.get(k)
            if v is not None:
                out[k] = v
        return out

    @property
    def seed(self) -> int:
        return self.get("seed")


def parse_config(data: dict | None, overrides: dict | None = None) -> RunConfig:
    """Merge ``overrides`` over ``data`` and validate every key.

    Raises :class:`ConfigError` listing all offending keys at once.
    """
    merged = dict(data or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems: dict[str, str] = {}
    cmd = merged.get("command")
    if cmd is None:
        raise ConfigError({"command": f"required key missing (one of {COMMANDS})"})
    if cmd not in COMMANDS:
        raise ConfigError({"command": f"expected one of {COMMANDS}, got {cmd!r}"})
    allowed = {**COMMON_KEYS, **COMMAND_KEYS[cmd]}
    for k, v in merged.items():
        if k not in allowed:
            problems[k] = f"unknown key for command {cmd!r}"
        elif not allowed[k].check(v):
            problems[k] = f"expected {allowed[k].kind}, got {v!r}"
    required = list(REQUIRED[cmd])
    if cmd == "meanfield":
        required += ["kappa"] if merged.get("flavor") == "logistic" else []
    if cmd == "critical":
        axis = merged.get("axis")
        required += [{"lambda": "phi", "phi": "lambda"}[axis]] if axis in ("lambda", "phi") else []
    for k in required:
        if k not in merged:
            problems[k] = "required key missing"
    good = {k: v for k, v in merged.items() if k not in problems}
    for k, msg in _check_invariants(cmd, good).items():
        problems.setdefault(k, msg)
    if problems:
        raise ConfigError(problems)
    values = {k: v for k, v in merged.items() if k != "command"}
    return RunConfig(cmd, values)


def _check_invariants(cmd: str, v: dict) -> dict[str, str]:
    problems = {}
    for k in ("lambda", "phi", "t", "t_end", "lo", "hi"):
        if k in v and v[k] < 0:
            problems[k] = f"must be nonnegative, got {v[k]}"
    for k in ("d", "N", "side", "pop_cap", "replicas", "budget", "H", "R", "K"):
        if k in v and v[k] < (0 if k == "R" else 1):
            problems[k] = f"must be positive, got {v[k]}"
    for k in ("t_max", "dt", "tol", "max_value"):
        if k in v and not v[k] > 0:
            problems[k] = f"must be positive, got {v[k]}"
    if "threshold" in v and not 0 < v["threshold"] < 1:
        problems["threshold"] = "must lie strictly between 0 and 1"
    for k in ("lambdas", "phis"):
        if k in v and min(v[k]) < 0:
            problems[k] = "entries must be nonnegative"
    if "Ns" in v and min(v["Ns"]) < 1:
        problems["Ns"] = "entries must be positive"
    # kappa doubles as the logistic mean-field size and as a preset argument
    kappa_free = (cmd == "meanfield" and v.get("flavor") == "logistic") or "preset" in v
    shorthand = [k for k in CONTROL_SHORTHAND if k in v and not (k == "kappa" and kappa_free)]
    if "control" in v and shorthand:
        problems["control"] = f"give either control or the shorthand keys {shorthand}, not both"
    elif shorthand and "family" not in v:
        for k in shorthand:
            problems[k] = "control shorthand needs a family"
    else:
        try:
            control_from(v, cmd)
        except (ValueError, TypeError) as e:
            problems["control" if "control" in v else "family"] = str(e)
    if "controls" in v:
        for i, c in enumerate(v["controls"]):
            try:
                ControlSpec.from_dict(c)
            except (ValueError, TypeError) as e:
                problems[f"controls[{i}]"] = str(e)
    if "u_init" in v and (min(v["u_init"]) < 0 or abs(math.fsum(v["u_init"]) - 1) > 1e-9):
        problems["u_init"] = "must be nonnegative and sum to 1"
    if cmd == "meanfield" and v.get("flavor") == "selfreg" and "control" not in v and "family" not in v:
        problems["control"] = "selfreg flavor needs a control (control or family)"
    if v.get("preset") in ("IRP", "LogisticIRP") and "kappa" not in v:
        problems["kappa"] = f"preset {v['preset']} needs kappa"
    return problems


def control_from(v: dict, cmd: str | None = None) -> ControlSpec:
    if "control" in v:
        return ControlSpec.from_dict(v["control"])
    if "family" in v:
        return ControlSpec.from_dict({k: v[k] for k in CONTROL_SHORTHAND if k in v})
    return ControlSpec.all_one()


def params_from(cfg: RunConfig, **override) -> Params:
    v = {**cfg.values, **override}
    lam, phi = float(v.get("lambda", 0.0)), float(v.get("phi", 0.0))
    d, N = cfg.get("d"), cfg.get("N")
    if "preset" in v:
        p = preset(v["preset"], lam, phi, d, N, kappa=v.get("kappa"),
                   control=control_from(v) if ("control" in v or "family" in v) else None)
        return p.replace(lambda_own_patch=cfg.get("lambda_own_patch"))
    return Params(lam, phi, d, N, control_from(v), lambda_own_patch=cfg.get("lambda_own_patch"))


def stopping_from(cfg: RunConfig) -> Stopping:
    return Stopping(float(cfg.get("t_max")), int(cfg.get("pop_cap")))


# --------------------------------------------------------------------------
# execution


@dataclass
class Result:
    summary: str
    payload: Any
    rows: list[dict] | None = None
    fields: list[str] | None = None
    written: bool = False


def _simulate(cfg: RunConfig) -> Result:
    p = params_from(cfg)
    geo = Geometry(p.d, cfg.get("side"), p.N, cfg.get("boundary"))
    stop = stopping_from(cfg)
    est = criticality.estimate_survival(p, geo, stop, cfg.get("replicas"), cfg.seed)
    if cfg.get("events"):
        st = LatticeState(geo, p, eta=default_initial(geo))
        with open(cfg.get("events"), "w") as fh:
            fh.write("# " + json.dumps({"config": cfg.resolved(), "seed": cfg.seed, "replica": 0}) + "\n")
            fh.write("time,event_kind,patch,site,population\n")
            run(st, stop, criticality.replica_rng(cfg.seed, 0), log=fh)
    family, kappa = criticality._control_key(p.control)
    row = {"lambda": p.lam, "phi": p.phi, "N": p.N, "d": p.d, "family": family, "kappa": kappa,
           "replicas": est.replicas, "survivors": est.survivors, "ci_lo": est.ci[0], "ci_hi": est.ci[1],
           "seed": cfg.seed}
    summary = (f"survivors={est.survivors} replicas={est.replicas} estimate={est.estimate:.4g} "
               f"ci=[{est.ci[0]:.4g}, {est.ci[1]:.4g}]")
    return Result(summary, est.to_dict(), [row], criticality.CSV_FIELDS)


def _meanfield(cfg: RunConfig) -> Result:
    lam, phi = float(cfg.get("lambda")), float(cfg.get("phi"))
    if cfg.get("flavor") == "logistic":
        flavor = meanfield.Logistic(cfg.get("kappa"))
    else:
        flavor = meanfield.SelfReg(control_from(cfg.values))
    prof = meanfield.stationary_profile(flavor, lam, phi, K=cfg.get("K"))
    if isinstance(prof, Inconclusive):
        raise NumericalError(prof.reason)
    payload: dict[str, Any] = {}
    if isinstance(prof, meanfield.NoEndemicEquilibrium):
        payload.update(u0=prof.u0, endemic=False)
        summary = f"u0={prof.u0:.6g} endemic=no"
        rows = [{"i": 0, "u": 1.0}]
        K = len(cfg.get("u_init")) - 1 if flavor.__class__ is meanfield.SelfReg else flavor.kappa
    else:
        payload.update(u0=prof.u0, endemic=True, K=prof.K, u=prof.u.tolist())
        summary = f"u0={prof.u0:.6g} K={prof.K}"
        rows = [{"i": i, "u": float(u)} for i, u in enumerate(prof.u)]
        K = prof.K
    if cfg.get("t_end") is not None:
        snaps = meanfield.integrate_meanfield(flavor, lam, phi, cfg.get("u_init"), cfg.get("t_end"),
                                              dt=cfg.get("dt"), K=K)
        last = snaps[-1]
        payload["trajectory_end"] = {"t": last.t, "u": last.u.tolist(), "leak": last.leak}
        summary += f" u0(t_end)={last.u0:.6g}"
    return Result(summary, payload, rows, ["i", "u"])


def _chain(cfg: RunConfig) -> Result:
    phi = cfg.get("phi")
    c = control_from(cfg.values)
    N, d = cfg.get("N"), cfg.get("d")
    cls = chain.classify(phi, c)
    payload = {"class": str(cls), "reason": cls.reason}
    row = {"phi": phi, "family": c.label(), "class": str(cls), "lambda_star": "", "E_tau0": ""}
    if cls.kind is chain.ChainClass.TRANSIENT:
        payload["lambda_cr"] = 0.0
        summary = "class=Transient lambda_cr=0"
    elif cls.kind is chain.ChainClass.POSITIVE_RECURRENT:
        tau = chain.expected_absorption_time(phi, c, N, H=cfg.get("H"))
        lam_star = (1.0 + float(phi)) / (2 * d * tau.value)
        mass = chain.total_mass(phi, c, N)
        payload.update(E_tau0=tau.value, E_tau0_sensitivity=tau.sensitivity, height=tau.H,
                       lambda_star=lam_star, total_mass=None if isinstance(mass, Inconclusive) else mass)
        row.update(lambda_star=lam_star, E_tau0=tau.value)
        summary = f"class=PositiveRecurrent lambda_star={lam_star:.6g} E_tau0={tau.value:.6g}"
    else:
        summary = "class=Inconclusive"
    return Result(summary, payload, [row], ["phi", "family", "class", "lambda_star", "E_tau0"])


def _brw(cfg: RunConfig) -> Result:
    phi, lam, d, t = float(cfg.get("phi")), float(cfg.get("lambda")), cfg.get("d"), float(cfg.get("t"))
    if cfg.get("method") == "ode":
        R = cfg.get("R") if cfg.get("R") is not None else 25
        fld = brw.brw_expectation_ode(phi, lam, d, R, t)
    else:
        fld = brw.brw_expectation_field(phi, lam, d, t, n_max=cfg.get("n_max"), R=cfg.get("R"))
    fields = [f"x{i + 1}" for i in range(d)] + ["value"]
    rows = [dict(zip(fields, r)) for r in brw.field_rows(fld, d)]
    expected = math.exp((phi + 2 * d * lam - 1) * t)
    payload = {"R": fld.R, "t": t, "mass": fld.mass, "expected_mass": expected, "tail_bound": fld.tail_bound,
               "field": rows}
    return Result(f"mass={fld.mass:.10g} expected_mass={expected:.10g} R={fld.R}", payload, rows, fields)


def _sweep(cfg: RunConfig) -> Result:
    controls = [ControlSpec.from_dict(c) for c in cfg.get("controls")]
    out = cfg.get("out") if cfg.get("format") == "csv" else None
    rows = criticality.sweep(cfg.get("lambdas"), cfg.get("phis"), cfg.get("Ns"), controls, cfg.get("d"),
                             cfg.get("side"), stopping_from(cfg), cfg.get("replicas"), cfg.seed,
                             boundary=cfg.get("boundary"), out=out,
                             comment=json.dumps({"config": cfg.resolved(), "seed": cfg.seed}))
    flags = {ax: len(criticality.monotonicity_violations(rows, ax)) for ax in ("lambda", "phi", "N")}
    summary = f"points={len(rows)} monotonicity_flags={sum(flags.values())}"
    return Result(summary, {"rows": rows, "monotonicity_flags": flags}, rows, criticality.CSV_FIELDS,
                  written=out is not None)


def _critical(cfg: RunConfig) -> Result:
    axis = cfg.get("axis")
    p = params_from(cfg, **({"lambda": 0.0} if axis == "lambda" else {"phi": 0.0}))
    geo = Geometry(p.d, cfg.get("side"), p.N, cfg.get("boundary"))
    log = open(cfg.get("log"), "w") if cfg.get("log") else None
    try:
        if log is not None:
            log.write(json.dumps({"config": cfg.resolved(), "seed": cfg.seed}) + "\n")
        b = criticality.bisect_critical(axis, p, geo, stopping_from(cfg), cfg.get("replicas"), cfg.seed,
                                        threshold=cfg.get("threshold"), tol=cfg.get("tol"), lo=cfg.get("lo"),
                                        hi=cfg.get("hi"), max_value=cfg.get("max_value"),
                                        budget=cfg.get("budget"), sequential=cfg.get("sequential"), log=log)
    finally:
        if log is not None:
            log.close()
    name = f"{axis}_cr"
    if not b:
        summary = f"{name}: no bracket up to {b.searched_up_to:g}"
        row = {"axis": axis, "lo": "", "hi": "", "converged": False, "decisions": len(b.decisions)}
    else:
        summary = f"{name} in [{b.lo:.6g}, {b.hi:.6g}] decisions={len(b.decisions)}"
        row = {"axis": axis, "lo": b.lo, "hi": b.hi, "converged": b.converged, "decisions": len(b.decisions)}
    return Result(summary, b.to_dict(), [row], ["axis", "lo", "hi", "converged", "decisions"])


HANDLERS = {"simulate": _simulate, "meanfield": _meanfield, "chain": _chain, "brw": _brw,
            "sweep": _sweep, "critical": _critical}


def render(cfg: RunConfig, res: Result) -> str:
    header = {"config": cfg.resolved(), "seed": cfg.seed}
    if cfg.get("format") == "json":
        return json.dumps({**header, "summary": res.summary, "result": res.payload}, indent=2) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(header) + "\n")
    w = csv.DictWriter(buf, fieldnames=res.fields, lineterminator="\n")
    w.writeheader()
    for r in res.rows:
        w.writerow(r)
    return buf.getvalue()


def execute(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        res = HANDLERS[cfg.command](cfg)
    except (NumericalError, ArithmeticError) as e:
        stderr.write(f"numerical failure: {e}\n")
        return 2
    text = render(cfg, res)
    out = cfg.get("out")
    if out is None:
        stdout.write(text)
        stderr.write(res.summary + "\n")
    else:
        if not res.written:
            with open(out, "w") as fh:
                fh.write(text)
        stdout.write(res.summary + "\n")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _convert(spec: Key, text: str):
    """Flag text to a config value; raises ValueError on malformed input."""
    if spec.kind.startswith("list") or spec.kind == "object":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"expected {spec.kind} as JSON, got {text!r}") from e
    if spec.kind.endswith("integer"):
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected {spec.kind}, got {text!r}") from None
    if spec.kind == "number":
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected number, got {text!r}") from None
    if spec.kind == "boolean":
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return low == "true"
    return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"config error: {message}\n")


def _keys(cmd: str) -> dict[str, Key]:
    return {**{k: v for k, v in COMMON_KEYS.items() if k != "command"}, **COMMAND_KEYS[cmd]}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="prp", description="Experiments on patchy restrained particle systems. Flags override "
                                          "--config values; exit status 0 ok, 1 config error, 2 numerical failure.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=COMMAND_HELP[cmd], description=COMMAND_HELP[cmd])
        sp.add_argument("--config", metavar="PATH", help="JSON config file (flags override its values)")
        for k, spec in _keys(cmd).items():
            default = "" if spec.default is None else f" (default: {json.dumps(spec.default)})"
            sp.add_argument("--" + k.replace("_", "-"), dest=k, default=argparse.SUPPRESS, metavar=k.upper(),
                            help=f"{spec.help}; {spec.kind}{default}")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    ns, unknown = ap.parse_known_args(argv)
    ns = vars(ns)
    cmd = ns.pop("command")
    path = ns.pop("config", None)
    problems = {u.split("=")[0]: "unknown flag" for u in unknown if u.startswith("-")}
    overrides = {}
    keys = _keys(cmd)
    for k, text in ns.items():
        try:
            overrides[k] = _convert(keys[k], text)
        except ValueError:
            overrides[k] = text  # reported as a type mismatch below
    data: dict = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            problems["config"] = f"cannot read {path}: {e}"
        if not isinstance(data, dict):
            problems["config"] = "the config file must hold a JSON object"
            data = {}
        if data.get("command", cmd) != cmd:
            problems["command"] = f"file says {data['command']!r}, invoked as {cmd!r}"
    data["command"] = cmd
    try:
        cfg = parse_config(data, overrides)
    except ConfigError as e:
        problems.update(e.problems)
    if problems:
        sys.stderr.write("config error: " + "; ".join(f"{k}: {v}" for k, v in sorted(problems.items())) + "\n")
        return 1
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
