"""Command line front end: ``noregret {simulate,lp,verify,bench-learners}``.

Every run is described by one JSON document (an experiment config). Command
line flags are folded into that document before validation, so a run started
from flags and one started from ``--config`` go through the same checks.

Results go to files under ``--out``. Standard output carries a short
human-readable rendering; when ``--out`` is absent the machine-readable result
(JSON or CSV per ``--format``) is printed instead. Failures print a JSON error
object on stderr and exit nonzero (2 for config errors, 1 for run errors).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import engine, lp, verify
from .auctions import FseConfig, build_mechanism
from .core import ValueDistribution, numeric_mode, to_fraction
from .learners import LEARNER_KEYS, LEARNER_TYPES, LearnerConfig

COMMANDS = ("simulate", "lp", "verify", "bench-learners")
LP_PROBLEMS = ("single", "border", "uniform", "slprev")
CLAIMS = ("counterexample", "nonconvex", "samebid", "uniform-subopt")
DEFAULT_BENCH = ["mw", "ftl", "ftpl", "worst"]

_num = {"type": ["number", "string"]}

_LEARNER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "type": {"enum": list(LEARNER_TYPES)},
        "clever": {"type": "boolean"},
        "gamma": {"type": ["number", "null"]},
        "learning_rate": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "recency_eta": {"type": "number", "minimum": 1},
        "k_switch": {"type": ["integer", "null"], "minimum": 0},
        "feedback": {"enum": ["experts", "bandit"]},
    },
}
assert set(_LEARNER["properties"]) == LEARNER_KEYS

_DIST = {
    "type": "object",
    "additionalProperties": False,
    "required": ["support", "probs"],
    "properties": {"support": {"type": "array", "items": _num, "minItems": 1},
                   "probs": {"type": "array", "items": _num, "minItems": 1}},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "distribution": {"oneOf": [{"type": "string"}, _DIST, {"type": "null"}]},
        "out": {"type": ["string", "null"]},
        "seed": {"type": "integer", "minimum": 0},
        "trials": {"type": "integer", "minimum": 0},
        "jobs": {"type": "integer", "minimum": 1},
        "format": {"enum": ["json", "csv"]},
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "T", "auction"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "T": {"type": "integer", "minimum": 0},
                "auction": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["fse", "spa_reserve", "uniform_declining"]},
                        "P": {"type": ["integer", "null"], "minimum": 1},
                        "reserve": {"oneOf": [_num, {"type": "null"}]},
                        "schedule": {"oneOf": [{"type": "array", "items": _num}, {"type": "null"}]},
                        "epsilon_discount": {"oneOf": [_num, {"type": "null"}]},
                    },
                },
                "learners": {"oneOf": [_LEARNER, {"type": "array", "items": _LEARNER}]},
                "record_sigma": {"type": "boolean"},
                "sigma_stride": {"type": ["integer", "null"], "minimum": 1},
                "record_policy": {"type": "boolean"},
                "record_interim": {"type": "boolean"},
            },
        },
        "lp": {
            "type": "object",
            "additionalProperties": False,
            "required": ["problem"],
            "properties": {
                "problem": {"enum": list(LP_PROBLEMS)},
                "n": {"type": "integer", "minimum": 1},
                "H": {"type": ["number", "null"], "exclusiveMinimum": 1},
                "points": {"type": ["integer", "null"], "minimum": 2},
                "step": {"oneOf": [_num, {"type": "null"}]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "required": ["claim"],
            "properties": {
                "claim": {"enum": list(CLAIMS)},
                "delta": _num,
                "M": _num,
                "qS": _num,
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"learners": {"type": "array", "items": {"enum": list(LEARNER_TYPES)},
                                        "minItems": 1}},
        },
    },
}

SIM_DEFAULTS = {"learners": {"type": "mw"}, "record_sigma": True, "sigma_stride": None,
                "record_policy": False, "record_interim": False}
LP_DEFAULTS = {"n": 1, "H": None, "points": None, "step": None}
VERIFY_DEFAULTS = {"counterexample": {"delta": "1/10", "M": 10},
                   "samebid": {"qS": "2/5", "n": 2}}


class ConfigError(Exception):
    """Schema or invariant violations, each with a dotted path into the document."""

    def __init__(self, errors: list):
        self.errors = errors
        super().__init__("; ".join(f"{e['path']}: {e['message']}" for e in errors))

    def to_json(self) -> dict:
        return {"error": "config", "errors": self.errors}


@dataclass
class ExperimentConfig:
    command: str
    distribution: str | dict | None = None
    out: str | None = None
    seed: int = 0
    trials: int = 1
    jobs: int = 1
    format: str = "json"
    simulation: dict | None = None
    lp: dict | None = None
    verify: dict | None = None
    bench: dict | None = None
    base_dir: Path = field(default_factory=Path.cwd, repr=False, compare=False)

    def to_json(self) -> dict:
        doc = {"command": self.command, "distribution": self.distribution, "out": self.out,
               "seed": self.seed, "trials": self.trials, "jobs": self.jobs, "format": self.format}
        for key in ("simulation", "lp", "verify", "bench"):
            block = getattr(self, key)
            if block is not None:
                doc[key] = block
        return doc

    def load_distribution(self, exact: bool) -> ValueDistribution:
        if self.distribution is None:
            raise ConfigError([{"path": "distribution", "message": "a distribution is required"}])
        try:
            if isinstance(self.distribution, str):
                path = Path(self.distribution)
                if not path.is_absolute():
                    path = self.base_dir / path
                return ValueDistribution.load(path, exact=exact)
            return ValueDistribution.from_json(self.distribution, exact=exact)
        except (OSError, ValueError, ZeroDivisionError, json.JSONDecodeError) as exc:
            raise ConfigError([{"path": "distribution", "message": str(exc)}]) from exc

    def simulation_config(self, learners=None) -> engine.SimulationConfig:
        sim = self.simulation
        return engine.SimulationConfig(
            dist=self.load_distribution(exact=False),
            n=sim["n"], T=sim["T"], auction=dict(sim["auction"]),
            learners=learners if learners is not None else sim["learners"],
            seed=self.seed, trials=self.trials,
            record_sigma=sim["record_sigma"], sigma_stride=sim["sigma_stride"],
            record_policy=sim["record_policy"], record_interim=sim["record_interim"],
        )


def _path(parts) -> str:
    return ".".join(str(p) for p in parts) or "<root>"


def parse_config(document, base_dir=None) -> ExperimentConfig:
    """Validate a config (JSON text or an already-decoded dict) and fill defaults.

    Raises ConfigError listing every problem with its path.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError([{"path": "<root>", "message": f"malformed JSON: {exc}"}]) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([{"path": _path(e.absolute_path), "message": e.message} for e in errors])
    doc = json.loads(json.dumps(document))  # private deep copy
    cmd = doc["command"]
    needed = {"simulate": "simulation", "bench-learners": "simulation", "lp": "lp", "verify": "verify"}[cmd]
    if needed not in doc:
        raise ConfigError([{"path": needed, "message": f"command {cmd!r} needs a {needed!r} block"}])
    if "simulation" in doc:
        doc["simulation"] = {**SIM_DEFAULTS, **doc["simulation"]}
    if "lp" in doc:
        doc["lp"] = {**LP_DEFAULTS, **doc["lp"]}
    if "verify" in doc:
        doc["verify"] = {**VERIFY_DEFAULTS.get(doc["verify"]["claim"], {}), **doc["verify"]}
    if cmd == "bench-learners":
        doc["bench"] = {"learners": list(DEFAULT_BENCH), **doc.get("bench", {})}
    cfg = ExperimentConfig(base_dir=Path(base_dir) if base_dir else Path.cwd(),
                           **{k: v for k, v in doc.items()})
    _check_invariants(cfg)
    return cfg


def _check_invariants(cfg: ExperimentConfig):
    errors = []
    if cfg.command in ("simulate", "bench-learners", "lp"):
        dist = cfg.load_distribution(exact=False) if (cfg.command != "lp" or cfg.lp["problem"] != "slprev") else None
    if cfg.command in ("simulate", "bench-learners"):
        sim = cfg.simulation
        auction = sim["auction"]
        if isinstance(sim["learners"], list) and len(sim["learners"]) != sim["n"]:
            errors.append({"path": "simulation.learners",
                           "message": f"{len(sim['learners'])} learner blocks for n={sim['n']} buyers"})
        if auction["type"] == "fse":
            if auction.get("P") is None:
                errors.append({"path": "simulation.auction.P", "message": "fse auction needs P"})
            else:
                try:
                    FseConfig(dist, sim["n"], sim["T"], auction["P"],
                              epsilon_discount=_opt_number(auction.get("epsilon_discount")))
                except ValueError as exc:
                    errors.append({"path": "simulation.auction.P", "message": str(exc)})
        else:
            try:
                build_mechanism(auction, dist, sim["n"], sim["T"])
            except (ValueError, ZeroDivisionError) as exc:
                errors.append({"path": "simulation.auction", "message": str(exc)})
    if cfg.command == "lp":
        block = cfg.lp
        if block["problem"] == "slprev":
            if block["H"] is None:
                errors.append({"path": "lp.H", "message": "slprev needs H"})
            if block["points"] is not None and block["step"] is not None:
                errors.append({"path": "lp", "message": "give at most one of points and step"})
        elif block["problem"] == "single" and block["n"] != 1:
            errors.append({"path": "lp.n", "message": "the single-buyer program has n = 1"})
    if cfg.command == "verify":
        block = cfg.verify
        for key in ("delta", "M", "qS"):
            if key in block:
                try:
                    to_fraction(block[key])
                except (ValueError, ZeroDivisionError) as exc:
                    errors.append({"path": f"verify.{key}", "message": str(exc)})
    if errors:
        raise ConfigError(errors)


def _opt_number(v):
    return None if v is None else float(to_fraction(v))


# ---------------------------------------------------------------------------
# running


def run_command(cfg: ExperimentConfig, stdout=None) -> int:
    """Execute a validated config, write its artifacts, return the exit status."""
    stdout = stdout or sys.stdout
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    handler = {"simulate": _simulate, "lp": _lp, "verify": _verify, "bench-learners": _bench}[cfg.command]
    handler(cfg, out, stdout)
    return 0


def _simulate(cfg, out, stdout):
    sim_cfg = cfg.simulation_config()
    traces = engine.run_trials(sim_cfg, jobs=cfg.jobs)
    summary = engine.summarize(traces, sim_cfg)
    summary["experiment"] = cfg.to_json()
    target = out or Path(".")
    engine.write_trace_csv(traces, target / "trace.csv")
    engine.write_summary(summary, target / "summary.json")
    rows = [{k: r[k] for k in ("trial", "rounds", "revenue", "welfare", "revenue_ratio")}
            for r in summary["trials"]]
    if cfg.format == "csv":
        _write_csv(target / "trials.csv", rows, ["trial", "rounds", "revenue", "welfare", "revenue_ratio"])
    stdout.write(f"{summary['aggregate']['trials']} trial(s), {summary['aggregate']['rounds']} rounds,"
                 f" mean revenue {summary['aggregate']['mean_revenue']:.6g}; wrote {target}\n")


def _lp(cfg, out, stdout):
    block = cfg.lp
    problem = block["problem"]
    if problem == "slprev":
        H = block["H"]
        step = to_fraction(block["step"]) if block["step"] is not None else None
        points = block["points"] if step is None else None
        if step is None and points is None:
            points = 2000
        value = lp.slprev_equal_revenue(H, step=step, points=points)
        result = {"problem": "slprev", "H": H, "points": points,
                  "step": None if step is None else str(step), "objective": value,
                  "reference_log_log_H_plus_1": math.log(math.log(H) + 1), "status": "optimal"}
        rows = [{"key": k, "value": v} for k, v in result.items()]
    else:
        exact = numeric_mode(default="rational") == "rational"
        dist = cfg.load_distribution(exact=exact)
        n = block["n"]
        if problem == "single":
            sol = lp.solve_single_lp(dist)
        elif problem == "border":
            sol = lp.solve_border_lp(dist, n)
        else:
            sol = lp.solve_reduced_uniform_lp(dist, n)
        result = {"problem": problem, **sol.to_json()}
        rows = [{"index": j + 1, "w": float(w), "q": float(q), "x": float(x), "u": float(u)}
                for j, (w, q, x, u) in enumerate(zip(dist.support, dist.probs, sol.x, sol.u))]
    _emit(cfg, out, stdout, "solution", result, rows)


def _verify(cfg, out, stdout):
    block = cfg.verify
    claim = block["claim"]
    if claim == "counterexample":
        rep = verify.verify_counterexample(block["M"], block["delta"])
    elif claim == "nonconvex":
        rep = verify.verify_nonconvexity()
    elif claim == "uniform-subopt":
        rep = verify.verify_uniform_suboptimality()
    else:
        rep = verify.VerificationReport("samebid")
        qS, n = to_fraction(block["qS"]), block["n"]
        bound = verify.same_bid_alloc_bound(qS, n)
        rep.values.update({"qS": qS, "n": n, "bound": bound})
        rep.check("(1 - (1 - qS)^n) / (n qS) <= 1", bound, "<=", 1)
    stdout.write(rep.table() + "\n")
    if claim == "samebid":
        stdout.write(f"{rep.values['bound']}\n")
    doc = rep.to_json()
    rows = [c.to_json() for c in rep.checks]
    if out is not None:  # without --out the table above is the whole output
        _emit(cfg, out, None, "report", doc, rows, quiet=True)
    if not rep.passed:
        raise VerificationFailed(doc)


class VerificationFailed(Exception):
    def __init__(self, report: dict):
        self.report = report
        super().__init__(f"claim {report['claim']!r} did not verify")


def _bench(cfg, out, stdout):
    rows = []
    for kind in cfg.bench["learners"]:
        base = cfg.simulation["learners"]
        block = dict(base if isinstance(base, dict) else base[0])
        block["type"] = kind
        if kind == "intended" and cfg.simulation["auction"]["type"] != "fse":
            continue
        sim_cfg = cfg.simulation_config(learners=LearnerConfig.from_dict(block))
        start = time.perf_counter()
        traces = engine.run_trials(sim_cfg, jobs=cfg.jobs)
        elapsed = time.perf_counter() - start
        summary = engine.summarize(traces, sim_cfg)
        ratios = [r["revenue_ratio"] for r in summary["trials"] if r["revenue_ratio"] is not None]
        regrets = [max(r["regret"]) for r in summary["trials"] if r["regret"]]
        rows.append({
            "learner": kind,
            "trials": len(traces),
            "mean_revenue": summary["aggregate"]["mean_revenue"],
            "mean_revenue_ratio": sum(ratios) / len(ratios) if ratios else None,
            "max_regret": max(regrets) if regrets else None,
            "seconds": round(elapsed, 3),
        })
    result = {"format": engine.FORMAT_VERSION, "experiment": cfg.to_json(), "results": rows}
    _emit(cfg, out, stdout, "bench", result, rows)


def _emit(cfg, out, stdout, stem, doc, rows, quiet=False):
    text_json = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is not None:
        if cfg.format == "json":
            (out / f"{stem}.json").write_text(text_json)
        else:
            _write_csv(out / f"{stem}.csv", rows)
        if stdout is not None and not quiet:
            stdout.write(f"wrote {out / (stem + '.' + cfg.format)}\n")
    elif stdout is not None:
        if cfg.format == "json":
            stdout.write(text_json)
        else:
            buf = io.StringIO()
            _write_csv(buf, rows)
            stdout.write(buf.getvalue())


def _write_csv(target, rows, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    fh = target if hasattr(target, "write") else open(target, "w", newline="")
    try:
        wr = csv.DictWriter(fh, fieldnames=columns)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    finally:
        if fh is not target:
            fh.close()


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON; flags override its fields")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for independent trials")
    common.add_argument("--format", choices=["json", "csv"])
    common.add_argument("--dist", help="distribution JSON file")

    parser = argparse.ArgumentParser(prog="noregret", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run repeated-auction trials")

    p_lp = sub.add_parser("lp", parents=[common], help="solve a revenue program")
    p_lp.add_argument("problem", choices=LP_PROBLEMS)
    p_lp.add_argument("--n", type=int)
    p_lp.add_argument("--H", type=float)
    p_lp.add_argument("--points", type=int)
    p_lp.add_argument("--step")

    p_v = sub.add_parser("verify", parents=[common], help="re-check an exact claim")
    p_v.add_argument("claim", choices=CLAIMS)
    p_v.add_argument("--delta")
    p_v.add_argument("--M")
    p_v.add_argument("--qS")
    p_v.add_argument("--n", type=int)

    p_b = sub.add_parser("bench-learners", parents=[common], help="compare learner types on one config")
    p_b.add_argument("--learners", help="comma-separated learner types")
    return parser


def document_from_args(args) -> tuple[dict, Path]:
    """Merge ``--config`` (if any) with the command line flags."""
    base = Path.cwd()
    doc: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError([{"path": "--config", "message": str(exc)}]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([{"path": "<root>", "message": f"malformed JSON: {exc}"}]) from exc
        if not isinstance(doc, dict):
            raise ConfigError([{"path": "<root>", "message": "config must be a JSON object"}])
        base = path.resolve().parent
    doc["command"] = args.command
    if args.dist:
        doc["distribution"] = str(Path(args.dist).resolve())
    for key in ("out", "seed", "trials", "jobs", "format"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.command == "lp":
        block = dict(doc.get("lp", {}))
        block["problem"] = args.problem
        for key in ("n", "H", "points", "step"):
            val = getattr(args, key)
            if val is not None:
                block[key] = val
        doc["lp"] = block
    elif args.command == "verify":
        block = dict(doc.get("verify", {}))
        if block.get("claim") != args.claim:
            block = {}
        block["claim"] = args.claim
        for key in ("delta", "M", "qS", "n"):
            val = getattr(args, key)
            if val is not None:
                block[key] = val
        doc["verify"] = block
    elif args.command == "bench-learners" and args.learners:
        doc["bench"] = {"learners": [s.strip() for s in args.learners.split(",") if s.strip()]}
    return doc, base


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc, base = document_from_args(args)
        cfg = parse_config(doc, base_dir=base)
        return run_command(cfg)
    except ConfigError as exc:
        _fail(exc.to_json())
        return 2
    except VerificationFailed as exc:
        _fail({"error": "verification", "message": str(exc), "report": exc.report})
        return 1
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        _fail({"error": "run", "type": type(exc).__name__, "message": str(exc)})
        return 1


def _fail(doc: dict):
    sys.stderr.write(json.dumps(doc, default=str) + "\n")


if __name__ == "__main__":
    raise SystemExit(main())
