"""Command-line front end.

One JSON file drives the pipeline::

    {
      "scenario": {...GenConfig fields...},
      "solve":    {...SolveParams fields...},
      "eval":     {...EvalConfig fields...},
      "sweep":    {"axis": "threshold", "grid": [2, 3, 4, 5], "num_seeds": 5},
      "methods":  ["robust", "nominal", "oma1", "oma2"]
    }

Every section is optional. Subcommands write their artifacts into ``--out``
together with a ``manifest_<command>.json`` describing the run. Outputs carry
no timestamps, so reruns with the same inputs are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 infeasible, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .evaluation import AXES, EvalConfig, feasible_seeds, pf_montecarlo, sweep, write_csv
from .optimizer import INFEASIBLE, METHODS, NUMERICAL, RobustDesign, SolveParams, run_method
from .scenario import ConfigError, GenConfig, generate_scenario, load_scenario, save_scenario, validate_scenario

log = logging.getLogger("robust_hnoma")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

DEFAULT_METHODS = ("robust", "nominal", "oma1", "oma2")
SECTIONS = ("scenario", "solve", "eval", "sweep", "methods")
EVAL_COLUMNS = ["method", "status", "total_power_W", "pf", "pf_lo", "pf_hi", "passes", "n"]


@dataclass
class SweepSpec:
    axis: str = "threshold"
    grid: list = field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0])
    num_seeds: int = 5
    seeds: list | None = None       # explicit list; skips the feasibility scan
    seed_start: int = 0
    evaluate: bool = False          # Monte Carlo PF on design axes too

    def validate(self) -> SweepSpec:
        if self.axis not in AXES:
            raise ConfigError("sweep.axis", f"must be one of {list(AXES)}")
        if not self.grid:
            raise ConfigError("sweep.grid", "must be a nonempty list")
        if not (isinstance(self.num_seeds, int) and self.num_seeds >= 1):
            raise ConfigError("sweep.num_seeds", "must be an integer >= 1")
        return self


@dataclass
class RunConfig:
    scenario: GenConfig
    solve: SolveParams
    eval: EvalConfig
    sweep: SweepSpec
    methods: list


@dataclass
class RunManifest:
    command: str
    config: str | None
    seed: int | None
    out: str
    methods: list
    version: str = __version__

    def validate(self) -> RunManifest:
        if not self.methods:
            raise ConfigError("methods", "method list is empty")
        return self

    def write(self) -> Path:
        path = Path(self.out) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


# ----------------------------------------------------------------------
# configuration


def _section(cls, d, name: str):
    if not isinstance(d, dict):
        raise ConfigError(name, "must be a JSON object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"{name}.{extra[0]}", "unknown field")
    try:
        obj = cls(**d)
        return obj.validate()
    except ConfigError as exc:
        if exc.field.startswith(name):
            raise
        raise ConfigError(f"{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def parse_config(d: dict) -> RunConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the field."""
    if not isinstance(d, dict):
        raise ConfigError("config", "top level must be a JSON object")
    extra = sorted(set(d) - set(SECTIONS))
    if extra:
        raise ConfigError(extra[0], f"unknown section (expected one of {list(SECTIONS)})")
    try:
        scen = GenConfig.from_dict(d.get("scenario", {}))
    except ConfigError as exc:
        if exc.field == "scenario":
            raise
        raise ConfigError(f"scenario.{exc.field}", str(exc).split(": ", 1)[-1]) from exc
    methods = d.get("methods", list(DEFAULT_METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "must be a nonempty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError("methods", f"unknown method {m!r}; choose from {sorted(METHODS)}")
    return RunConfig(scenario=scen,
                     solve=_section(SolveParams, d.get("solve", {}), "solve"),
                     eval=_section(EvalConfig, d.get("eval", {}), "eval"),
                     sweep=_section(SweepSpec, d.get("sweep", {}), "sweep"),
                     methods=list(methods))


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(d)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.scenario = replace(cfg.scenario, rng_seed=args.seed).validate()
        cfg.eval = replace(cfg.eval, seed=args.seed)
        cfg.sweep = replace(cfg.sweep, seed_start=args.seed)
    if getattr(args, "tol", None) is not None:
        try:
            cfg.solve = replace(cfg.solve, tol=args.tol).validate()
        except ValueError as exc:
            raise ConfigError("solve.tol", str(exc)) from exc
    if getattr(args, "method", None):
        for m in args.method:
            if m not in METHODS:
                raise ConfigError("methods", f"unknown method {m!r}; choose from {sorted(METHODS)}")
        cfg.methods = list(args.method)
    return cfg


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("out", f"cannot create {path}: {exc.strerror}") from exc
    if not out.is_dir():
        raise ConfigError("out", f"{path} is not a directory")
    return out


def _scenario(args, cfg: RunConfig):
    if getattr(args, "scenario", None):
        try:
            return load_scenario(args.scenario)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError("scenario", f"cannot load {args.scenario}: {exc}") from exc
    return generate_scenario(cfg.scenario)


# ----------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args.out)
    s = generate_scenario(cfg.scenario)
    path = out / "scenario.json"
    save_scenario(s, path)
    RunManifest("gen", args.config, cfg.scenario.rng_seed, str(out), cfg.methods).validate().write()
    diag = validate_scenario(s)
    if not diag.ok:
        log.warning("scenario has links with nonpositive worst-case gain: %s", diag.infeasible_links)
    print(f"wrote {path} (U={s.num_users}, L={s.error_dims})")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args.out)
    s = _scenario(args, cfg)
    RunManifest("solve", args.config, s.meta.get("seed"), str(out), cfg.methods).validate().write()
    code = EXIT_OK
    for m in cfg.methods:
        d = run_method(m, s, cfg.solve)
        (out / f"design_{m}.json").write_text(d.to_json() + "\n")
        write_csv(d.trace_csv(), out / f"trace_{m}.csv")
        print(f"{m}: status={d.status} total_power_W={d.total_power:.6g} iterations={d.iterations}")
        if d.status == INFEASIBLE:
            log.error("%s: %s", m, d.message)
            code = max(code, EXIT_INFEASIBLE)
        elif d.status == NUMERICAL:
            log.error("%s: %s", m, d.message)
            code = max(code, EXIT_NUMERICAL)
    return code


def _eval_csv(rows: list) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=EVAL_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for row in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def cmd_eval(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args.out)
    s = _scenario(args, cfg)
    paths = [Path(p) for p in args.design] if args.design else [out / f"design_{m}.json" for m in cfg.methods]
    designs = []
    for p in paths:
        try:
            designs.append(RobustDesign.from_json(p.read_text()))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError("design", f"cannot load {p}: {exc}") from exc
    RunManifest("eval", args.config, cfg.eval.seed, str(out), [d.method for d in designs]).validate().write()
    rows = []
    for d in designs:
        rep = pf_montecarlo(d, s, cfg.eval)
        rows.append({"method": d.method, "status": d.status, "total_power_W": d.total_power, "pf": rep.pf,
                     "pf_lo": rep.pf_ci[0], "pf_hi": rep.pf_ci[1], "passes": rep.passes, "n": rep.n})
        print(f"{d.method}: PF={rep.pf:.4f} [{rep.pf_ci[0]:.4f}, {rep.pf_ci[1]:.4f}] over {rep.n} draws")
    write_csv(_eval_csv(rows), out / "eval.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args.out)
    sp = cfg.sweep
    if sp.seeds is not None:
        seeds = [int(v) for v in sp.seeds]
    else:
        seeds, skipped = feasible_seeds(cfg.scenario, sp.num_seeds, start=sp.seed_start, params=cfg.solve)
        if len(seeds) < sp.num_seeds:
            log.error("only %d structurally feasible seeds found", len(seeds))
            return EXIT_INFEASIBLE
        log.info("using seeds %s (%d skipped as structurally infeasible)", seeds, skipped)
    RunManifest("sweep", args.config, sp.seed_start, str(out), cfg.methods).validate().write()
    design_axis = sp.axis in ("threshold", "r_c")
    ecfg = cfg.eval if (sp.evaluate or not design_axis) else None
    res = sweep(cfg.scenario, seeds, cfg.methods, sp.axis, sp.grid, cfg.solve, ecfg,
                progress=lambda seed: log.info("seed %s done", seed))
    write_csv(res.csv(), out / "sweep.csv")
    write_csv(res.records_csv(), out / "sweep_records.csv")
    print(f"wrote {out / 'sweep.csv'} ({len(res.table)} rows)")
    return EXIT_OK


def _read_rows(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _table(rows: list, cols: list) -> str:
    widths = [max(len(c), *(len(r[c]) for r in rows)) for c in cols]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(r[c].ljust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)


def cmd_report(args) -> int:
    out = Path(args.out)
    parts = []
    for name, cols in (("sweep.csv", ["axis", "value", "method", "mean_power_W", "pf", "n_ok", "n_fail"]),
                       ("eval.csv", ["method", "status", "total_power_W", "pf", "pf_lo", "pf_hi"])):
        path = out / name
        if path.exists():
            rows = _read_rows(path)
            for r in rows:
                for c in ("mean_power_W", "total_power_W", "pf", "pf_lo", "pf_hi"):
                    if c in r and r[c] not in ("", "nan"):
                        r[c] = f"{float(r[c]):.6g}"
            parts.append(f"== {name}\n" + (_table(rows, cols) if rows else "(empty)"))
    if not parts:
        raise ConfigError("out", f"no sweep.csv or eval.csv in {out}")
    text = "\n\n".join(parts) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-hnoma",
                                 description="Robust power minimization for BackCom-assisted hybrid NOMA uplinks.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, methods=True, tol=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the seed in the config")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        if methods:
            p.add_argument("--method", action="append", choices=sorted(METHODS),
                           help="method to run; repeat for several (default: config list)")
        if tol:
            p.add_argument("--tol", type=float, help="outer convergence tolerance")
        return p

    p = common(sub.add_parser("gen", help="generate a scenario file"), methods=False, tol=False)
    p.set_defaults(func=cmd_gen)
    p = common(sub.add_parser("solve", help="solve one scenario with the chosen methods"))
    p.add_argument("--scenario", help="scenario JSON (default: generate from the config)")
    p.set_defaults(func=cmd_solve)
    p = common(sub.add_parser("eval", help="Monte Carlo probability of feasibility of designs"), tol=False)
    p.add_argument("--scenario", help="scenario JSON the designs were solved on")
    p.add_argument("--design", action="append", help="design JSON; repeat for several "
                                                      "(default: design_<method>.json in --out)")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("sweep", help="run methods over a parameter grid and many seeds"))
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("report", help="summarize sweep.csv / eval.csv from an output directory")
    p.add_argument("--out", default=".", help="directory holding the CSVs")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:  # pragma: no cover - defensive
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
