"""Command-line interface: ``vdrating <command> [options]``.

Settings are resolved as flags > manifest file > defaults. Every run writes
the effective ``manifest.json`` next to its outputs, so ``--manifest
OUT/manifest.json`` repeats it exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import diagnostics as dg
from .errors import (AllEqualRatings, DataMismatch, DegenerateSeries, InfeasibleSpec,
                     NoStablePoint, ParseError, QuadratureFailure, SampleTooSmall, VDRError)
from .gof import compare
from .likelihood import predict
from .manifest import (ExperimentManifest, dumps, provenance, provenance_comment,
                       write_atomic)
from .model import (KLASSES, VDR, CountMatrix, FitResult, ModelSpec, ParamSet,
                    check_fit_feasible, count_parameters, matrix_to_csv, symmetric_params,
                    validate_params)
from .optimizer import multi_start_fit
from .rng import derive_seed
from .simulator import SimConfig, repair, run_batch, simulate_trials

log = logging.getLogger("vdrating")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_QUADRATURE = 5
EXIT_SCREEN = 6
EXIT_SAMPLE = 7
EXIT_MISMATCH = 8
EXIT_DEGENERATE = 9

_EXIT_FOR = [
    (ParseError, EXIT_PARSE),
    (InfeasibleSpec, EXIT_INFEASIBLE),
    (QuadratureFailure, EXIT_QUADRATURE),
    (SampleTooSmall, EXIT_SAMPLE),
    (DataMismatch, EXIT_MISMATCH),
    (DegenerateSeries, EXIT_DEGENERATE),
    (AllEqualRatings, EXIT_DEGENERATE),
]


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--seed", type=int, help="64-bit seed for every random substream")
    g.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    g.add_argument("--tol", type=float, help="quadrature relative tolerance")
    g.add_argument("--starts", type=int, help="starts per fit")
    g.add_argument("--steps", type=int, help="annealing steps per start")
    g.add_argument("--out", help="output directory (default .)")
    g.add_argument("--manifest", help="JSON manifest; flags override its settings")
    g.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    g.add_argument("--force", action="store_true",
                   help="pipeline: continue after a failed screening")


def _spec_args(p: argparse.ArgumentParser, suffix: str = "") -> None:
    s = f"-{suffix}" if suffix else ""
    p.add_argument(f"--spec{s}", help="ModelSpec JSON file")
    p.add_argument(f"--n{s}", type=int, help="number of stimuli N")
    p.add_argument(f"--m{s}", type=int, help="number of response categories M")
    p.add_argument(f"--klass{s}", choices=KLASSES, help="model class")
    p.add_argument(f"--rules{s}", help="rule set, e.g. 1,2,3")
    p.add_argument(f"--theta{s}", help="ParamSet JSON file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vdrating", description="Variable-decision-rule Thurstonian rating-scale models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate pseudo-data count matrices")
    _common(p)
    _spec_args(p)
    p.add_argument("--tps", type=int, help="trials per stimulus (default 400)")
    p.add_argument("--nsim", type=int, help="number of matrices (default 1)")
    p.add_argument("--walk-step", type=float, help="parameter walk scale (default 0.1)")
    p.add_argument("--trials", action="store_true",
                   help="also write a trial-sequence CSV per matrix")

    p = sub.add_parser("fit", help="fit a model to a count matrix")
    _common(p)
    _spec_args(p)
    p.add_argument("--data", help="CountMatrix CSV")
    p.add_argument("--aicc-basis", choices=("trials", "cells"), help="AICc sample size")

    p = sub.add_parser("compare", help="compare two fits by AICc")
    _common(p)
    p.add_argument("--fit-a", help="FitResult JSON")
    p.add_argument("--fit-b", help="FitResult JSON")

    p = sub.add_parser("diagnose", help="partial autocorrelation screening")
    _common(p)
    p.add_argument("--trials", help="trial-sequence CSV (trial,stimulus,response)")
    p.add_argument("--max-lag", type=int, help="largest lag (default 10)")

    p = sub.add_parser("bin", help="bin continuous ratings into a count matrix")
    _common(p)
    p.add_argument("--trials", help="trial-sequence CSV")
    p.add_argument("--bins", type=int, help="number of bins (default 10)")
    p.add_argument("--equal-count", action="store_true", help="quantile bins")

    p = sub.add_parser("pipeline", help="screen, bin and select a model")
    _common(p)
    p.add_argument("--trials", help="trial-sequence CSV (screened first)")
    p.add_argument("--data", help="CountMatrix CSV (no screening possible)")
    p.add_argument("--bins", type=int, help="bins for continuous ratings (default 10)")
    p.add_argument("--max-lag", type=int, help="largest PACF lag (default 10)")
    p.add_argument("--aicc-basis", choices=("trials", "cells"), help="AICc sample size")

    p = sub.add_parser("css-scan", help="critical-sample-size scan between two models")
    _common(p)
    _spec_args(p, "a")
    _spec_args(p, "b")
    p.add_argument("--grid", help="ascending tps values, e.g. 400,4000")
    p.add_argument("--reps", type=int, help="replicates per cell (default 10)")
    p.add_argument("--threshold", type=float, help="preference rate required (default 1)")
    p.add_argument("--aicc-basis", choices=("trials", "cells"), help="AICc sample size")

    p = sub.add_parser("jump-demo", help="sweep one parameter and report quadrature jumps")
    _common(p)
    _spec_args(p)
    p.add_argument("--param", choices=dg.SWEEP_PARAMS, help="swept block (default crit_sds)")
    p.add_argument("--index", type=int, help="0-based index within the block (default 0)")
    p.add_argument("--lo", type=float, help="sweep start (default 0.5)")
    p.add_argument("--hi", type=float, help="sweep end (default 1.5)")
    p.add_argument("--points", type=int, help="grid points (default 200)")
    p.add_argument("--rule", type=int, choices=(1, 2, 3), help="decision rule (default 1)")
    p.add_argument("--cell", help="1-based cell h,i (default 1,1)")
    return ap


# ----------------------------------------------------------------------------
# manifest resolution

_DEFAULT_OPTIONS = {
    "simulate": {"trials": False},
    "fit": {"aicc_basis": "trials"},
    "compare": {},
    "diagnose": {"max_lag": 10},
    "bin": {"bins": 10, "equal_count": False},
    "pipeline": {"bins": 10, "max_lag": 10, "aicc_basis": "trials", "force": False},
    "css-scan": {"grid": [400, 4000], "reps": 10, "threshold": 1.0, "aicc_basis": "trials"},
    "jump-demo": {"param": "crit_sds", "index": 0, "lo": 0.5, "hi": 1.5, "points": 200,
                  "rule": 1, "cell": [1, 1]},
}
_INPUT_FLAGS = {
    "fit": ("data",), "compare": ("fit_a", "fit_b"), "diagnose": ("trials",),
    "bin": ("trials",), "pipeline": ("trials", "data"),
}


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc


def _read_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc


def _rules(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(r) for r in text)
    try:
        return tuple(int(r) for r in str(text).split(","))
    except ValueError:
        raise UsageError(f"bad rule set {text!r}") from None


def _resolve_spec(a, base: ModelSpec | None, suffix: str = "") -> ModelSpec | None:
    g = (lambda k: getattr(a, f"{k}_{suffix}", None)) if suffix else (lambda k: getattr(a, k, None))
    spec = base
    if g("spec"):
        try:
            spec = ModelSpec.from_dict(_read_json(g("spec")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad spec file: {exc}") from exc
    over = {k: g(k) for k in ("n", "m", "klass", "rules")}
    if any(v is not None for v in over.values()):
        if spec is None and (over["n"] is None or over["m"] is None):
            raise UsageError("a model needs --n and --m (or --spec)")
        d = spec.to_dict() if spec else {"klass": VDR, "rule_set": [1, 2, 3]}
        if over["n"] is not None:
            d["n_stimuli"] = over["n"]
        if over["m"] is not None:
            d["n_responses"] = over["m"]
        if over["klass"] is not None:
            d["klass"] = over["klass"]
        if over["rules"] is not None:
            d["rule_set"] = list(_rules(over["rules"]))
        try:
            spec = ModelSpec.from_dict(d)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return spec


def default_theta(spec: ModelSpec) -> ParamSet:
    """Evenly spaced generator for ``spec`` with equal rule probabilities."""
    p = np.zeros(3)
    p[[r - 1 for r in spec.rule_set]] = 1.0 / len(spec.rule_set)
    th = symmetric_params(spec.n_stimuli, spec.n_responses, 1.0, 1.0, p)
    return repair(th, spec, 1e-3)


def _theta_from(path_or_dict, spec: ModelSpec | None) -> ParamSet | None:
    if path_or_dict is None:
        return None
    d = _read_json(path_or_dict) if isinstance(path_or_dict, str) else path_or_dict
    try:
        th = ParamSet.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad theta: {exc}") from exc
    if spec is not None:
        bad = validate_params(th, spec)
        if bad:
            raise ParseError("theta invalid for " + spec.label + ": " + "; ".join(bad))
    return th


def resolve(a) -> ExperimentManifest:
    """Merge defaults, an optional manifest file, and flags into one manifest."""
    if a.manifest:
        try:
            m = ExperimentManifest.from_dict(_read_json(a.manifest))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad manifest: {exc}") from exc
        if m.command != a.command:
            raise UsageError(f"manifest is for {m.command!r}, not {a.command!r}")
    else:
        m = ExperimentManifest(command=a.command)
    opts = dict(_DEFAULT_OPTIONS[a.command])
    opts.update(m.options)
    m.options = opts
    if a.seed is not None:
        m.seed = a.seed
    if a.out is not None:
        m.out = a.out
    search = m.search
    if a.steps is not None:
        search = replace(search, n_steps=a.steps)
    if a.starts is not None:
        search = replace(search, n_starts=a.starts)
    m.search = replace(search, seed=m.seed)
    if a.tol is not None:
        m.quad = replace(m.quad, rel_tol=a.tol)
    for key in _INPUT_FLAGS.get(a.command, ()):
        val = getattr(a, key, None)
        if isinstance(val, str):
            m.inputs[key] = val
    for key in _DEFAULT_OPTIONS[a.command]:
        val = getattr(a, key, None)
        if isinstance(val, bool):
            if val:
                opts[key] = True
        elif val is not None:
            opts[key] = val
    if a.command == "pipeline" and a.force:
        opts["force"] = True

    if a.command in ("simulate", "fit", "jump-demo"):
        m.spec = _resolve_spec(a, m.spec)
        if a.command != "fit":
            sim = dict(m.sim or {})
            th = _theta_from(getattr(a, "theta", None), m.spec)
            if th is not None:
                sim["theta"] = th.to_dict()
            if a.command == "simulate":
                for key, flag, default in (("tps", "tps", 400), ("nsim", "nsim", 1),
                                           ("walk_step", "walk_step", 0.1)):
                    v = getattr(a, flag, None)
                    sim[key] = v if v is not None else sim.get(key, default)
            m.sim = sim
    if a.command == "css-scan":
        for side in ("a", "b"):
            cur = opts.get(f"spec_{side}")
            spec = _resolve_spec(a, ModelSpec.from_dict(cur) if cur else None, side)
            if spec is not None:
                opts[f"spec_{side}"] = spec.to_dict()
            th = _theta_from(getattr(a, f"theta_{side}", None), spec)
            if th is not None:
                opts[f"theta_{side}"] = th.to_dict()
        if isinstance(opts["grid"], str):
            try:
                opts["grid"] = [int(t) for t in opts["grid"].split(",")]
            except ValueError:
                raise UsageError(f"bad --grid {opts['grid']!r}") from None
    if a.command == "jump-demo" and isinstance(opts["cell"], str):
        try:
            opts["cell"] = [int(t) for t in opts["cell"].split(",")]
        except ValueError:
            raise UsageError(f"bad --cell {opts['cell']!r}") from None
    return m


# ----------------------------------------------------------------------------
# commands


class _Writer:
    def __init__(self, m: ExperimentManifest):
        self.m = m
        self.written: list[str] = []

    def path(self, name):
        return os.path.join(self.m.out, name)

    def json(self, name, payload: dict):
        body = dict(payload)
        body["provenance"] = provenance(self.m)
        write_atomic(self.path(name), dumps(body))
        self.written.append(name)

    def csv(self, name, text: str):
        write_atomic(self.path(name), provenance_comment(self.m) + text)
        self.written.append(name)

    def text(self, name, text: str):
        write_atomic(self.path(name), text)
        self.written.append(name)

    def finish(self):
        write_atomic(self.path("manifest.json"), self.m.to_json())


def _need(m: ExperimentManifest, key: str) -> str:
    if key not in m.inputs:
        raise UsageError(f"{m.command} needs --{key.replace('_', '-')}")
    return m.inputs[key]


def _need_spec(m: ExperimentManifest) -> ModelSpec:
    if m.spec is None:
        raise UsageError(f"{m.command} needs a model (--spec or --n/--m)")
    return m.spec


def _warn_small(spec: ModelSpec) -> None:
    if spec.n_stimuli < 3 or spec.n_responses < 4:
        log.warning("N >= 3 and M >= 4 are recommended (got N=%d, M=%d)",
                    spec.n_stimuli, spec.n_responses)


def _load_counts(path: str) -> CountMatrix:
    return CountMatrix.from_csv(_read(path))


def _fit_bundle(m: ExperimentManifest, jobs: int) -> dg.FitBundle:
    return dg.FitBundle(m.search, m.quad, jobs, m.options.get("aicc_basis", "trials"))


def cmd_simulate(m, w, jobs, verbose):
    spec = _need_spec(m)
    _warn_small(spec)
    sim = m.sim
    theta = _theta_from(sim.get("theta"), spec) if sim.get("theta") else default_theta(spec)
    sim["theta"] = theta.to_dict()
    cfg = SimConfig(spec, theta, int(sim["tps"]), int(sim["nsim"]), m.seed,
                    float(sim["walk_step"]), m.quad)
    for i, item in enumerate(run_batch(cfg)):
        tag = f"{i:03d}"
        w.csv(f"counts_{tag}.csv", item.data.to_csv())
        w.json(f"sim_{tag}.json", {"spec": spec.to_dict(), "theta": item.theta.to_dict(),
                                   "seed": m.seed, "index": i, "tps": cfg.tps,
                                   "log_l_g": item.log_l_g, "data_digest": item.data.digest()})
        if m.options.get("trials"):
            stim, resp = simulate_trials(item.theta, spec, cfg.tps,
                                         derive_seed(m.seed, "cli", "trials", i))
            w.csv(f"trials_{tag}.csv", dg.TrialSequence(stim, resp).to_csv())
    return EXIT_OK


def cmd_fit(m, w, jobs, verbose):
    spec = _need_spec(m)
    data = _load_counts(_need(m, "data"))
    if data.shape != (spec.n_stimuli, spec.n_responses):
        raise UsageError(f"data are {data.shape[0]}x{data.shape[1]} but the model is "
                         f"{spec.n_stimuli}x{spec.n_responses}")
    _warn_small(spec)
    if not check_fit_feasible(spec):
        raise InfeasibleSpec(f"{spec.label}: {count_parameters(spec)} parameters for "
                             f"{spec.n_stimuli * (spec.n_responses - 1)} degrees of freedom")
    fr = multi_start_fit(data, spec, None, m.search, m.quad, jobs=jobs,
                         aicc_basis=m.options["aicc_basis"], verbose=verbose)
    w.json("fit.json", fr.to_dict())
    w.csv("predicted.csv", matrix_to_csv(predict(fr.theta, spec, m.quad)))
    return EXIT_OK


def cmd_compare(m, w, jobs, verbose):
    fits = []
    for key in ("fit_a", "fit_b"):
        try:
            fits.append(FitResult.from_dict(_read_json(_need(m, key))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad fit file {m.inputs[key]}: {exc}") from exc
    rep = compare(*fits)
    w.json("compare.json", rep.to_dict())
    w.text("compare.txt", rep.table())
    sys.stdout.write(rep.table())
    return EXIT_OK


def _load_trials(path: str) -> dg.TrialSequence:
    try:
        return dg.TrialSequence.from_csv(_read(path))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def cmd_diagnose(m, w, jobs, verbose):
    seq = _load_trials(_need(m, "trials"))
    res = dg.screen(seq, int(m.options["max_lag"]))
    w.csv("pacf.csv", res.to_csv())
    w.json("diagnose.json", res.to_dict())
    print(f"verdict: {res.verdict} (cl95 {res.cl95:.4f})")
    return EXIT_OK


def cmd_bin(m, w, jobs, verbose):
    seq = _load_trials(_need(m, "trials"))
    cm = dg.bin_responses(seq, int(m.options["bins"]), bool(m.options["equal_count"]))
    w.csv("counts.csv", cm.to_csv())
    return EXIT_OK


def cmd_pipeline(m, w, jobs, verbose):
    screened = None
    if "trials" in m.inputs:
        seq = _load_trials(m.inputs["trials"])
        screened = dg.screen(seq, int(m.options["max_lag"]))
        w.csv("pacf.csv", screened.to_csv())
        if screened.verdict == dg.FAIL and not m.options["force"]:
            w.json("selection.json", {"screened": screened.to_dict(), "chosen": None,
                                      "aborted": "screening failed"})
            log.error("screening failed: partial autocorrelations exceed the band; "
                      "use --force to continue")
            return EXIT_SCREEN
        r = seq.responses
        if np.all(r == np.round(r)) and r.min() >= 1:
            # integer categories are already responses
            n, mm = seq.n_stimuli, int(r.max())
            counts = np.zeros((n, mm), dtype=np.int64)
            np.add.at(counts, (seq.stimuli - 1, r.astype(np.int64) - 1), 1)
            data = CountMatrix(counts, int(round(counts.sum(axis=1).mean())))
        else:
            data = dg.bin_responses(seq, int(m.options["bins"]))
        w.csv("counts.csv", data.to_csv())
    elif "data" in m.inputs:
        data = _load_counts(m.inputs["data"])
        log.warning("count data cannot be screened for sequential dependence")
    else:
        raise UsageError("pipeline needs --trials or --data")
    rep = dg.select_model(data, _fit_bundle(m, jobs), screened)
    w.json("selection.json", rep.to_dict())
    w.text("selection.md", rep.markdown())
    print(f"chosen: {rep.chosen.label}")
    return EXIT_OK


def cmd_css_scan(m, w, jobs, verbose):
    o = m.options
    specs, thetas = [], []
    for side in ("a", "b"):
        if not o.get(f"spec_{side}"):
            raise UsageError(f"css-scan needs model {side} "
                             f"(--spec-{side} or --n-{side}/--m-{side})")
        spec = ModelSpec.from_dict(o[f"spec_{side}"])
        th = o.get(f"theta_{side}")
        theta = _theta_from(th, spec) if th else default_theta(spec)
        o[f"theta_{side}"] = theta.to_dict()
        specs.append(spec)
        thetas.append(theta)
    bundle = _fit_bundle(m, 1)
    try:
        table = dg.css_scan(specs[0], thetas[0], specs[1], thetas[1], o["grid"], int(o["reps"]),
                            bundle, m.seed, float(o["threshold"]), jobs=jobs)
    except NoStablePoint as exc:
        table = exc.table
        log.warning("%s", exc)
    w.csv("css.csv", table.to_csv())
    w.json("css.json", table.to_dict())
    print(f"css: {table.css if table.css is not None else 'none within grid'}")
    return EXIT_OK


def cmd_jump_demo(m, w, jobs, verbose):
    o = m.options
    spec = m.spec or ModelSpec(5, 10)
    th = m.sim.get("theta") if m.sim else None
    theta = _theta_from(th, None) if th else default_theta(spec)
    m.sim = {"theta": theta.to_dict()}
    if int(o["points"]) < 2 or not o["lo"] < o["hi"]:
        raise UsageError("need --points >= 2 and --lo < --hi")
    grid = np.linspace(float(o["lo"]), float(o["hi"]), int(o["points"]))
    sw = dg.jump_sweep(theta, o["param"], int(o["index"]), grid, int(o["rule"]),
                       tuple(o["cell"]), replace(m.quad, record_jumps=True))
    w.csv("sweep.csv", sw.sweep_csv())
    w.csv("jumps.csv", sw.report_csv())
    w.json("jump_demo.json", sw.to_dict())
    print(f"{len(sw.report)} refinement changes; largest jump {sw.max_ratio:.3g} x rel_tol")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "compare": cmd_compare, "diagnose": cmd_diagnose,
    "bin": cmd_bin, "pipeline": cmd_pipeline, "css-scan": cmd_css_scan,
    "jump-demo": cmd_jump_demo,
}


def _default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    jobs = a.jobs if a.jobs is not None else _default_jobs()
    try:
        if jobs < 1:
            raise UsageError("--jobs must be >= 1")
        m = resolve(a)
        w = _Writer(m)
        code = COMMANDS[a.command](m, w, jobs, a.verbose)
        w.finish()
        return code
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except VDRError as exc:
        for cls, code in _EXIT_FOR:
            if isinstance(exc, cls):
                break
        else:
            code = EXIT_ERROR
        print(f"vdrating: error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"vdrating: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        # invalid values inside otherwise well-formed inputs
        print(f"vdrating: error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
