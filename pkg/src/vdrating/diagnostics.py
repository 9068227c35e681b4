"""Pre-fit screening, binning, model-selection workflow and sample-size scans."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllEqualRatings, DegenerateSeries, InfeasibleSpec, NoStablePoint, ParseError
from .gof import compare
from .model import (CSDT_EV, CSDT_UV, SDT_EV, SDT_UV, VDR, CountMatrix, FitResult, ModelSpec,
                    ParamSet, check_fit_feasible, validate_params)
from .optimizer import SearchConfig, multi_start_fit
from .quadrature import QuadConfig
from .rng import derive_seed

log = logging.getLogger(__name__)

PASS, WARN, FAIL = "pass", "warn", "fail"
WARN_FACTOR = 1.25
RECOMMENDED_BINS = (10, 13)


@dataclass
class TrialSequence:
    """Trials in presentation order: 1-based stimulus index and a response value."""

    stimuli: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        self.stimuli = np.asarray(self.stimuli, dtype=np.int64)
        self.responses = np.asarray(self.responses, dtype=float)
        if len(self.stimuli) == 0:
            raise ValueError("empty trial sequence")
        if self.stimuli.shape != self.responses.shape:
            raise ValueError("stimuli and responses differ in length")
        if self.stimuli.min() < 1:
            raise ValueError("stimulus indices are 1-based")

    @property
    def n_stimuli(self) -> int:
        return int(self.stimuli.max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "stimulus", "response"])
        integral = np.all(self.responses == np.round(self.responses))
        for t, (s, r) in enumerate(zip(self.stimuli, self.responses), start=1):
            w.writerow([t, int(s), int(r) if integral else repr(float(r))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrialSequence":
        rows = list(csv.reader(io.StringIO(text)))
        rows = [r for r in rows if r and not r[0].startswith("#")]
        if not rows or [c.strip() for c in rows[0]] != ["trial", "stimulus", "response"]:
            raise ParseError("trial CSV needs the header trial,stimulus,response")
        try:
            body = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad trial row: {exc}") from exc
        if not body:
            raise ParseError("no trials")
        body.sort(key=lambda r: r[0])
        return cls([b[1] for b in body], [b[2] for b in body])


def pacf(x, max_lag: int) -> tuple[np.ndarray, float]:
    """Partial autocorrelations at lags 1..max_lag (Durbin-Levinson) and the 95% band."""
    x = np.asarray(x, dtype=float)
    T = len(x)
    if T <= max_lag + 1:
        raise ValueError(f"series of length {T} too short for {max_lag} lags")
    xc = x - x.mean()
    c0 = float(np.dot(xc, xc)) / T
    if c0 == 0.0:
        raise DegenerateSeries("series has zero variance")
    r = np.array([np.dot(xc[:T - k], xc[k:]) / T / c0 for k in range(max_lag + 1)])
    out = np.zeros(max_lag)
    phi = np.zeros(max_lag + 1)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (r[k] - np.dot(phi[1:k], r[k - 1:0:-1])) / v
        new = phi.copy()
        new[k] = a
        new[1:k] = phi[1:k] - a * phi[k - 1:0:-1]
        phi = new
        v *= 1.0 - a * a
        out[k - 1] = a
    return out, 1.96 / math.sqrt(T)


def verdict(coefs, cl95: float) -> str:
    """pass / warn / fail from partial autocorrelations and their band."""
    a = np.abs(np.asarray(coefs, dtype=float))
    over = a > cl95
    if not over.any():
        return PASS
    lags = np.flatnonzero(over) + 1
    if np.all(lags <= 2) and np.all(a[over] <= WARN_FACTOR * cl95):
        return WARN
    return FAIL


@dataclass
class ScreenResult:
    coefficients: np.ndarray
    cl95: float
    verdict: str

    def to_dict(self):
        return {"coefficients": self.coefficients.tolist(), "cl95": self.cl95,
                "verdict": self.verdict}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag", "pacf", "cl95", "exceeds"])
        for k, c in enumerate(self.coefficients, start=1):
            w.writerow([k, repr(float(c)), repr(self.cl95), int(abs(c) > self.cl95)])
        return buf.getvalue()


def screen(seq: TrialSequence, max_lag: int = 10) -> ScreenResult:
    """PACF of the pooled response sequence in presentation order."""
    coefs, cl = pacf(seq.responses, max_lag)
    return ScreenResult(coefs, cl, verdict(coefs, cl))


def bin_responses(seq: TrialSequence, n_bins: int, equal_count: bool = False) -> CountMatrix:
    """Counts of each stimulus's ratings in ``n_bins`` bins over the observed range."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    if not RECOMMENDED_BINS[0] <= n_bins <= RECOMMENDED_BINS[1]:
        log.warning("%d bins requested; 10 to 13 bins are recommended for rating data", n_bins)
    r = seq.responses
    lo, hi = float(r.min()), float(r.max())
    if lo == hi:
        raise AllEqualRatings("all ratings are equal; nothing to bin")
    if equal_count:
        edges = np.quantile(r, np.linspace(0, 1, n_bins + 1))
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    # right edge inclusive for the last bin only
    idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)
    n = seq.n_stimuli
    counts = np.zeros((n, n_bins), dtype=np.int64)
    np.add.at(counts, (seq.stimuli - 1, idx), 1)
    empty = int(np.sum(counts.sum(axis=0) == 0))
    if empty:
        log.warning("binned data leave %d of %d response columns empty", empty, n_bins)
    tps = int(round(counts.sum(axis=1).mean()))
    return CountMatrix(counts, tps)


@dataclass
class FitBundle:
    """Settings shared by every fit in a workflow."""

    search: SearchConfig = field(default_factory=SearchConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    jobs: int = 1
    aicc_basis: str = "trials"


def _fit(data, spec, bundle: FitBundle, tag) -> FitResult:
    cfg = SearchConfig(**{**bundle.search.to_dict(), "seed": derive_seed(bundle.search.seed, tag)})
    return multi_start_fit(data, spec, None, cfg, bundle.quad, jobs=bundle.jobs,
                           aicc_basis=bundle.aicc_basis)


@dataclass
class SelectionReport:
    screened: dict | None
    fits: list[FitResult]
    chosen: ModelSpec
    narrative: list[str]

    def to_dict(self):
        return {"screened": self.screened, "chosen": self.chosen.to_dict(),
                "chosen_label": self.chosen.label,
                "fits": [f.to_dict() for f in self.fits], "narrative": list(self.narrative)}

    def markdown(self) -> str:
        lines = ["# Model selection", ""]
        if self.screened:
            lines.append(f"Screening verdict: **{self.screened['verdict']}** "
                         f"(band {self.screened['cl95']:.4f})")
            lines.append("")
        for k, step in enumerate(self.narrative, start=1):
            lines.append(f"{k}. {step}")
        lines += ["", f"Chosen model: **{self.chosen.label}**", "",
                  "| model | log L | AICc | r2 | K-L |", "|---|---|---|---|---|"]
        for f in self.fits:
            lines.append(f"| {f.spec.label} | {f.log_l:.3f} | {f.aicc:.3f} | "
                         f"{f.gof.r2:.4f} | {f.gof.kl:.4f} |")
        return "\n".join(lines) + "\n"


def select_model(data: CountMatrix, bundle: FitBundle, screened: ScreenResult | None = None
                 ) -> SelectionReport:
    """Sequential AICc comparisons starting from the general VDR and SDT-UV models."""
    n, m = data.shape
    fits: list[FitResult] = []
    narrative: list[str] = []
    cache: dict[ModelSpec, FitResult] = {}

    def fit_of(spec):
        if spec not in cache:
            if not check_fit_feasible(spec):
                raise InfeasibleSpec(spec.label)
            cache[spec] = _fit(data, spec, bundle, spec.label)
            fits.append(cache[spec])
        return cache[spec]

    def duel(a, b):
        """Fit both, record the comparison, return the winner's spec (or None if neither fits)."""
        fa = fb = None
        try:
            fa = fit_of(a)
        except InfeasibleSpec:
            narrative.append(f"{a.label} skipped: infeasible for {n}x{m} data")
        try:
            fb = fit_of(b)
        except InfeasibleSpec:
            narrative.append(f"{b.label} skipped: infeasible for {n}x{m} data")
        if fa is None or fb is None:
            return a if fa is not None else (b if fb is not None else None)
        rep = compare(fa, fb)
        # a tie keeps the incumbent
        win = b if rep.preferred == "b" else a
        narrative.append(f"{a.label} vs {b.label}: AICc {fa.aicc:.3f} vs {fb.aicc:.3f}, "
                         f"prefer {win.label}" + (" (tie)" if rep.tie else ""))
        return win

    vdr = ModelSpec(n, m, VDR, (1, 2, 3))
    sdt_uv = ModelSpec(n, m, SDT_UV)
    best = duel(vdr, sdt_uv)
    if best is None:
        raise InfeasibleSpec("neither the general VDR nor the SDT-UV model can be fitted")
    if best == sdt_uv:
        best = duel(sdt_uv, ModelSpec(n, m, SDT_EV))
    elif best == vdr:
        p = cache[vdr].theta.rule_probs
        order = np.argsort(-p, kind="stable")
        suggested = [(int(order[0]) + 1,), tuple(sorted(int(r) + 1 for r in order[:2]))]
        narrative.append("fitted rule probabilities " + ", ".join(f"{x:.3f}" for x in p)
                         + f"; trying rule sets {', '.join(str(set(s)) for s in suggested)}")
        for rules in suggested:
            cand = ModelSpec(n, m, VDR, rules)
            winner = duel(best, cand)
            if winner is not None:
                best = winner
    for klass in (CSDT_EV, CSDT_UV):
        winner = duel(best, ModelSpec(n, m, klass, (1, 2, 3)))
        if winner is not None:
            best = winner
    return SelectionReport(screened.to_dict() if screened else None, fits, best, narrative)


@dataclass
class RuleScore:
    largest_correct: bool
    smallest_correct: bool
    fitted: list[float]
    generating: list[float]

    def to_dict(self):
        return {"largest_correct": self.largest_correct, "smallest_correct": self.smallest_correct,
                "fitted": self.fitted, "generating": self.generating}


def identify_rules(fit: FitResult | ParamSet, generating: ParamSet) -> RuleScore:
    """Whether the fitted rule probabilities single out the generating largest/smallest rule."""
    theta = fit.theta if isinstance(fit, FitResult) else fit
    pf, pg = theta.rule_probs, generating.rule_probs
    return RuleScore(int(np.argmax(pf)) == int(np.argmax(pg)),
                     int(np.argmin(pf)) == int(np.argmin(pg)), pf.tolist(), pg.tolist())


@dataclass
class CssTable:
    tps_grid: list[int]
    rate_a: list[float]
    rate_b: list[float]
    reps: int
    css: int | None
    cells: list[dict]

    def to_dict(self):
        return {"tps_grid": self.tps_grid, "rate_a": self.rate_a, "rate_b": self.rate_b,
                "reps": self.reps, "css": self.css, "cells": self.cells}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tps", "reps", "a_prefers_a", "b_prefers_b"])
        for t, a, b in zip(self.tps_grid, self.rate_a, self.rate_b):
            w.writerow([t, self.reps, repr(a), repr(b)])
        return buf.getvalue()


def _css_cell(args):
    spec_a, spec_b, spec_g, theta_g, tps, gen, r, bundle, seed = args
    from .simulator import simulate_counts

    data = simulate_counts(theta_g, spec_g, tps, derive_seed(seed, "css", tps, gen, r))
    fa = _fit(data, spec_a, bundle, f"css.{tps}.{gen}.{r}.a")
    fb = _fit(data, spec_b, bundle, f"css.{tps}.{gen}.{r}.b")
    # strict preference needed; ties count for neither generator
    prefers = "a" if fa.aicc < fb.aicc else ("b" if fb.aicc < fa.aicc else "tie")
    return {"tps": tps, "generator": gen, "rep": r, "aicc_a": fa.aicc, "aicc_b": fb.aicc,
            "preferred": prefers}


def css_scan(spec_a: ModelSpec, theta_a: ParamSet, spec_b: ModelSpec, theta_b: ParamSet,
             tps_grid, reps: int, bundle: FitBundle, seed: int = 0,
             threshold: float = 1.0, jobs: int = 1) -> CssTable:
    """Preference rates of AICc for each generator across sample sizes.

    ``css`` is the smallest grid value from which both generators are
    recognised in at least ``threshold`` of the replicates at that and every
    larger grid value. Raises :class:`NoStablePoint` (carrying the table) when
    no grid value qualifies. Cells run in parallel when ``jobs > 1``; each
    cell draws from its own substream, so the table does not depend on
    ``jobs``.
    """
    grid = [int(t) for t in tps_grid]
    if not grid or grid != sorted(grid):
        raise ValueError("tps_grid must be nonempty and ascending")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    inner = FitBundle(bundle.search, bundle.quad, 1, bundle.aicc_basis)
    tasks = []
    for tps in grid:
        for gen, spec_g, theta_g in (("a", spec_a, theta_a), ("b", spec_b, theta_b)):
            for r in range(reps):
                tasks.append((spec_a, spec_b, spec_g, theta_g, tps, gen, r, inner, seed))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_css_cell, tasks))
    else:
        cells = [_css_cell(t) for t in tasks]
    rate_a, rate_b = [], []
    for tps in grid:
        here = [c for c in cells if c["tps"] == tps]
        rate_a.append(sum(c["preferred"] == "a" for c in here if c["generator"] == "a") / reps)
        rate_b.append(sum(c["preferred"] == "b" for c in here if c["generator"] == "b") / reps)
    css = None
    for k in range(len(grid) - 1, -1, -1):
        if rate_a[k] >= threshold and rate_b[k] >= threshold:
            css = grid[k]
        else:
            break
    table = CssTable(grid, rate_a, rate_b, reps, css, cells)
    if css is None:
        raise NoStablePoint("no grid sample size gives stable preferences", table)
    return table


SWEEP_PARAMS = ("rep_means", "rep_sds", "crit_means", "crit_sds")


@dataclass
class JumpSweep:
    """Values and refinement counts of one cell along a one-parameter sweep."""

    param: str
    index: int
    rule: int
    cell: tuple[int, int]
    rel_tol: float
    positions: list[float]
    values: list[float]
    refinements: list[tuple[int, int]]
    report: list[dict]

    @property
    def max_ratio(self) -> float:
        """Largest |discontinuity| / (rel_tol * |value|) over the reported jumps."""
        out = 0.0
        for j in self.report:
            scale = self.rel_tol * abs(j["value"])
            out = max(out, abs(j["discontinuity"]) / scale if scale > 0 else math.inf)
        return out

    def to_dict(self):
        return {"param": self.param, "index": self.index, "rule": self.rule,
                "cell": list(self.cell), "rel_tol": self.rel_tol, "n_points": len(self.positions),
                "n_jumps": len(self.report), "max_ratio": self.max_ratio}

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "value", "outer_refinements", "inner_refinements"])
        for x, v, (o, i) in zip(self.positions, self.values, self.refinements):
            w.writerow([repr(x), repr(v), o, i])
        return buf.getvalue()

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "previous_position", "refinements_before", "refinements_after",
                    "value", "discontinuity", "ratio_to_tol"])
        for j in self.report:
            scale = self.rel_tol * abs(j["value"])
            w.writerow([repr(j["position"]), repr(j["previous_position"]),
                        "/".join(map(str, j["refinements_before"])),
                        "/".join(map(str, j["refinements_after"])), repr(j["value"]),
                        repr(j["discontinuity"]),
                        repr(abs(j["discontinuity"]) / scale) if scale > 0 else "inf"])
        return buf.getvalue()


def jump_sweep(theta: ParamSet, param: str, index: int, grid, rule: int = 1,
               cell: tuple[int, int] = (1, 1), quad: QuadConfig | None = None) -> JumpSweep:
    """Evaluate one rule-matrix cell (1-based) while sweeping ``param[index]``.

    The refinement signature of a point is the pair (outer, inner) of
    refinement counts behind the cell; a change between neighbouring points
    is where the computed value can jump.
    """
    from .likelihood import rule_cells
    from .quadrature import JumpRecorder

    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}")
    quad = quad or QuadConfig(record_jumps=True)
    h, i = cell[0] - 1, cell[1] - 1
    rec = JumpRecorder(enabled=True)
    # rule probabilities do not enter a single-rule matrix
    spec = ModelSpec(theta.n_stimuli, theta.n_responses, VDR, (1, 2, 3))
    values, sigs, xs = [], [], []
    for x in np.asarray(grid, dtype=float):
        th = theta.copy()
        getattr(th, param)[index] = x
        bad = validate_params(th, spec)
        if bad:
            raise ValueError(f"sweep value {x} gives invalid parameters: {'; '.join(bad)}")
        rc = rule_cells(th, (rule,), quad)[rule]
        sig = (int(rc.outer_levels[h, i]), int(rc.inner_levels[h, i]))
        v = float(rc.probs[h, i])
        rec.record(x, sig, v)
        xs.append(float(x))
        values.append(v)
        sigs.append(sig)
    return JumpSweep(param, index, rule, (h + 1, i + 1), quad.rel_tol, xs, values, sigs,
                     rec.jump_report())
