"""Annealed Metropolis search for maximum-likelihood parameters.

The chain proposes a change to one coordinate of one parameter block
(representation means, representation SDs, criterion means, criterion SDs,
rule probabilities), repairs the candidate to the model constraints, and
accepts with probability ``min(1, exp(dlogL / T))``. Temperature falls
geometrically from ``t_initial`` to ``t_final`` over ``n_steps``; the proposal
scale shrinks with ``sqrt(T)``. The best state ever evaluated is returned.

Per-rule probability matrices are cached for the current state, so moves of
the rule probabilities cost no quadrature at all.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InfeasibleSpec, QuadratureFailure
from .gof import aicc, gof, n_observations
from .likelihood import log_likelihood, mixture_matrix, rule_matrices, sdt_matrix
from .model import (CountMatrix, FitResult, ModelSpec, ParamSet, check_fit_feasible,
                    count_parameters, validate_params)
from .quadrature import QuadConfig
from .rng import substream
from .simulator import repair

log = logging.getLogger(__name__)

SD_FIT_FLOOR = 1e-6
# per-block scale adaptation: window length, target band, and clamp
ADAPT_WINDOW = 40
ADAPT_LO, ADAPT_HI = 0.15, 0.45
ADAPT_MIN, ADAPT_MAX = 0.02, 20.0


@dataclass(frozen=True)
class SearchConfig:
    n_steps: int = 20000
    t_initial: float = 2.0
    t_final: float = 0.01
    proposal_scale: float = 0.05
    n_starts: int = 4
    seed: int = 0
    adapt: bool = True

    def __post_init__(self):
        if not self.t_initial > self.t_final > 0:
            raise ValueError("need t_initial > t_final > 0")
        if self.n_steps < 100:
            raise ValueError("n_steps must be >= 100")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    @property
    def cooling(self) -> float:
        """Per-step geometric factor taking t_initial to t_final in n_steps."""
        return (self.t_final / self.t_initial) ** (1.0 / (self.n_steps - 1))

    def to_dict(self):
        return asdict(self)


def percent_inconsistency(log_ls) -> float:
    """Spread of repeated-fit log-likelihoods as a percentage of their midrange."""
    x = np.asarray(log_ls, dtype=float)
    if len(x) < 2 or not np.all(np.isfinite(x)):
        raise ValueError("need at least two finite log-likelihoods")
    hi, lo = float(x.max()), float(x.min())
    denom = (hi + lo) / -2.0
    if denom == 0:
        raise ZeroDivisionError("percent_inconsistency undefined when max + min = 0")
    return 100.0 * (hi - lo) / denom


class _Evaluator:
    """Log-likelihood of a state with per-rule matrix caching."""

    def __init__(self, data: CountMatrix, spec: ModelSpec, quad: QuadConfig):
        self.counts = data.counts
        self.spec = spec
        self.quad = quad
        self.n_evals = 0
        self.n_failures = 0

    def matrices(self, theta: ParamSet):
        """Per-rule matrices (dict) or None when quadrature fails."""
        if self.spec.is_sdt:
            return {1: sdt_matrix(theta)}
        self.n_evals += 1
        try:
            return rule_matrices(theta, self.spec.rule_set, self.quad)
        except QuadratureFailure:
            self.n_failures += 1
            return None

    def loglik(self, theta: ParamSet, mats) -> float:
        if mats is None:
            return -math.inf
        if self.spec.is_sdt:
            pred = mats[1]
        else:
            pred = mixture_matrix({r: mats[r] for r in self.spec.rule_set}, theta.rule_probs)
        return log_likelihood(pred, self.counts)


def _coordinates(spec: ModelSpec):
    """(block, index) pairs of free coordinates; index None means 'all tied'."""
    n, m1 = spec.n_stimuli, spec.n_responses - 1
    out = [("rep_means", h) for h in range(n)]
    if spec.klass == "SDT-EV":
        out.append(("rep_sds", None))
    elif not spec.is_csdt:
        out += [("rep_sds", h) for h in range(n)]
    out += [("crit_means", j) for j in range(m1)]
    if spec.klass == "CSDT-EV":
        out.append(("crit_sds", None))
    elif not spec.is_sdt:
        out += [("crit_sds", j) for j in range(m1)]
    if len(spec.rule_set) > 1:
        # one coordinate per free simplex direction
        out += [("rule_probs", k) for k in range(len(spec.rule_set) - 1)]
    return out


def _unit(theta: ParamSet) -> float:
    sds = np.concatenate([theta.rep_sds, theta.crit_sds])
    sds = sds[sds > 0]
    return float(np.mean(sds)) if len(sds) else 1.0


def _propose(theta: ParamSet, spec: ModelSpec, coord, step: float, rng) -> ParamSet:
    block, idx = coord
    new = theta.copy()
    if block == "rule_probs":
        rules = [r - 1 for r in spec.rule_set]
        a, b = rng.choice(rules, size=2, replace=False)
        d = rng.normal(0.0, step)
        p = new.rule_probs
        p[a] += d
        p[b] -= d
    else:
        arr = getattr(new, block)
        d = rng.normal(0.0, step * _unit(theta))
        if idx is None:
            arr += d
        else:
            arr[idx] += d
    return repair(new, spec, SD_FIT_FLOOR)


def fit(data: CountMatrix, spec: ModelSpec, start: ParamSet, cfg: SearchConfig,
        quad: QuadConfig | None = None, rng: np.random.Generator | None = None,
        progress=None) -> tuple[ParamSet, float, dict]:
    """One annealed chain from ``start``.

    Returns ``(best_theta, best_log_l, stats)``. ``progress``, when given, is
    called as ``progress(step, T, current_log_l, best_log_l)`` every 10% of the
    run.
    """
    if not check_fit_feasible(spec):
        raise InfeasibleSpec(f"{spec.label} has {count_parameters(spec)} parameters but only "
                             f"{spec.n_stimuli * (spec.n_responses - 1)} data degrees of freedom")
    bad = validate_params(start, spec)
    if bad:
        raise ValueError("invalid start: " + "; ".join(bad))
    quad = quad or QuadConfig()
    rng = rng if rng is not None else substream(cfg.seed, "optimizer", "chain", 0)
    ev = _Evaluator(data, spec, quad)

    cur = start.copy()
    cur_m = ev.matrices(cur)
    cur_l = ev.loglik(cur, cur_m)
    best, best_l = cur.copy(), cur_l

    coords = _coordinates(spec)
    blocks = sorted({c[0] for c in coords})
    factor = {b: 1.0 for b in blocks}
    tried = {b: 0 for b in blocks}
    taken = {b: 0 for b in blocks}
    cooling = cfg.cooling
    T = cfg.t_initial
    report_every = max(1, cfg.n_steps // 10)
    n_accept = 0

    for step in range(cfg.n_steps):
        coord = coords[rng.integers(len(coords))]
        block = coord[0]
        scale = cfg.proposal_scale * factor[block] * math.sqrt(T / cfg.t_initial)
        cand = _propose(cur, spec, coord, scale, rng)
        if block == "rule_probs":
            cand_m = cur_m
        else:
            cand_m = ev.matrices(cand)
        cand_l = ev.loglik(cand, cand_m)
        d = cand_l - cur_l
        u = rng.random()
        if cand_l > -math.inf and (d >= 0 or u < math.exp(d / T)):
            cur, cur_m, cur_l = cand, cand_m, cand_l
            taken[block] += 1
            n_accept += 1
            if cur_l > best_l:
                best, best_l = cur.copy(), cur_l
        tried[block] += 1
        if cfg.adapt and tried[block] == ADAPT_WINDOW:
            rate = taken[block] / ADAPT_WINDOW
            if rate > ADAPT_HI:
                factor[block] = min(factor[block] * 1.5, ADAPT_MAX)
            elif rate < ADAPT_LO:
                factor[block] = max(factor[block] / 1.5, ADAPT_MIN)
            tried[block] = taken[block] = 0
        if progress is not None and (step + 1) % report_every == 0:
            progress(step + 1, T, cur_l, best_l)
        T *= cooling

    stats = {"n_evals": ev.n_evals, "n_failures": ev.n_failures,
             "acceptance": n_accept / cfg.n_steps}
    return best, best_l, stats


def default_starts(spec: ModelSpec, data: CountMatrix, n: int,
                   rng: np.random.Generator) -> list[ParamSet]:
    """Heuristic starting points derived from the pooled response distribution.

    Criterion means sit at normal quantiles of the pooled cumulative response
    proportions, each stimulus mean at the proportion-weighted centre of the
    response regions, and SDs at the mean gap between criteria. Rule
    probabilities cycle through the centroid and simplex corners of the rule
    set. Each setting first appears with unjittered means; later repeats get a
    small jitter so no two starts coincide.
    """
    if n < 1:
        raise ValueError("need at least one start")
    counts = np.asarray(data.counts, dtype=float)
    nn, m = counts.shape
    if (nn, m) != (spec.n_stimuli, spec.n_responses):
        raise ValueError("data shape does not match spec")
    pooled = counts.sum(axis=0) + 0.5
    cum = np.cumsum(pooled)[:-1] / pooled.sum()
    crit = ndtri(np.clip(cum, 0.01, 0.99))
    for j in range(1, len(crit)):
        crit[j] = max(crit[j], crit[j - 1] + 0.05)
    gap = float(np.mean(np.diff(crit))) if len(crit) > 1 else 1.0
    edges = np.concatenate(([crit[0] - gap], crit, [crit[-1] + gap]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    props = (counts + 0.01) / (counts + 0.01).sum(axis=1, keepdims=True)
    rep = props @ mids

    rules = [r - 1 for r in spec.rule_set]
    prob_starts = []
    for r in rules:
        p = np.zeros(3)
        p[r] = 1.0
        prob_starts.append(p)
    if len(rules) > 1:
        # the centroid goes first so a single start favours no rule
        p = np.zeros(3)
        p[rules] = 1.0 / len(rules)
        prob_starts.insert(0, p)

    out = []
    for k in range(n):
        # one unjittered start per rule-probability setting; repeats are jittered
        jit = 0.0 if k < len(prob_starts) else 0.1 * gap
        rm = rep + rng.normal(0.0, jit, nn) if jit else rep.copy()
        cm = crit + rng.normal(0.0, jit, m - 1) if jit else crit.copy()
        sd = gap
        rs = np.full(nn, 0.0 if spec.is_csdt else sd)
        cs = np.full(m - 1, 0.0 if spec.is_sdt else sd)
        if not spec.is_sdt and not spec.is_csdt:
            rs *= math.sqrt(0.5)
            cs *= math.sqrt(0.5)
        p = prob_starts[k % len(prob_starts)]
        out.append(repair(ParamSet(rm, rs, cm, cs, p), spec, SD_FIT_FLOOR))
    return out


def _run_start(args):
    data, spec, start, cfg, quad, k, verbose = args
    rng = substream(cfg.seed, "optimizer", "chain", k)
    progress = None
    if verbose:
        def progress(step, T, cur, best):
            log.info("start %d step %d T=%.4g logL=%.4f best=%.4f", k, step, T, cur, best)
    theta, ll, stats = fit(data, spec, start, cfg, quad, rng=rng, progress=progress)
    return theta, ll, stats


def multi_start_fit(data: CountMatrix, spec: ModelSpec, starts: list[ParamSet] | None,
                    cfg: SearchConfig, quad: QuadConfig | None = None, jobs: int = 1,
                    aicc_basis: str = "trials", verbose: bool = False) -> FitResult:
    """Run one chain per start and keep the highest log-likelihood.

    Each chain draws from its own substream, so the result does not depend on
    ``jobs``.
    """
    quad = quad or QuadConfig()
    if starts is None:
        starts = default_starts(spec, data, cfg.n_starts,
                                substream(cfg.seed, "optimizer", "starts"))
    if len(starts) < 1:
        raise ValueError("need at least one start")
    tasks = [(data, spec, s, cfg, quad, k, verbose) for k, s in enumerate(starts)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_start, tasks))
    else:
        runs = [_run_start(t) for t in tasks]
    lls = [r[1] for r in runs]
    # first of the maxima, so ties resolve the same way every time
    k_best = int(np.argmax(lls))
    theta, ll = runs[k_best][0], lls[k_best]
    pred = predict_for(theta, spec, quad)
    n_obs = n_observations(data, aicc_basis)
    u = count_parameters(spec)
    finite = [v for v in lls if math.isfinite(v)]
    pct = percent_inconsistency(finite) if len(finite) >= 2 else 0.0
    return FitResult(theta=theta, log_l=ll, aicc=aicc(ll, u, n_obs),
                     gof=gof(data.proportions(), pred), n_starts=len(starts), pct_ic=pct,
                     seed=cfg.seed, spec=spec, start_log_ls=lls, data_digest=data.digest(),
                     n_obs=n_obs, n_failures=sum(r[2]["n_failures"] for r in runs))


def predict_for(theta: ParamSet, spec: ModelSpec, quad: QuadConfig) -> np.ndarray:
    from .likelihood import predict

    return predict(theta, spec, quad)
