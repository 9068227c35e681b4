"""Trial-level simulation of rating experiments.

Each trial draws one representation value and an independent sample of every
criterion, then applies a decision rule. Because the tally is built from the
verbal rules directly, :func:`mc_matrix` doubles as an oracle for the
quadrature matrices in :mod:`vdrating.likelihood`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .likelihood import log_likelihood, predict
from .model import MIN_MEAN_GAP, CountMatrix, ModelSpec, ParamSet, validate_params
from .quadrature import QuadConfig
from .rng import substream

SD_WALK_FLOOR = 1e-3


def apply_rule(rule: int, s: float, c) -> int:
    """Response (1..M) for one trial; ``c`` need not be sorted."""
    c = np.asarray(c, dtype=float)
    return int(apply_rule_batch(rule, np.array([s]), c[None, :])[0])


def apply_rule_batch(rule: int, s: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Vectorised :func:`apply_rule`: ``s`` has shape (T,), ``c`` shape (T, M-1)."""
    s = np.asarray(s, dtype=float)[:, None]
    m = c.shape[1] + 1
    if rule == 1:
        d = np.where(c > s, c - s, np.inf)
        k = np.argmin(d, axis=1)
        return np.where(np.isfinite(d[np.arange(len(k)), k]), k + 1, m)
    if rule == 2:
        d = np.where(c < s, s - c, np.inf)
        k = np.argmin(d, axis=1)
        return np.where(np.isfinite(d[np.arange(len(k)), k]), k + 2, 1)
    if rule == 3:
        # argmin returns the first minimum, so ties go to the lower index
        k = np.argmin(np.abs(c - s), axis=1)
        return np.where(s[:, 0] < c[np.arange(len(k)), k], k + 1, k + 2)
    raise ValueError(f"rule must be 1, 2 or 3, got {rule}")


def _draw(mean, sd, size, rng):
    if sd == 0:
        return np.full(size, float(mean))
    return rng.normal(mean, sd, size)


def simulate_row(theta: ParamSet, h: int, rule: int, trials: int,
                 rng: np.random.Generator, chunk: int = 200_000) -> np.ndarray:
    """Response counts for ``trials`` presentations of stimulus ``h`` under one rule."""
    m1 = len(theta.crit_means)
    counts = np.zeros(m1 + 1, dtype=np.int64)
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        s = _draw(theta.rep_means[h], theta.rep_sds[h], n, rng)
        c = np.empty((n, m1))
        for j in range(m1):
            c[:, j] = _draw(theta.crit_means[j], theta.crit_sds[j], n, rng)
        r = apply_rule_batch(rule, s, c)
        counts += np.bincount(r - 1, minlength=m1 + 1)
        done += n
    return counts


def mc_matrix(theta: ParamSet, rule: int, trials: int, seed: int) -> np.ndarray:
    """Empirical response proportions from ``trials`` verbal-rule trials per stimulus."""
    rows = [simulate_row(theta, h, rule, trials, substream(seed, "simulator", "oracle", rule, h))
            for h in range(theta.n_stimuli)]
    return np.array(rows, dtype=float) / trials


@dataclass
class SimConfig:
    spec: ModelSpec
    theta: ParamSet
    tps: int
    nsim: int = 1
    seed: int = 0
    walk_step: float = 0.1
    quad: QuadConfig = field(default_factory=QuadConfig)

    def __post_init__(self):
        if self.tps < 1:
            raise ValueError("tps must be >= 1")
        if self.nsim < 1:
            raise ValueError("nsim must be >= 1")
        bad = validate_params(self.theta, self.spec)
        if bad:
            raise ValueError("invalid generating parameters: " + "; ".join(bad))


def simulate_counts(theta: ParamSet, spec: ModelSpec, tps: int, seed: int,
                    index: int = 0) -> CountMatrix:
    """One pseudo-data matrix: per-rule tallies mixed by rule probability and rounded."""
    n, m = spec.n_stimuli, spec.n_responses
    total = np.zeros((n, m))
    for rule in (1, 2, 3):
        p = theta.rule_probs[rule - 1]
        if p <= 0:
            continue
        tally = np.array([simulate_row(theta, h, rule, tps,
                                       substream(seed, "simulator", "trials", index, rule, h))
                          for h in range(n)])
        total += p * tally
    # np.rint rounds half to even
    return CountMatrix(np.rint(total).astype(np.int64), tps)


def simulate_matrix(cfg: SimConfig) -> CountMatrix:
    return simulate_counts(cfg.theta, cfg.spec, cfg.tps, cfg.seed)


def _scale(theta: ParamSet) -> float:
    sds = np.concatenate([theta.rep_sds, theta.crit_sds])
    sds = sds[sds > 0]
    return float(np.mean(sds)) if len(sds) else 1.0


def _sorted_spread(x: np.ndarray) -> np.ndarray:
    x = np.sort(x)
    for k in range(1, len(x)):
        if x[k] - x[k - 1] < MIN_MEAN_GAP:
            x[k] = x[k - 1] + 2 * MIN_MEAN_GAP
    return x


def repair(theta: ParamSet, spec: ModelSpec, sd_floor: float) -> ParamSet:
    """Sort means, make SDs positive (or structurally zero), renormalise rule probs."""
    rs = np.abs(theta.rep_sds)
    cs = np.abs(theta.crit_sds)
    if spec.is_csdt:
        rs = np.zeros_like(rs)
    else:
        rs = np.maximum(rs, sd_floor)
    if spec.is_sdt:
        cs = np.zeros_like(cs)
    else:
        cs = np.maximum(cs, sd_floor)
    if spec.equal_variance:
        if spec.is_sdt:
            rs = np.full_like(rs, rs[0])
        else:
            cs = np.full_like(cs, cs[0])
    p = np.zeros(3)
    idx = [r - 1 for r in spec.rule_set]
    p[idx] = np.abs(theta.rule_probs[idx])
    if p.sum() == 0:
        p[idx] = 1.0
    p /= p.sum()
    # make the sum exact so validation at 1e-12 never trips on round-off
    p[idx[-1]] = 1.0 - p[idx[:-1]].sum()
    return ParamSet(_sorted_spread(theta.rep_means), rs, _sorted_spread(theta.crit_means), cs, p)


def perturb_params(theta: ParamSet, spec: ModelSpec, walk_step: float,
                   rng: np.random.Generator) -> ParamSet:
    """One step of the generating-parameter random walk.

    Every free parameter receives Gaussian noise; means and SDs are scaled by
    the mean nonzero SD of ``theta``, rule probabilities by 1. The result is
    repaired to satisfy all constraints.
    """
    if walk_step == 0:
        return theta.copy()
    sc = walk_step * _scale(theta)
    n, m1 = len(theta.rep_means), len(theta.crit_means)
    rm = theta.rep_means + rng.normal(0, sc, n)
    cm = theta.crit_means + rng.normal(0, sc, m1)
    rs = theta.rep_sds.copy()
    cs = theta.crit_sds.copy()
    if spec.equal_variance and spec.is_sdt:
        rs = rs + rng.normal(0, sc)
    elif not spec.is_csdt:
        rs = rs + rng.normal(0, sc, n)
    if spec.equal_variance and spec.is_csdt:
        cs = cs + rng.normal(0, sc)
    elif not spec.is_sdt:
        cs = cs + rng.normal(0, sc, m1)
    p = theta.rule_probs + rng.normal(0, walk_step, 3)
    return repair(ParamSet(rm, rs, cm, cs, p), spec, SD_WALK_FLOOR)


@dataclass
class BatchItem:
    theta: ParamSet
    data: CountMatrix
    log_l_g: float


def run_batch(cfg: SimConfig) -> list[BatchItem]:
    out = []
    theta = cfg.theta.copy()
    for i in range(cfg.nsim):
        if i > 0:
            theta = perturb_params(theta, cfg.spec, cfg.walk_step,
                                   substream(cfg.seed, "simulator", "walk", i))
        data = simulate_counts(theta, cfg.spec, cfg.tps, cfg.seed, index=i)
        ll = log_likelihood(predict(theta, cfg.spec, cfg.quad), data)
        out.append(BatchItem(theta, data, ll))
    return out


def simulate_trials(theta: ParamSet, spec: ModelSpec, tps: int, seed: int):
    """Trial sequence in random presentation order, rule drawn per trial.

    Returns ``(stimuli, responses)`` as 1-based integer arrays.
    """
    rng = substream(seed, "simulator", "sequence")
    n, m1 = spec.n_stimuli, spec.n_responses - 1
    stim = rng.permutation(np.repeat(np.arange(n), tps))
    T = len(stim)
    s = np.where(theta.rep_sds[stim] > 0,
                 theta.rep_means[stim] + theta.rep_sds[stim] * rng.standard_normal(T),
                 theta.rep_means[stim])
    c = theta.crit_means + theta.crit_sds * rng.standard_normal((T, m1))
    rules = rng.choice(3, size=T, p=theta.rule_probs) + 1
    resp = np.empty(T, dtype=np.int64)
    for r in (1, 2, 3):
        sel = rules == r
        if sel.any():
            resp[sel] = apply_rule_batch(r, s[sel], c[sel])
    return stim + 1, resp
