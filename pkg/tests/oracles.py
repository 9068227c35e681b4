"""Independent reference implementations used only by the tests.

Nothing here shares code with the package kernels: the Monte-Carlo oracle
applies the decision rules by brute force over all criteria, and the
quadrature oracle integrates the defining double integrals with scipy.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, stats

from vdrating.model import ParamSet


def random_theta(rng: np.random.Generator, n: int, m: int, rule_probs=(1.0, 0.0, 0.0)
                 ) -> ParamSet:
    """A valid VDR parameter set with moderate spread and positive SDs."""
    rep = np.sort(rng.normal(0.0, 1.5, n))
    crit = np.sort(rng.normal(0.0, 1.5, m - 1))
    # keep means apart so the set is valid after sorting
    rep += 1e-3 * np.arange(n)
    crit += 1e-3 * np.arange(m - 1)
    return ParamSet(rep, rng.uniform(0.3, 1.5, n), crit, rng.uniform(0.2, 1.5, m - 1),
                    np.asarray(rule_probs, dtype=float))


def verbal_response(rule: int, s: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Responses (1-based) for a batch of representations ``s`` and criteria rows ``c``.

    Rule 1: smallest positive ``c_j - s`` gives response ``j``; none gives M.
    Rule 2: smallest positive ``s - c_j`` gives response ``j + 1``; none gives 1.
    Rule 3: smallest ``|s - c_j|``; response ``j`` if ``s < c_j`` else ``j + 1``.
    Criteria are 1-based in these statements; ties go to the lower index.
    """
    m = c.shape[1] + 1
    d = c - s[:, None]
    if rule == 1:
        dd = np.where(d > 0, d, np.inf)
        j = np.argmin(dd, axis=1)
        return np.where(np.isfinite(dd[np.arange(len(s)), j]), j + 1, m)
    if rule == 2:
        dd = np.where(d < 0, -d, np.inf)
        j = np.argmin(dd, axis=1)
        return np.where(np.isfinite(dd[np.arange(len(s)), j]), j + 2, 1)
    j = np.argmin(np.abs(d), axis=1)
    below = s < c[np.arange(len(s)), j]
    return np.where(below, j + 1, j + 2)


def mc_oracle(theta: ParamSet, rule: int, trials: int, seed: int, chunk: int = 250_000
              ) -> np.ndarray:
    """Monte-Carlo response proportions under one rule."""
    rng = np.random.default_rng(seed)
    n, m1 = len(theta.rep_means), len(theta.crit_means)
    out = np.zeros((n, m1 + 1))
    for h in range(n):
        done = 0
        while done < trials:
            k = min(chunk, trials - done)
            s = theta.rep_means[h] + theta.rep_sds[h] * rng.standard_normal(k)
            c = theta.crit_means + theta.crit_sds * rng.standard_normal((k, m1))
            r = verbal_response(rule, s, c)
            out[h] += np.bincount(r - 1, minlength=m1 + 1)
            done += k
    return out / trials


def _others_factor(rule_kind: str, s, c, cm, cs, others):
    """Probability that no other criterion is nearer, for one (s, c)."""
    f = 1.0
    for j in others:
        if rule_kind == "above":  # nothing strictly inside (s, c)
            f *= stats.norm.sf(c, cm[j], cs[j]) + stats.norm.cdf(s, cm[j], cs[j])
        elif rule_kind == "below":  # nothing inside (c, s)
            f *= stats.norm.cdf(c, cm[j], cs[j]) + stats.norm.sf(s, cm[j], cs[j])
        elif rule_kind == "abs_above":  # nothing inside (2s - c, c)
            f *= stats.norm.sf(c, cm[j], cs[j]) + stats.norm.cdf(2 * s - c, cm[j], cs[j])
        else:  # abs_below: nothing inside (c, 2s - c)
            f *= stats.norm.cdf(c, cm[j], cs[j]) + stats.norm.sf(2 * s - c, cm[j], cs[j])
    return f


def dblquad_cell(theta: ParamSet, rule: int, h: int, i: int, eps: float = 1e-11) -> float:
    """Cell (h, i), 0-based, of a rule matrix by scipy double integration.

    Default cells (rule 1 last column, rule 2 first column, rule 3 last
    column) are not handled; they are complements of the others.
    """
    rm, rs, cm, cs = theta.rep_means, theta.rep_sds, theta.crit_means, theta.crit_sds
    m1 = len(cm)
    lo = min(rm.min() - 10 * rs.max(), cm.min() - 10 * cs.max())
    hi = max(rm.max() + 10 * rs.max(), cm.max() + 10 * cs.max())

    def term(kind, j):
        others = [q for q in range(m1) if q != j]

        def f(c, s):
            return (stats.norm.pdf(s, rm[h], rs[h]) * stats.norm.pdf(c, cm[j], cs[j])
                    * _others_factor(kind, s, c, cm, cs, others))
        if kind in ("above", "abs_above"):
            return integrate.dblquad(f, lo, hi, lambda s: s, lambda s: hi, epsabs=eps)[0]
        return integrate.dblquad(f, lo, hi, lambda s: lo, lambda s: s, epsabs=eps)[0]

    if rule == 1:
        return term("above", i)
    if rule == 2:
        return term("below", i - 1)
    v = term("abs_above", i) if i < m1 else 0.0
    if i >= 1:
        v += term("abs_below", i - 1)
    return v


def se_binomial(p: np.ndarray, trials: int) -> np.ndarray:
    return np.sqrt(np.maximum(p * (1.0 - p), 0.0) / trials)


def verbal_response_scalar(rule: int, s: float, c) -> int:
    """Plain-loop version of :func:`verbal_response` for one trial."""
    m = len(c) + 1
    best, best_j = float("inf"), None
    for j, cj in enumerate(c, start=1):
        if rule == 1:
            d = cj - s if cj > s else None
        elif rule == 2:
            d = s - cj if cj < s else None
        else:
            d = abs(s - cj)
        if d is not None and d < best:
            best, best_j = d, j
    if best_j is None:
        return m if rule == 1 else 1
    if rule == 1:
        return best_j
    if rule == 2:
        return best_j + 1
    return best_j if s < c[best_j - 1] else best_j + 1
