"""Conditional response-probability matrices and the multinomial log-likelihood.

Rows are stimuli, columns are response categories 1..M. Under each decision
rule a cell is the probability that the criterion sample nearest to the
representation (in the rule's sense) is the one bounding that category. The
default column of each rule (M for Rule 1, 1 for Rule 2, M for Rule 3) is the
complement of the others, which also enforces row normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errors import QuadratureFailure
from .kernels import R1_ABOVE, R2_BELOW, R3_ABOVE, R3_BELOW
from .model import ModelSpec, ParamSet
from .quadrature import QuadConfig

LOG_FLOOR = 1e-12

_RULE_KINDS = {1: (R1_ABOVE,), 2: (R2_BELOW,), 3: (R3_ABOVE, R3_BELOW)}


@dataclass
class RuleCells:
    """One rule's matrix with per-cell quadrature diagnostics.

    ``outer_levels`` and ``inner_levels`` are the refinement counts of the
    terms that make up each cell; the default column carries zeros.
    """

    probs: np.ndarray
    est_error: np.ndarray
    outer_levels: np.ndarray
    inner_levels: np.ndarray
    converged: np.ndarray


def _assemble(rule, T, m1):
    """Place term arrays (N, m1) into an (N, M) matrix; default column by complement."""
    n = T[0].shape[0]
    out = np.zeros((n, m1 + 1))
    if rule == 1:
        out[:, :m1] = T[0]
        out[:, m1] = 1.0 - out[:, :m1].sum(axis=1)
    elif rule == 2:
        out[:, 1:] = T[0]
        out[:, 0] = 1.0 - out[:, 1:].sum(axis=1)
    else:
        out[:, :m1] = T[0]
        out[:, 1:m1] += T[1][:, :m1 - 1]
        out[:, m1] = 1.0 - out[:, :m1].sum(axis=1)
    return out


def rule_cells(theta: ParamSet, rules=(1, 2, 3), cfg: QuadConfig | None = None,
               check: bool = True) -> dict[int, RuleCells]:
    """Quadrature matrices for several rules from one kernel pass.

    All requested rules share abscissas, so asking for three rules costs far
    less than three separate calls.
    """
    cfg = cfg or QuadConfig()
    rules = tuple(sorted(set(int(r) for r in rules)))
    kinds = []
    for r in rules:
        kinds.extend(_RULE_KINDS[r])
    if np.any(theta.crit_sds <= 0):
        raise ValueError("quadrature matrices need positive criterion SDs; use sdt_matrix")
    if np.any(theta.rep_sds < 0):
        raise ValueError("representation SDs must be non-negative")
    m1 = len(theta.crit_means)
    vals, errs, olev, ilev, oks = kernels.terms(
        theta.rep_means, theta.rep_sds, theta.crit_means, theta.crit_sds, tuple(kinds),
        cfg.rel_tol, cfg.abs_tol, cfg.min_refinements, cfg.max_refinements,
        cfg.tail_cutoff_sigmas)
    out = {}
    k = 0
    for r in rules:
        nk = len(_RULE_KINDS[r])
        sl = slice(k, k + nk)
        k += nk
        pieces = [vals[:, q, :] for q in range(sl.start, sl.stop)]
        probs = np.clip(_assemble(r, pieces, m1), 0.0, 1.0)
        e = _assemble(r, [errs[:, q, :] for q in range(sl.start, sl.stop)], m1)
        e[:, 0 if r == 2 else m1] = np.abs(errs[:, sl, :]).sum(axis=(1, 2))
        ol = _assemble(r, [olev[:, q, :] for q in range(sl.start, sl.stop)], m1)
        il = _assemble(r, [ilev[:, q, :] for q in range(sl.start, sl.stop)], m1)
        for a in (ol, il):
            a[:, 0 if r == 2 else m1] = 0
        conv = np.repeat(oks[:, sl, :].all(axis=(1, 2))[:, None], m1 + 1, axis=1)
        out[r] = RuleCells(probs, e, ol.astype(np.int64), il.astype(np.int64), conv)
        if check and not conv.all():
            bad = np.argwhere(~conv)[0]
            raise QuadratureFailure(f"rule {r} cell {tuple(int(b) + 1 for b in bad)} did not "
                                    f"converge within {cfg.max_refinements} refinements")
    return out


def rule_matrices(theta: ParamSet, rules=(1, 2, 3), cfg: QuadConfig | None = None
                  ) -> dict[int, np.ndarray]:
    return {r: c.probs for r, c in rule_cells(theta, rules, cfg).items()}


def rule1_matrix(theta: ParamSet, spec: ModelSpec | None = None,
                 cfg: QuadConfig | None = None) -> np.ndarray:
    """Nearest criterion above the representation; default response M."""
    return rule_matrices(theta, (1,), cfg)[1]


def rule2_matrix(theta: ParamSet, spec: ModelSpec | None = None,
                 cfg: QuadConfig | None = None) -> np.ndarray:
    """Nearest criterion below the representation; default response 1."""
    return rule_matrices(theta, (2,), cfg)[2]


def rule3_matrix(theta: ParamSet, spec: ModelSpec | None = None,
                 cfg: QuadConfig | None = None) -> np.ndarray:
    """Nearest criterion by absolute distance."""
    return rule_matrices(theta, (3,), cfg)[3]


def mixture_matrix(matrices, rule_probs) -> np.ndarray:
    """Cell-wise convex combination ``sum_k p_k P_k``.

    ``matrices`` is either a dict keyed by rule number or a sequence aligned
    with ``rule_probs``; rules with zero probability may be omitted.
    """
    p = np.asarray(rule_probs, dtype=float)
    if isinstance(matrices, dict):
        items = [(p[r - 1], m) for r, m in matrices.items()]
        missing = [r for r in (1, 2, 3) if p[r - 1] > 0 and r not in matrices]
        if missing:
            raise ValueError(f"no matrix supplied for rule(s) {missing}")
    else:
        if len(matrices) != len(p):
            raise ValueError("need one matrix per rule probability")
        items = list(zip(p, matrices))
    shapes = {np.shape(m) for _, m in items}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch among rule matrices: {shapes}")
    out = np.zeros(shapes.pop())
    for w, m in items:
        if w != 0:
            out += w * np.asarray(m)
    return out


def sdt_matrix(theta: ParamSet, spec: ModelSpec | None = None) -> np.ndarray:
    """Closed form with fixed criteria: differences of Gaussian CDFs."""
    edges = np.concatenate(([-np.inf], theta.crit_means, [np.inf]))
    z = (edges[None, :] - theta.rep_means[:, None]) / theta.rep_sds[:, None]
    return np.diff(ndtr(z), axis=1)


def csdt_matrix(theta: ParamSet, spec: ModelSpec, cfg: QuadConfig | None = None) -> np.ndarray:
    """Fixed representations: the kernel drops the outer integral for zero SDs."""
    if np.any(theta.rep_sds != 0):
        raise ValueError("csdt_matrix needs structurally zero representation SDs")
    return _vdr(theta, spec, cfg)


def _vdr(theta, spec, cfg):
    rules = [r for r in spec.rule_set if theta.rule_probs[r - 1] > 0]
    mats = rule_matrices(theta, rules, cfg)
    return mixture_matrix(mats, theta.rule_probs)


def predict(theta: ParamSet, spec: ModelSpec, cfg: QuadConfig | None = None) -> np.ndarray:
    if spec.is_sdt:
        return sdt_matrix(theta, spec)
    if spec.is_csdt:
        return csdt_matrix(theta, spec, cfg)
    return _vdr(theta, spec, cfg)


def log_likelihood(pred: np.ndarray, data) -> float:
    """Multinomial log-likelihood without the combinatorial constant."""
    counts = getattr(data, "counts", data)
    counts = np.asarray(counts, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if counts.shape != pred.shape:
        raise ValueError(f"shape mismatch: data {counts.shape} vs prediction {pred.shape}")
    logp = np.log(np.maximum(pred, LOG_FLOOR))
    return float(np.sum(counts * logp))
