"""Goodness-of-fit measures, information criteria and pairwise model comparison."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import DataMismatch, SampleTooSmall
from .model import FitResult

KL_FLOOR = 1e-12


@dataclass
class GofBundle:
    r2: float
    rmsd: float
    b0: float
    b1: float
    cl_b0: tuple[float, float]
    cl_b1: tuple[float, float]
    kl: float

    def to_dict(self):
        d = asdict(self)
        d["cl_b0"] = list(self.cl_b0)
        d["cl_b1"] = list(self.cl_b1)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["r2"]), float(d["rmsd"]), float(d["b0"]), float(d["b1"]),
                   tuple(d["cl_b0"]), tuple(d["cl_b1"]), float(d["kl"]))


def kl_divergence(observed, predicted) -> float:
    """Relative entropy in bits, summed over cells with observed mass."""
    o = np.asarray(observed, dtype=float)
    p = np.maximum(np.asarray(predicted, dtype=float), KL_FLOOR)
    if o.shape != p.shape:
        raise ValueError(f"shape mismatch {o.shape} vs {p.shape}")
    m = o > 0
    return float(np.sum(o[m] * np.log2(o[m] / p[m])))


def gof(observed, predicted) -> GofBundle:
    """OLS of observed proportions on predicted probabilities over all cells.

    Confidence limits are 95% two-sided with ``t`` at ``N*M - 2`` degrees of
    freedom.
    """
    y = np.asarray(observed, dtype=float).ravel()
    x = np.asarray(predicted, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("observed and predicted differ in shape")
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate: predicted probabilities have zero variance")
    b1 = float(np.sum((x - xm) * (y - ym)) / sxx)
    b0 = float(ym - b1 * xm)
    resid = y - (b0 + b1 * x)
    sse = float(np.sum(resid ** 2))
    syy = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - sse / syy if syy > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    df = n - 2
    if df > 0:
        s2 = sse / df
        se_b1 = math.sqrt(s2 / sxx)
        se_b0 = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
        tcrit = float(stats.t.ppf(0.975, df))
    else:
        se_b0 = se_b1 = tcrit = 0.0
    rmsd = float(np.sqrt(np.mean((y - x) ** 2)))
    return GofBundle(r2=float(r2), rmsd=rmsd, b0=b0, b1=b1,
                     cl_b0=(b0 - tcrit * se_b0, b0 + tcrit * se_b0),
                     cl_b1=(b1 - tcrit * se_b1, b1 + tcrit * se_b1),
                     kl=kl_divergence(observed, predicted))


def aicc(log_l: float, u: int, n_obs: int) -> float:
    """Small-sample corrected AIC; ``n_obs`` is usually the total trial count."""
    if n_obs <= u + 1:
        raise SampleTooSmall(f"AICc needs n_obs > u + 1 (n_obs={n_obs}, u={u})")
    return -2.0 * log_l + 2.0 * u + 2.0 * u * (u + 1) / (n_obs - u - 1)


def n_observations(data, basis: str = "trials") -> int:
    """Sample size for AICc: total trials (default) or number of cells."""
    counts = np.asarray(getattr(data, "counts", data))
    if basis == "trials":
        return int(counts.sum())
    if basis == "cells":
        return int(counts.size)
    raise ValueError(f"unknown AICc sample-size basis {basis!r}")


def percent_delta_gf(log_l_f: float, log_l_g: float) -> float:
    """Percent difference of fitted over generating log-likelihood; > 0 when the fit is better."""
    denom = (log_l_f + log_l_g) / -2.0
    if denom == 0:
        raise ZeroDivisionError("percent_delta_gf undefined when the log-likelihoods sum to 0")
    return 100.0 * (log_l_f - log_l_g) / denom


def percent_difference(a: float, b: float) -> float:
    """Percent difference of two AICc values relative to their mean."""
    return 100.0 * abs(a - b) / ((a + b) / 2.0)


@dataclass
class ComparisonReport:
    model_a: str
    model_b: str
    aicc_a: float
    aicc_b: float
    winner: str
    delta_aicc: float
    pct_aicc_diff: float
    tie: bool
    gof_a: GofBundle | None = None
    gof_b: GofBundle | None = None
    log_l: tuple[float, float] = field(default=(0.0, 0.0))
    # "a", "b" or "tie"; labels alone are ambiguous when both fits share a spec
    preferred: str = "tie"

    def to_dict(self):
        return {
            "model_a": self.model_a, "model_b": self.model_b,
            "aicc_a": self.aicc_a, "aicc_b": self.aicc_b,
            "winner": self.winner, "delta_aicc": self.delta_aicc,
            "pct_aicc_diff": self.pct_aicc_diff, "tie": self.tie,
            "gof_a": self.gof_a.to_dict() if self.gof_a else None,
            "gof_b": self.gof_b.to_dict() if self.gof_b else None,
            "log_l": list(self.log_l),
            "preferred": self.preferred,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("model", self.model_a, self.model_b),
                ("log L", f"{self.log_l[0]:.4f}", f"{self.log_l[1]:.4f}"),
                ("AICc", f"{self.aicc_a:.4f}", f"{self.aicc_b:.4f}")]
        for name in ("r2", "rmsd", "kl"):
            ga = getattr(self.gof_a, name) if self.gof_a else float("nan")
            gb = getattr(self.gof_b, name) if self.gof_b else float("nan")
            rows.append((name, f"{ga:.4f}", f"{gb:.4f}"))
        w = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w[i]) for i, c in enumerate(r)) for r in rows]
        verdict = "tie" if self.tie else f"winner: {self.winner}"
        lines.append(f"{verdict} (delta AICc {self.delta_aicc:.4f}, {self.pct_aicc_diff:.4f}%)")
        return "\n".join(lines) + "\n"


def compare(fit_a: FitResult, fit_b: FitResult) -> ComparisonReport:
    """Lower AICc wins; both fits must come from the same data."""
    if fit_a.data_digest != fit_b.data_digest:
        raise DataMismatch("fits were made to different data "
                           f"({fit_a.data_digest} vs {fit_b.data_digest})")
    a, b = fit_a.aicc, fit_b.aicc
    tie = a == b
    la, lb = fit_a.spec.label, fit_b.spec.label
    preferred = "tie" if tie else ("a" if a < b else "b")
    winner = {"tie": "tie", "a": la, "b": lb}[preferred]
    return ComparisonReport(la, lb, a, b, winner, abs(a - b), percent_difference(a, b), tie,
                            fit_a.gof, fit_b.gof, (fit_a.log_l, fit_b.log_l), preferred)
