"""Domain types for rating-scale models and their parameter constraints.

A model is described by a :class:`ModelSpec` (which class, how many stimuli
and response categories, which decision rules) and parameterised by a
:class:`ParamSet` holding Gaussian representation and criterion densities plus
the three rule-selection probabilities.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ParseError

VDR = "VDR"
SDT_EV = "SDT-EV"
SDT_UV = "SDT-UV"
CSDT_EV = "CSDT-EV"
CSDT_UV = "CSDT-UV"
KLASSES = (VDR, SDT_EV, SDT_UV, CSDT_EV, CSDT_UV)

MIN_MEAN_GAP = 1e-9
SD_FLOOR = 1e-6
PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    n_stimuli: int
    n_responses: int
    klass: str = VDR
    rule_set: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if self.klass not in KLASSES:
            raise ValueError(f"unknown model class {self.klass!r}")
        if self.n_stimuli < 1:
            raise ValueError("n_stimuli must be >= 1")
        if self.n_responses < 2:
            raise ValueError("n_responses must be >= 2")
        rules = tuple(sorted(set(int(r) for r in self.rule_set)))
        if self.is_sdt:
            rules = (1,)
        if not rules or any(r not in (1, 2, 3) for r in rules):
            raise ValueError(
                f"rule_set must be a nonempty subset of {{1,2,3}}, got {self.rule_set}")
        object.__setattr__(self, "rule_set", rules)

    @property
    def is_sdt(self) -> bool:
        return self.klass in (SDT_EV, SDT_UV)

    @property
    def is_csdt(self) -> bool:
        return self.klass in (CSDT_EV, CSDT_UV)

    @property
    def equal_variance(self) -> bool:
        return self.klass in (SDT_EV, CSDT_EV)

    @property
    def label(self) -> str:
        if self.is_sdt:
            return self.klass
        return f"{self.klass}{{{','.join(map(str, self.rule_set))}}}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_stimuli": self.n_stimuli,
            "n_responses": self.n_responses,
            "klass": self.klass,
            "rule_set": list(self.rule_set),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        return cls(int(d["n_stimuli"]), int(d["n_responses"]), d.get("klass", VDR),
                   tuple(d.get("rule_set", (1, 2, 3))))


@dataclass
class ParamSet:
    rep_means: np.ndarray
    rep_sds: np.ndarray
    crit_means: np.ndarray
    crit_sds: np.ndarray
    rule_probs: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        self.rep_means = np.asarray(self.rep_means, dtype=float).copy()
        self.rep_sds = np.asarray(self.rep_sds, dtype=float).copy()
        self.crit_means = np.asarray(self.crit_means, dtype=float).copy()
        self.crit_sds = np.asarray(self.crit_sds, dtype=float).copy()
        self.rule_probs = np.asarray(self.rule_probs, dtype=float).copy()

    @property
    def n_stimuli(self) -> int:
        return len(self.rep_means)

    @property
    def n_responses(self) -> int:
        return len(self.crit_means) + 1

    def copy(self) -> "ParamSet":
        return ParamSet(self.rep_means, self.rep_sds, self.crit_means, self.crit_sds,
                        self.rule_probs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rep_means": self.rep_means.tolist(),
            "rep_sds": self.rep_sds.tolist(),
            "crit_means": self.crit_means.tolist(),
            "crit_sds": self.crit_sds.tolist(),
            "rule_probs": self.rule_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ParamSet":
        return cls(d["rep_means"], d["rep_sds"], d["crit_means"], d["crit_sds"],
                   d.get("rule_probs", [1.0, 0.0, 0.0]))

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays()))

    def _arrays(self):
        return (self.rep_means, self.rep_sds, self.crit_means, self.crit_sds, self.rule_probs)


def count_parameters(spec: ModelSpec) -> int:
    """Number of free parameters ``U`` of a model class."""
    n, m1 = spec.n_stimuli, spec.n_responses - 1
    k = len(spec.rule_set) - 1
    if spec.klass == VDR:
        return 2 * n + 2 * m1 + k
    if spec.klass == SDT_UV:
        return 2 * n + m1
    if spec.klass == SDT_EV:
        return n + 1 + m1
    if spec.klass == CSDT_UV:
        return n + 2 * m1 + k
    return n + m1 + 1 + k


def check_fit_feasible(spec: ModelSpec) -> bool:
    """True when the data matrix has more degrees of freedom than the model has parameters."""
    return spec.n_stimuli * (spec.n_responses - 1) > count_parameters(spec)


def validate_params(theta: ParamSet, spec: ModelSpec) -> list[str]:
    """Return every constraint ``theta`` violates for ``spec`` (empty when valid)."""
    out = []
    n, m1 = spec.n_stimuli, spec.n_responses - 1
    shapes = {"rep_means": (theta.rep_means, n), "rep_sds": (theta.rep_sds, n),
              "crit_means": (theta.crit_means, m1), "crit_sds": (theta.crit_sds, m1),
              "rule_probs": (theta.rule_probs, 3)}
    for name, (arr, size) in shapes.items():
        if arr.shape != (size,):
            out.append(f"{name} has shape {arr.shape}, expected ({size},)")
        elif not np.all(np.isfinite(arr)):
            out.append(f"{name} contains non-finite values")
    if out:
        return out

    if n > 1 and np.any(np.diff(theta.rep_means) < MIN_MEAN_GAP):
        out.append("rep_means not ascending")
    if m1 > 1 and np.any(np.diff(theta.crit_means) < MIN_MEAN_GAP):
        out.append("crit_means not ascending")

    for name, arr, structural in (("rep_sds", theta.rep_sds, spec.is_csdt),
                                  ("crit_sds", theta.crit_sds, spec.is_sdt)):
        if np.any(arr < 0):
            out.append(f"{name} negative")
        if structural:
            if np.any(arr != 0):
                out.append(f"{name} must be structurally zero for {spec.klass}")
        else:
            if np.any(arr <= 0):
                out.append(f"{name} must be positive for {spec.klass}")
            if spec.equal_variance and np.ptp(arr) != 0:
                out.append(f"{name} must all be equal for {spec.klass}")

    p = theta.rule_probs
    if np.any(p < 0) or np.any(p > 1):
        out.append("rule probabilities outside [0, 1]")
    if abs(p.sum() - 1.0) > PROB_SUM_TOL:
        out.append("rule probabilities sum != 1")
    for k in (1, 2, 3):
        if k not in spec.rule_set and p[k - 1] != 0:
            out.append(f"rule {k} not in rule_set but has nonzero probability")
    return out


def canonicalize(theta: ParamSet) -> ParamSet:
    """Affinely rescale so the first representation mean is 0 and the last is 1.

    Predicted probabilities are invariant under this map; it exists only to
    compare recovered and generating parameters on a common scale.
    """
    lo, hi = theta.rep_means[0], theta.rep_means[-1]
    if hi == lo:
        raise ValueError("degenerate: first and last representation means coincide")
    scale = 1.0 / (hi - lo)
    return ParamSet((theta.rep_means - lo) * scale, theta.rep_sds * scale,
                    (theta.crit_means - lo) * scale, theta.crit_sds * scale, theta.rule_probs)


def symmetric_params(n: int, m: int, sd: float = 1.0, spacing: float = 1.0,
                     rule_probs=(1.0, 0.0, 0.0)) -> ParamSet:
    """Evenly spaced means, middle criterion on the middle stimulus, equal SDs."""
    rep = spacing * (np.arange(n) - (n - 1) / 2.0)
    crit = spacing * (np.arange(m - 1) - (m - 2) / 2.0)
    return ParamSet(rep, np.full(n, sd), crit, np.full(m - 1, sd), rule_probs)


@dataclass
class CountMatrix:
    counts: np.ndarray
    tps: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or np.any(self.counts < 0):
            raise ValueError("counts must be a 2-D array of non-negative integers")

    @property
    def shape(self):
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def proportions(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(float)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def digest(self) -> str:
        return hashlib.sha256(self.counts.astype("<i8").tobytes()
                              + str(self.counts.shape).encode()).hexdigest()[:16]

    def to_csv(self) -> str:
        return matrix_to_csv(self.counts, tps=self.tps)

    @classmethod
    def from_csv(cls, text: str) -> "CountMatrix":
        meta, rows = parse_matrix_csv(text)
        try:
            counts = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"non-integer count: {exc}") from exc
        if counts.ndim != 2:
            raise ParseError("ragged count matrix")
        n, m = counts.shape
        if meta.get("N", n) != n or meta.get("M", m) != m:
            raise ParseError("header dimensions disagree with the table")
        tps = meta.get("tps")
        if tps is None:
            tps = int(round(counts.sum(axis=1).mean()))
        return cls(counts, int(tps))


_HEADER = re.compile(r"(\w+)=(\S+)")
# other comment fields (provenance) are ignored
_HEADER_KEYS = ("N", "M", "tps")


def matrix_to_csv(values: np.ndarray, tps: int | None = None) -> str:
    n, m = values.shape
    buf = io.StringIO()
    header = f"# N={n} M={m}" + (f" tps={tps}" if tps is not None else "")
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in values:
        if np.issubdtype(values.dtype, np.integer):
            w.writerow([int(v) for v in row])
        else:
            w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def parse_matrix_csv(text: str) -> tuple[dict[str, int], list[list[str]]]:
    meta: dict[str, int] = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for k, v in _HEADER.findall(line):
                if k not in _HEADER_KEYS:
                    continue
                try:
                    meta[k] = int(v)
                except ValueError:
                    raise ParseError(f"bad header field {k}={v}") from None
            continue
        rows.append([c.strip() for c in line.split(",")])
    if not rows:
        raise ParseError("empty matrix")
    if len({len(r) for r in rows}) != 1:
        raise ParseError("ragged matrix rows")
    return meta, rows


def prob_matrix_from_csv(text: str) -> np.ndarray:
    _, rows = parse_matrix_csv(text)
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def rotate180(p: np.ndarray) -> np.ndarray:
    """Cell (h, i) -> cell (N+1-h, M+1-i)."""
    return np.asarray(p)[::-1, ::-1]


def mirror(theta: ParamSet) -> ParamSet:
    """Negate and reverse all means; Rule 1 on the mirror is Rule 2 rotated."""
    return ParamSet(-theta.rep_means[::-1], theta.rep_sds[::-1], -theta.crit_means[::-1],
                    theta.crit_sds[::-1], theta.rule_probs[[1, 0, 2]])


@dataclass
class FitResult:
    theta: ParamSet
    log_l: float
    aicc: float
    gof: Any
    n_starts: int
    pct_ic: float
    seed: int
    spec: ModelSpec
    start_log_ls: list[float] = field(default_factory=list)
    data_digest: str = ""
    n_obs: int = 0
    n_failures: int = 0

    @property
    def n_params(self) -> int:
        return count_parameters(self.spec)

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "theta": self.theta.to_dict(),
            "log_l": self.log_l,
            "aicc": self.aicc,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "gof": self.gof.to_dict() if self.gof is not None else None,
            "n_starts": self.n_starts,
            "start_log_ls": list(self.start_log_ls),
            "pct_ic": self.pct_ic,
            "seed": self.seed,
            "data_digest": self.data_digest,
            "n_failures": self.n_failures,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FitResult":
        from .gof import GofBundle

        return cls(
            theta=ParamSet.from_dict(d["theta"]),
            log_l=float(d["log_l"]),
            aicc=float(d["aicc"]),
            gof=GofBundle.from_dict(d["gof"]) if d.get("gof") else None,
            n_starts=int(d["n_starts"]),
            pct_ic=float(d["pct_ic"]),
            seed=int(d["seed"]),
            spec=ModelSpec.from_dict(d["spec"]),
            start_log_ls=list(d.get("start_log_ls", [])),
            data_digest=d.get("data_digest", ""),
            n_obs=int(d.get("n_obs", 0)),
            n_failures=int(d.get("n_failures", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
