"""Pure-Python nested-integral kernel (fallback for the compiled ``_kernels``).

Every cell of a response matrix is a sum of *terms*. A term is a nested
integral over the representation value ``s`` (outer) and one criterion value
``c`` (inner). With ``i`` the 0-based criterion index:

* ``R1_ABOVE``: ``c_i > s`` and no other criterion in ``(s, c_i)``
* ``R2_BELOW``: ``c_i < s`` and no other criterion in ``(c_i, s)``
* ``R3_ABOVE``: ``c_i > s`` and no other criterion within ``|s - c_i|`` of ``s``
* ``R3_BELOW``: ``c_i < s`` and no other criterion within ``|s - c_i|`` of ``s``

For fixed ``s`` all terms are integrated together in the offset ``t = |c - s|``
on ``(0, W)``, where ``W`` reaches every criterion's truncation window. One
abscissa ``t`` serves both ``c = s + t`` and its mirror ``c = s - t``, which is
exactly the pair the nearest-criterion terms need, so every criterion CDF is
computed once per abscissa and shared by all terms. The outer integral runs
over the union of the stimulus windows and carries one component per
(stimulus, term). Each component stops refining at its own level, so sharing
abscissas does not change when an individual cell converges.

The compiled kernel runs the same algorithm; results agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

R1_ABOVE, R2_BELOW, R3_ABOVE, R3_BELOW = 0, 1, 2, 3
SPLIT_RATIO = 8.0
RESOLVE_SD = 2.0
MAX_CRITERIA = 64

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def vromberg(f, lo, hi, n, rel_tol, abs_tol, min_lev, max_lev, start_lev=1):
    """Romberg on ``n`` integrands sharing abscissas.

    ``f`` maps a 1-D array of abscissas to an array of shape ``(len(x), n)``.
    Levels below ``start_lev`` only accumulate midpoint sums; the Richardson
    tableau starts at ``start_lev`` so that under-resolved estimates never
    enter the extrapolation. Each component reports the tableau column whose
    entry changed least between levels. A component may stop from level
    ``max(min_lev, start_lev + 1)``. Returns ``(values, errors, levels, ok)``.
    """
    width = hi - lo
    s = width * f(np.array([lo + 0.5 * width]))[0]
    prev = np.zeros((max_lev, n))
    prev[0] = s
    val = s.copy()
    err = np.full(n, np.inf)
    lev = np.full(n, max_lev, dtype=np.int64)
    ok = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    first_stop = max(min_lev, start_lev + 1)
    cols = np.arange(n)
    step = width
    npts = 1
    for k in range(1, max_lev):
        ns = step / 3.0
        base = lo + 0.5 * ns + 3.0 * ns * np.arange(npts)
        x = np.empty(2 * npts)
        x[0::2] = base
        x[1::2] = base + 2.0 * ns
        acc = f(x).sum(axis=0)
        npts *= 3
        step = ns
        act = ~done
        s = np.where(act, s / 3.0 + ns * acc, s)
        depth = k + 1 - start_lev
        if depth <= 0:
            prev[0] = s
            val = s.copy()
            continue
        row = np.zeros((max_lev, n))
        row[0] = s
        fac = 1.0
        for j in range(1, depth + 1):
            fac *= 9.0
            row[j] = row[j - 1] + (row[j - 1] - prev[j - 1]) / (fac - 1.0)
        # best column: the tableau entry that moved least since the previous level
        d = np.abs(row[:depth] - prev[:depth])
        b = np.argmin(d, axis=0)
        v = row[b, cols]
        e = d[b, cols]
        val = np.where(act, v, val)
        err = np.where(act, e, err)
        prev = np.where(act[None, :], row, prev)
        tol = np.maximum(abs_tol, rel_tol * np.abs(v))
        newly = act & (k + 1 >= first_stop) & (e <= tol)
        lev[newly] = k + 1
        ok[newly] = True
        done |= newly
        if done.all():
            break
    return val, err, lev, ok


def resolved_level(a, b, centers, sds, L, cap):
    """First level whose spacing is within RESOLVE_SD SDs of every Gaussian reaching into (a, b)."""
    # one SD short of the window, so a shared edge never counts as overlap
    reach = (L - 1.0) * sds
    over = (centers + reach > a) & (centers - reach < b)
    if not over.any():
        return 1
    h = RESOLVE_SD * float(np.min(sds[over]))
    if b - a <= h:
        return 1
    k = 1 + int(math.ceil(math.log((b - a) / h) / math.log(3.0)))
    return min(k, cap - 1)


def _edges(points, a, b):
    inside = sorted(p for p in points if a < p < b)
    edges = [a]
    for p in inside:
        if p > edges[-1]:
            edges.append(p)
    if b > edges[-1]:
        edges.append(b)
    return edges


class _Inner:
    """All term integrals at a fixed representation value."""

    def __init__(self, mu, sd, kinds, L, rel_tol, abs_tol, min_lev, max_lev):
        self.mu, self.sd = mu, sd
        self.inv = 1.0 / (sd * _SQRT2)
        self.norm = _INV_SQRT2PI / sd
        self.kinds = list(kinds)
        self.m1 = len(mu)
        self.nt = len(self.kinds) * self.m1
        self.need_up = any(k in (R1_ABOVE, R3_ABOVE, R3_BELOW) for k in self.kinds)
        self.need_lo = any(k in (R2_BELOW, R3_ABOVE, R3_BELOW) for k in self.kinds)
        self.L = L
        self.lc = float(np.min(mu - L * sd))
        self.hc = float(np.max(mu + L * sd))
        self.args = (rel_tol, abs_tol, min_lev, max_lev)
        self.lev_acc = np.zeros(self.nt, dtype=np.int64)
        self.ok = np.ones(self.nt, dtype=bool)

    @staticmethod
    def _loo(a):
        # leave-one-out products along the last axis
        n = a.shape[-1]
        pre = np.ones_like(a)
        suf = np.ones_like(a)
        if n > 1:
            pre[..., 1:] = np.cumprod(a[..., :-1], axis=-1)
            suf[..., :-1] = np.cumprod(a[..., :0:-1], axis=-1)[..., ::-1]
        return pre * suf

    def _integrand(self, s, cdf_s, sf_s):
        mu, inv, norm = self.mu, self.inv, self.norm

        def f(t):
            t = t[:, None]
            out = []
            if self.need_up:
                zu = (s + t - mu) * inv
                q_up = 0.5 * erfc(zu)
                d_up = norm * np.exp(-zu * zu)
            if self.need_lo:
                zl = (s - t - mu) * inv
                p_lo = 0.5 * erfc(-zl)
                d_lo = norm * np.exp(-zl * zl)
            f3 = None
            for kind in self.kinds:
                if kind == R1_ABOVE:
                    out.append(d_up * self._loo(q_up + cdf_s))
                elif kind == R2_BELOW:
                    out.append(d_lo * self._loo(p_lo + sf_s))
                else:
                    if f3 is None:
                        f3 = self._loo(q_up + p_lo)
                    out.append((d_up if kind == R3_ABOVE else d_lo) * f3)
            return np.concatenate(out, axis=1)

        return f

    def at(self, s):
        mu, sd, L = self.mu, self.sd, self.L
        cdf_s = 0.5 * erfc((mu - s) * self.inv)
        sf_s = 0.5 * erfc((s - mu) * self.inv)
        W = max(s - self.lc, self.hc - s)
        pts = []
        for j in range(self.m1):
            if 2.0 * L * sd[j] * SPLIT_RATIO < W:
                for e in (mu[j] - L * sd[j], mu[j] + L * sd[j]):
                    pts.append(abs(e - s))
        f = self._integrand(s, cdf_s, sf_s)
        total = np.zeros(self.nt)
        err = np.zeros(self.nt)
        edges = _edges(pts, 0.0, W)
        fc = np.abs(mu - s)
        rel_tol, abs_tol, min_lev, max_lev = self.args
        for p in range(len(edges) - 1):
            k0 = resolved_level(edges[p], edges[p + 1], fc, sd, L, max_lev)
            v, e, lev, ok = vromberg(f, edges[p], edges[p + 1], self.nt, rel_tol, abs_tol,
                                     min_lev, max_lev, k0)
            total += v
            err += e
            self.lev_acc += lev
            self.ok &= ok
        return total, err


def terms(rep_means, rep_sds, crit_means, crit_sds, kinds, rel_tol, abs_tol, min_lev, max_lev,
          cutoff):
    """Nested integrals for every (stimulus, term kind, criterion).

    Returns ``(values, errors, outer_levels, inner_levels, ok)``, each of shape
    ``(N, len(kinds), M - 1)``.
    """
    rm = np.asarray(rep_means, dtype=float)
    rs = np.asarray(rep_sds, dtype=float)
    cm = np.asarray(crit_means, dtype=float)
    cs = np.asarray(crit_sds, dtype=float)
    N, m1, nk = len(rm), len(cm), len(kinds)
    if m1 > MAX_CRITERIA:
        raise ValueError(f"at most {MAX_CRITERIA} criteria supported")
    if np.any(cs <= 0):
        raise ValueError("criterion SDs must be positive for quadrature kernels")
    if not 1 <= nk <= 4:
        raise ValueError("need 1..4 term kinds")
    L = cutoff
    args = (rel_tol, abs_tol, min_lev, max_lev)
    min_lev, max_lev = int(min_lev), int(max_lev)
    nt = nk * m1
    values = np.zeros((N, nt))
    errors = np.zeros((N, nt))
    olev = np.zeros((N, nt), dtype=np.int64)
    ilev = np.zeros((N, nt), dtype=np.int64)
    oks = np.ones((N, nt), dtype=bool)

    for h in np.flatnonzero(rs == 0.0):
        inner = _Inner(cm, cs, kinds, L, *args)
        values[h], errors[h] = inner.at(float(rm[h]))
        ilev[h] = inner.lev_acc
        oks[h] = inner.ok

    smooth = np.flatnonzero(rs > 0.0)
    if len(smooth):
        mu_h, sd_h = rm[smooth], rs[smooth]
        inv_h = 1.0 / (sd_h * _SQRT2)
        norm_h = _INV_SQRT2PI / sd_h
        A = float(np.min(mu_h - L * sd_h))
        B = float(np.max(mu_h + L * sd_h))
        width = B - A
        pts = []
        for m, s in zip(mu_h, sd_h):
            if 2.0 * L * s * SPLIT_RATIO < width:
                pts += [m - L * s, m + L * s]
        for j in range(m1):
            if 2.0 * L * cs[j] * SPLIT_RATIO < width:
                pts += [cm[j] - L * cs[j], cm[j] + L * cs[j]]
        if R3_ABOVE in kinds or R3_BELOW in kinds:
            for j in range(m1):
                for p in range(j + 1, m1):
                    half = 0.5 * L * (cs[j] + cs[p])
                    if 2.0 * half * SPLIT_RATIO < width:
                        mid = 0.5 * (cm[j] + cm[p])
                        pts += [mid - half, mid + half]
        inner = _Inner(cm, cs, kinds, L, *args)
        nr = len(smooth)

        def g(svals):
            out = np.empty((len(svals), nr * nt))
            for q, s in enumerate(svals):
                v, _ = inner.at(float(s))
                z = (s - mu_h) * inv_h
                w = norm_h * np.exp(-z * z)
                out[q] = (w[:, None] * v[None, :]).ravel()
            return out

        errors[smooth] = math.erfc(L / _SQRT2)
        fc = np.concatenate([mu_h, cm])
        fsd = np.concatenate([sd_h, cs])
        edges = _edges(pts, A, B)
        for a, b in zip(edges[:-1], edges[1:]):
            k0 = resolved_level(a, b, fc, fsd, L, max_lev)
            v, e, lev, ok = vromberg(g, a, b, nr * nt, rel_tol, abs_tol, min_lev, max_lev, k0)
            values[smooth] += v.reshape(nr, nt)
            errors[smooth] += e.reshape(nr, nt)
            olev[smooth] += lev.reshape(nr, nt)
            oks[smooth] &= ok.reshape(nr, nt)
        ilev[smooth] = inner.lev_acc
        oks[smooth] &= inner.ok

    s = (N, nk, m1)
    return values.reshape(s), errors.reshape(s), olev.reshape(s), ilev.reshape(s), oks.reshape(s)
