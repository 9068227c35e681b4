# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nested-integral kernel.

Counterpart of ``_kernels_py``; the docstring there describes the scheme.
The whole evaluation runs without the GIL.
"""

import numpy as np

from libc.math cimport erfc, exp, fabs, sqrt, log, ceil, INFINITY
from libc.stdlib cimport malloc, free

cdef enum:
    MAXLEV = 20
    MAX_CRITERIA = 64
    NKINDS = 4

cdef enum:
    R1_ABOVE = 0
    R2_BELOW = 1
    R3_ABOVE = 2
    R3_BELOW = 3

cdef double SPLIT_RATIO = 8.0
cdef double RESOLVE_SD = 2.0
cdef double SQRT2 = sqrt(2.0)
cdef double INV_SQRT2PI = 1.0 / sqrt(2.0 * 3.141592653589793)

ctypedef void (*vfunc_t)(double, void*, double*) noexcept nogil


cdef struct VWork:
    # scratch for one vector Romberg call over n components
    int n
    double* prev     # n * MAXLEV
    double* row      # n * MAXLEV
    double* s        # running midpoint sums
    double* acc
    double* fx
    unsigned char* done


cdef struct Ctx:
    int m1
    int nk
    int kinds[NKINDS]
    int need_up
    int need_lo
    double mu[MAX_CRITERIA]
    double sd[MAX_CRITERIA]
    double inv[MAX_CRITERIA]
    double norm[MAX_CRITERIA]
    double lc
    double hc
    double cutoff
    double rel_tol
    double abs_tol
    int min_lev
    int max_lev
    # inner state
    double s
    double cdf_s[MAX_CRITERIA]
    double sf_s[MAX_CRITERIA]
    int nt                 # number of terms = nk * m1
    VWork inner_w
    double* piece_val      # nt
    double* piece_err
    int* piece_lev
    unsigned char* piece_ok
    double* in_val         # nt, summed over pieces
    double* in_err
    long* in_lev_acc       # nt, accumulated over every outer node
    unsigned char* in_ok
    double* tpts
    # outer state
    int nrows
    int* row_idx
    double* row_mu
    double* row_inv
    double* row_norm


cdef inline double _cdf(double x, double mu, double inv) noexcept nogil:
    return 0.5 * erfc((mu - x) * inv)


cdef inline double _sf(double x, double mu, double inv) noexcept nogil:
    return 0.5 * erfc((x - mu) * inv)


cdef int vwork_alloc(VWork* w, int n) noexcept nogil:
    w.n = n
    w.prev = <double*>malloc(n * MAXLEV * sizeof(double))
    w.row = <double*>malloc(n * MAXLEV * sizeof(double))
    w.s = <double*>malloc(n * sizeof(double))
    w.acc = <double*>malloc(n * sizeof(double))
    w.fx = <double*>malloc(n * sizeof(double))
    w.done = <unsigned char*>malloc(n * sizeof(unsigned char))
    if not (w.prev and w.row and w.s and w.acc and w.fx and w.done):
        return -1
    return 0


cdef void vwork_free(VWork* w) noexcept nogil:
    free(w.prev)
    free(w.row)
    free(w.s)
    free(w.acc)
    free(w.fx)
    free(w.done)


cdef void vromberg(vfunc_t f, void* ctx, double lo, double hi, VWork* w, double rel_tol,
                   double abs_tol, int min_lev, int max_lev, int start_lev, double* val,
                   double* err, int* lev, unsigned char* ok) noexcept nogil:
    """Romberg on n integrands sharing abscissas; each stops at its own level.

    Levels below start_lev only accumulate midpoint sums.
    """
    cdef int n = w.n, c, k, j, depth, remaining, first_stop, best
    cdef double width = hi - lo, step = hi - lo, ns, x, fac, e, ee, tol
    cdef long npts = 1, q
    cdef double* prev
    cdef double* row
    first_stop = start_lev + 1
    if min_lev > first_stop:
        first_stop = min_lev
    f(lo + 0.5 * width, ctx, w.fx)
    for c in range(n):
        w.s[c] = width * w.fx[c]
        w.prev[c * MAXLEV] = w.s[c]
        w.done[c] = 0
        val[c] = w.s[c]
        err[c] = INFINITY
        lev[c] = max_lev
        ok[c] = 0
    remaining = n
    for k in range(1, max_lev):
        ns = step / 3.0
        x = lo + 0.5 * ns
        for c in range(n):
            w.acc[c] = 0.0
        for q in range(npts):
            f(x, ctx, w.fx)
            for c in range(n):
                w.acc[c] += w.fx[c]
            f(x + 2.0 * ns, ctx, w.fx)
            for c in range(n):
                w.acc[c] += w.fx[c]
            x += 3.0 * ns
        npts *= 3
        step = ns
        depth = k + 1 - start_lev
        for c in range(n):
            if w.done[c]:
                continue
            prev = w.prev + c * MAXLEV
            row = w.row + c * MAXLEV
            w.s[c] = w.s[c] / 3.0 + ns * w.acc[c]
            if depth <= 0:
                prev[0] = w.s[c]
                val[c] = w.s[c]
                continue
            row[0] = w.s[c]
            fac = 1.0
            for j in range(1, depth + 1):
                fac *= 9.0
                row[j] = row[j - 1] + (row[j - 1] - prev[j - 1]) / (fac - 1.0)
            best = 0
            e = fabs(row[0] - prev[0])
            for j in range(1, depth):
                ee = fabs(row[j] - prev[j])
                if ee < e:
                    best = j
                    e = ee
            val[c] = row[best]
            err[c] = e
            for j in range(depth + 1):
                prev[j] = row[j]
            tol = rel_tol * fabs(row[best])
            if tol < abs_tol:
                tol = abs_tol
            if k + 1 >= first_stop and e <= tol:
                w.done[c] = 1
                lev[c] = k + 1
                ok[c] = 1
                remaining -= 1
        if remaining == 0:
            return


cdef void loo(double* a, int n, double* out, double* scratch) noexcept nogil:
    """out[i] = prod_{j != i} a[j]."""
    cdef int i
    cdef double p = 1.0
    for i in range(n):
        scratch[i] = p
        p *= a[i]
    p = 1.0
    for i in range(n - 1, -1, -1):
        out[i] = scratch[i] * p
        p *= a[i]


cdef void f_inner(double t, void* p, double* res) noexcept nogil:
    cdef Ctx* ctx = <Ctx*>p
    cdef int m1 = ctx.m1, j, k, kind
    cdef double s = ctx.s
    cdef double cu = s + t, cl = s - t, z
    cdef double q_up[MAX_CRITERIA]
    cdef double p_lo[MAX_CRITERIA]
    cdef double d_up[MAX_CRITERIA]
    cdef double d_lo[MAX_CRITERIA]
    cdef double fac[MAX_CRITERIA]
    cdef double out[MAX_CRITERIA]
    cdef double scratch[MAX_CRITERIA]
    cdef double* r
    if ctx.need_up:
        for j in range(m1):
            q_up[j] = _sf(cu, ctx.mu[j], ctx.inv[j])
            z = (cu - ctx.mu[j]) * ctx.inv[j]
            d_up[j] = ctx.norm[j] * exp(-z * z)
    if ctx.need_lo:
        for j in range(m1):
            p_lo[j] = _cdf(cl, ctx.mu[j], ctx.inv[j])
            z = (cl - ctx.mu[j]) * ctx.inv[j]
            d_lo[j] = ctx.norm[j] * exp(-z * z)
    for k in range(ctx.nk):
        kind = ctx.kinds[k]
        r = res + k * m1
        if kind == R1_ABOVE:
            for j in range(m1):
                fac[j] = q_up[j] + ctx.cdf_s[j]
            loo(fac, m1, out, scratch)
            for j in range(m1):
                r[j] = d_up[j] * out[j]
        elif kind == R2_BELOW:
            for j in range(m1):
                fac[j] = p_lo[j] + ctx.sf_s[j]
            loo(fac, m1, out, scratch)
            for j in range(m1):
                r[j] = d_lo[j] * out[j]
        else:
            for j in range(m1):
                fac[j] = q_up[j] + p_lo[j]
            loo(fac, m1, out, scratch)
            if kind == R3_ABOVE:
                for j in range(m1):
                    r[j] = d_up[j] * out[j]
            else:
                for j in range(m1):
                    r[j] = d_lo[j] * out[j]


cdef int make_edges(double* pts, int npts, double a, double b, double* edges) noexcept nogil:
    cdef int p, q, n = 1
    cdef double t
    for p in range(1, npts):
        t = pts[p]
        q = p - 1
        while q >= 0 and pts[q] > t:
            pts[q + 1] = pts[q]
            q -= 1
        pts[q + 1] = t
    edges[0] = a
    for p in range(npts):
        if pts[p] > a and pts[p] < b and pts[p] > edges[n - 1]:
            edges[n] = pts[p]
            n += 1
    if b > edges[n - 1]:
        edges[n] = b
        n += 1
    return n


cdef int resolved_level(double a, double b, double* fc, double* fs, int nf, double L,
                        int cap) noexcept nogil:
    """First level whose spacing is within RESOLVE_SD SDs of every Gaussian reaching into (a, b)."""
    cdef int f, k
    cdef double smin = INFINITY, h, reach
    for f in range(nf):
        # one SD short of the window, so a shared edge never counts as overlap
        reach = (L - 1.0) * fs[f]
        if fc[f] + reach > a and fc[f] - reach < b and fs[f] < smin:
            smin = fs[f]
    if smin == INFINITY:
        return 1
    h = RESOLVE_SD * smin
    if b - a <= h:
        return 1
    k = 1 + <int>ceil(log((b - a) / h) / log(3.0))
    if k > cap - 1:
        k = cap - 1
    return k


cdef void inner_at(Ctx* ctx, double s) noexcept nogil:
    """All term integrals at one representation value, summed over t-pieces."""
    cdef int m1 = ctx.m1, nt = ctx.nt, j, p, n, c, lev, npts = 0
    cdef double L = ctx.cutoff, W, t
    cdef double edges[4 * MAX_CRITERIA + 2]
    cdef double fc[MAX_CRITERIA]
    ctx.s = s
    for j in range(m1):
        ctx.cdf_s[j] = _cdf(s, ctx.mu[j], ctx.inv[j])
        ctx.sf_s[j] = _sf(s, ctx.mu[j], ctx.inv[j])
    W = s - ctx.lc
    if ctx.hc - s > W:
        W = ctx.hc - s
    for j in range(m1):
        if 2.0 * L * ctx.sd[j] * SPLIT_RATIO < W:
            t = fabs(ctx.mu[j] - L * ctx.sd[j] - s)
            ctx.tpts[npts] = t
            t = fabs(ctx.mu[j] + L * ctx.sd[j] - s)
            ctx.tpts[npts + 1] = t
            npts += 2
    n = make_edges(ctx.tpts, npts, 0.0, W, edges)
    for j in range(m1):
        fc[j] = fabs(ctx.mu[j] - s)
    for c in range(nt):
        ctx.in_val[c] = 0.0
        ctx.in_err[c] = 0.0
        ctx.in_ok[c] = 1
    for p in range(n - 1):
        lev = resolved_level(edges[p], edges[p + 1], fc, ctx.sd, m1, L, ctx.max_lev)
        vromberg(f_inner, <void*>ctx, edges[p], edges[p + 1], &ctx.inner_w, ctx.rel_tol,
                 ctx.abs_tol, ctx.min_lev, ctx.max_lev, lev, ctx.piece_val, ctx.piece_err,
                 ctx.piece_lev, ctx.piece_ok)
        for c in range(nt):
            ctx.in_val[c] += ctx.piece_val[c]
            ctx.in_err[c] += ctx.piece_err[c]
            ctx.in_lev_acc[c] += ctx.piece_lev[c]
            if not ctx.piece_ok[c]:
                ctx.in_ok[c] = 0


cdef void f_outer(double s, void* p, double* res) noexcept nogil:
    cdef Ctx* ctx = <Ctx*>p
    cdef int nt = ctx.nt, r, c
    cdef double z, w
    inner_at(ctx, s)
    for r in range(ctx.nrows):
        z = (s - ctx.row_mu[r]) * ctx.row_inv[r]
        w = ctx.row_norm[r] * exp(-z * z)
        for c in range(nt):
            res[r * nt + c] = w * ctx.in_val[c]


def terms(rep_means, rep_sds, crit_means, crit_sds, kinds, double rel_tol, double abs_tol,
          int min_lev, int max_lev, double cutoff):
    """Nested integrals for every (stimulus, term kind, criterion).

    Returns ``(values, errors, outer_levels, inner_levels, ok)``, each of shape
    ``(N, len(kinds), M - 1)``.
    """
    cdef double[::1] rm = np.ascontiguousarray(rep_means, dtype=np.float64)
    cdef double[::1] rs = np.ascontiguousarray(rep_sds, dtype=np.float64)
    cdef double[::1] cm = np.ascontiguousarray(crit_means, dtype=np.float64)
    cdef double[::1] cs = np.ascontiguousarray(crit_sds, dtype=np.float64)
    cdef int N = rm.shape[0], m1 = cm.shape[0], nk = len(kinds), nt, j, h, r, c, k, p, n
    cdef int npts = 0, nouter, bad = 0
    cdef double L = cutoff, A, B, width, half, mid, tail
    cdef Ctx ctx
    cdef VWork ow
    cdef double* o_val = NULL
    cdef double* o_err = NULL
    cdef int* o_lev = NULL
    cdef unsigned char* o_ok = NULL
    cdef double* p_val = NULL
    cdef double* p_err = NULL
    cdef int* p_lev = NULL
    cdef unsigned char* p_ok = NULL
    cdef double* opts = NULL
    cdef double* edges = NULL
    cdef double* fc = NULL
    cdef double* fsd = NULL
    cdef int nf = 0, lev
    if m1 > MAX_CRITERIA:
        raise ValueError(f"at most {MAX_CRITERIA} criteria supported")
    if np.any(np.asarray(cs) <= 0):
        raise ValueError("criterion SDs must be positive for quadrature kernels")
    if nk < 1 or nk > NKINDS:
        raise ValueError("need 1..4 term kinds")
    nt = nk * m1
    ctx.m1 = m1
    ctx.nk = nk
    ctx.need_up = 0
    ctx.need_lo = 0
    for k in range(nk):
        ctx.kinds[k] = int(kinds[k])
        if ctx.kinds[k] in (R1_ABOVE, R3_ABOVE, R3_BELOW):
            ctx.need_up = 1
        if ctx.kinds[k] in (R2_BELOW, R3_ABOVE, R3_BELOW):
            ctx.need_lo = 1
    for j in range(m1):
        ctx.mu[j] = cm[j]
        ctx.sd[j] = cs[j]
        ctx.inv[j] = 1.0 / (cs[j] * SQRT2)
        ctx.norm[j] = INV_SQRT2PI / cs[j]
    ctx.lc = min(cm[j] - L * cs[j] for j in range(m1))
    ctx.hc = max(cm[j] + L * cs[j] for j in range(m1))
    ctx.cutoff = L
    ctx.rel_tol = rel_tol
    ctx.abs_tol = abs_tol
    ctx.min_lev = min_lev
    ctx.max_lev = max_lev
    ctx.nt = nt

    values = np.zeros((N, nt))
    errors = np.zeros((N, nt))
    olevels = np.zeros((N, nt), dtype=np.int64)
    ilevels = np.zeros((N, nt), dtype=np.int64)
    oks = np.ones((N, nt), dtype=np.uint8)
    cdef double[:, ::1] V = values
    cdef double[:, ::1] E = errors
    cdef long[:, ::1] OL = olevels
    cdef long[:, ::1] IL = ilevels
    cdef unsigned char[:, ::1] OK = oks

    dirac = [h for h in range(N) if rs[h] == 0.0]
    smooth = [h for h in range(N) if rs[h] > 0.0]
    ctx.nrows = len(smooth)

    if vwork_alloc(&ctx.inner_w, nt) != 0:
        raise MemoryError
    ctx.piece_val = <double*>malloc(nt * sizeof(double))
    ctx.piece_err = <double*>malloc(nt * sizeof(double))
    ctx.piece_lev = <int*>malloc(nt * sizeof(int))
    ctx.piece_ok = <unsigned char*>malloc(nt * sizeof(unsigned char))
    ctx.in_val = <double*>malloc(nt * sizeof(double))
    ctx.in_err = <double*>malloc(nt * sizeof(double))
    ctx.in_lev_acc = <long*>malloc(nt * sizeof(long))
    ctx.in_ok = <unsigned char*>malloc(nt * sizeof(unsigned char))
    ctx.tpts = <double*>malloc((2 * MAX_CRITERIA + 2) * sizeof(double))
    ctx.row_idx = <int*>malloc((ctx.nrows + 1) * sizeof(int))
    ctx.row_mu = <double*>malloc((ctx.nrows + 1) * sizeof(double))
    ctx.row_inv = <double*>malloc((ctx.nrows + 1) * sizeof(double))
    ctx.row_norm = <double*>malloc((ctx.nrows + 1) * sizeof(double))
    try:
        for c in range(nt):
            ctx.in_lev_acc[c] = 0
        for h in dirac:
            with nogil:
                for c in range(nt):
                    ctx.in_lev_acc[c] = 0
                inner_at(&ctx, rm[h])
                for c in range(nt):
                    V[h, c] = ctx.in_val[c]
                    E[h, c] = ctx.in_err[c]
                    IL[h, c] = ctx.in_lev_acc[c]
                    OK[h, c] = ctx.in_ok[c]
        if ctx.nrows == 0:
            return _shape(values, errors, olevels, ilevels, oks, N, nk, m1)

        A = INFINITY
        B = -INFINITY
        for r, h in enumerate(smooth):
            ctx.row_idx[r] = h
            ctx.row_mu[r] = rm[h]
            ctx.row_inv[r] = 1.0 / (rs[h] * SQRT2)
            ctx.row_norm[r] = INV_SQRT2PI / rs[h]
            A = min(A, rm[h] - L * rs[h])
            B = max(B, rm[h] + L * rs[h])
        width = B - A
        opts = <double*>malloc((2 * N + 2 * m1 + m1 * m1 + 2) * sizeof(double))
        edges = <double*>malloc((2 * N + 2 * m1 + m1 * m1 + 4) * sizeof(double))
        for h in smooth:
            if 2.0 * L * rs[h] * SPLIT_RATIO < width:
                opts[npts] = rm[h] - L * rs[h]
                opts[npts + 1] = rm[h] + L * rs[h]
                npts += 2
        for j in range(m1):
            if 2.0 * L * cs[j] * SPLIT_RATIO < width:
                opts[npts] = cm[j] - L * cs[j]
                opts[npts + 1] = cm[j] + L * cs[j]
                npts += 2
        if R3_ABOVE in [ctx.kinds[k] for k in range(nk)] or R3_BELOW in [ctx.kinds[k] for k in range(nk)]:
            for j in range(m1):
                for p in range(j + 1, m1):
                    half = 0.5 * L * (cs[j] + cs[p])
                    if 2.0 * half * SPLIT_RATIO < width:
                        mid = 0.5 * (cm[j] + cm[p])
                        opts[npts] = mid - half
                        opts[npts + 1] = mid + half
                        npts += 2
        nouter = ctx.nrows * nt
        if vwork_alloc(&ow, nouter) != 0:
            raise MemoryError
        o_val = <double*>malloc(nouter * sizeof(double))
        o_err = <double*>malloc(nouter * sizeof(double))
        o_lev = <int*>malloc(nouter * sizeof(int))
        o_ok = <unsigned char*>malloc(nouter * sizeof(unsigned char))
        tail = erfc(L / SQRT2)
        fc = <double*>malloc((N + m1) * sizeof(double))
        fsd = <double*>malloc((N + m1) * sizeof(double))
        for h in smooth:
            fc[nf] = rm[h]
            fsd[nf] = rs[h]
            nf += 1
        for j in range(m1):
            fc[nf] = cm[j]
            fsd[nf] = cs[j]
            nf += 1
        with nogil:
            for c in range(nt):
                ctx.in_lev_acc[c] = 0
                ctx.in_ok[c] = 1
            n = make_edges(opts, npts, A, B, edges)
            for r in range(ctx.nrows):
                h = ctx.row_idx[r]
                for c in range(nt):
                    E[h, c] = tail
            for p in range(n - 1):
                lev = resolved_level(edges[p], edges[p + 1], fc, fsd, nf, L, max_lev)
                vromberg(f_outer, <void*>&ctx, edges[p], edges[p + 1], &ow, rel_tol, abs_tol,
                         min_lev, max_lev, lev, o_val, o_err, o_lev, o_ok)
                for r in range(ctx.nrows):
                    h = ctx.row_idx[r]
                    for c in range(nt):
                        V[h, c] += o_val[r * nt + c]
                        E[h, c] += o_err[r * nt + c]
                        OL[h, c] += o_lev[r * nt + c]
                        if not o_ok[r * nt + c]:
                            OK[h, c] = 0
            for r in range(ctx.nrows):
                h = ctx.row_idx[r]
                for c in range(nt):
                    IL[h, c] = ctx.in_lev_acc[c]
                    if not ctx.in_ok[c]:
                        OK[h, c] = 0
        vwork_free(&ow)
    finally:
        vwork_free(&ctx.inner_w)
        free(ctx.piece_val)
        free(ctx.piece_err)
        free(ctx.piece_lev)
        free(ctx.piece_ok)
        free(ctx.in_val)
        free(ctx.in_err)
        free(ctx.in_lev_acc)
        free(ctx.in_ok)
        free(ctx.tpts)
        free(ctx.row_idx)
        free(ctx.row_mu)
        free(ctx.row_inv)
        free(ctx.row_norm)
        free(o_val)
        free(o_err)
        free(o_lev)
        free(o_ok)
        free(opts)
        free(edges)
        free(fc)
        free(fsd)
    return _shape(values, errors, olevels, ilevels, oks, N, nk, m1)


def _shape(values, errors, olevels, ilevels, oks, N, nk, m1):
    s = (N, nk, m1)
    return (values.reshape(s), errors.reshape(s), olevels.reshape(s), ilevels.reshape(s),
            oks.reshape(s).astype(bool))
