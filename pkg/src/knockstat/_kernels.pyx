# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: two-component 1-D Gaussian EM, ECDF fit scores, ACF.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and the same update rules; results agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY, NAN, M_PI

cnp.import_array()

cdef double LOG_2PI = log(2.0 * M_PI)


cdef double _estep(const double[::1] y, double[::1] resp,
                   double a, double m1, double v1, double m2, double v2) noexcept nogil:
    """Fill component-1 responsibilities; return the log-likelihood."""
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double c1 = log(a) - 0.5 * (LOG_2PI + log(v1))
    cdef double c2 = log(1.0 - a) - 0.5 * (LOG_2PI + log(v2))
    cdef double l1, l2, hi, lo, d, ll = 0.0
    for i in range(n):
        d = y[i] - m1
        l1 = c1 - 0.5 * d * d / v1
        d = y[i] - m2
        l2 = c2 - 0.5 * d * d / v2
        if l1 >= l2:
            hi = l1
            lo = l2
            d = exp(lo - hi)
            resp[i] = 1.0 / (1.0 + d)
        else:
            hi = l2
            lo = l1
            d = exp(lo - hi)
            resp[i] = d / (1.0 + d)
        ll += hi + log(1.0 + d)
    return ll


def em_run(const double[::1] y, double a, double m1, double v1, double m2, double v2,
           int max_iters, double rel_tol, double var_floor, bint record=False):
    """Run EM from one starting point.

    Returns ``(a, m1, v1, m2, v2, loglik, iters, history)`` where ``loglik``
    is the Gaussian log-likelihood of ``y`` at the returned parameters and
    ``history`` holds the log-likelihood before every M-step (``None``
    unless ``record``).
    """
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double[::1] resp = np.empty(n, dtype=np.float64)
    cdef double ll, ll_prev = -INFINITY
    cdef double n1, s1, s2, d, r
    cdef int it = 0
    cdef list hist = [] if record else None

    with nogil:
        ll = _estep(y, resp, a, m1, v1, m2, v2)
    while True:
        if record:
            hist.append(ll)
        if it > 0 and fabs(ll - ll_prev) <= rel_tol * fabs(ll_prev):
            break
        if it >= max_iters:
            break
        with nogil:
            n1 = 0.0
            s1 = 0.0
            s2 = 0.0
            for i in range(n):
                r = resp[i]
                n1 += r
                s1 += r * y[i]
                s2 += (1.0 - r) * y[i]
            if n1 <= 0.0 or n1 >= n:
                # a component emptied: report the collapsed weight
                a = n1 / n
                break
            m1 = s1 / n1
            m2 = s2 / (n - n1)
            s1 = 0.0
            s2 = 0.0
            for i in range(n):
                r = resp[i]
                d = y[i] - m1
                s1 += r * d * d
                d = y[i] - m2
                s2 += (1.0 - r) * d * d
            v1 = s1 / n1
            v2 = s2 / (n - n1)
            if v1 < var_floor:
                v1 = var_floor
            if v2 < var_floor:
                v2 = var_floor
            a = n1 / n
            it += 1
            ll_prev = ll
            ll = _estep(y, resp, a, m1, v1, m2, v2)
    history = np.asarray(hist, dtype=np.float64) if record else None
    return a, m1, v1, m2, v2, ll, it, history


def gof_scores(const double[::1] steps, const double[::1] cdf):
    """Return ``(r2, ks)`` of model CDF values against ECDF steps.

    Inputs are aligned with the sorted sample.  KS compares each model value
    to both sides of its ECDF jump (ranks ``i/N`` and ``(i-1)/N``).
    """
    cdef Py_ssize_t i, n = steps.shape[0]
    cdef double mean = 0.0, sst = 0.0, sse = 0.0, d, ks = 0.0, fn = <double>n
    with nogil:
        for i in range(n):
            mean += steps[i]
        mean /= fn
        for i in range(n):
            d = steps[i] - mean
            sst += d * d
            d = steps[i] - cdf[i]
            sse += d * d
            d = fabs((i + 1) / fn - cdf[i])
            if d > ks:
                ks = d
            d = fabs(i / fn - cdf[i])
            if d > ks:
                ks = d
    # one point, or all ties: R^2 undefined
    return ((sst - sse) / sst if sst > 0 else NAN), ks


def acf(const double[::1] x, int max_lag):
    """Lag-0..max_lag autocorrelation about the full-sample mean."""
    cdef Py_ssize_t i, k, n = x.shape[0]
    cdef double mean = 0.0, den = 0.0, num
    out = np.empty(max_lag + 1, dtype=np.float64)
    cdef double[::1] r = out
    with nogil:
        for i in range(n):
            mean += x[i]
        mean /= n
        for i in range(n):
            den += (x[i] - mean) * (x[i] - mean)
        for k in range(max_lag + 1):
            num = 0.0
            for i in range(n - k):
                num += (x[i] - mean) * (x[i + k] - mean)
            r[k] = num / den
    return out
