"""Pure numpy versions of the compiled kernels (same signatures)."""
import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _estep(y, a, m1, v1, m2, v2):
    l1 = (math.log(a) - 0.5 * (LOG_2PI + math.log(v1))) - 0.5 * (y - m1) ** 2 / v1
    l2 = (math.log(1.0 - a) - 0.5 * (LOG_2PI + math.log(v2))) - 0.5 * (y - m2) ** 2 / v2
    hi = np.maximum(l1, l2)
    d = np.exp(np.minimum(l1, l2) - hi)
    resp = np.where(l1 >= l2, 1.0 / (1.0 + d), d / (1.0 + d))
    ll = float(np.sum(hi + np.log1p(d)))
    return ll, resp


def em_run(y, a, m1, v1, m2, v2, max_iters, rel_tol, var_floor, record=False):
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.shape[0]
    hist = [] if record else None
    ll_prev = -math.inf
    it = 0
    ll, resp = _estep(y, a, m1, v1, m2, v2)
    while True:
        if record:
            hist.append(ll)
        if it > 0 and abs(ll - ll_prev) <= rel_tol * abs(ll_prev):
            break
        if it >= max_iters:
            break
        n1 = float(resp.sum())
        if n1 <= 0.0 or n1 >= n:
            a = n1 / n
            break
        m1 = float(resp @ y) / n1
        m2 = float((1.0 - resp) @ y) / (n - n1)
        v1 = max(float(resp @ (y - m1) ** 2) / n1, var_floor)
        v2 = max(float((1.0 - resp) @ (y - m2) ** 2) / (n - n1), var_floor)
        a = n1 / n
        it += 1
        ll_prev = ll
        ll, resp = _estep(y, a, m1, v1, m2, v2)
    history = np.asarray(hist, dtype=np.float64) if record else None
    return a, m1, v1, m2, v2, ll, it, history


def gof_scores(steps, cdf):
    steps = np.asarray(steps, dtype=np.float64)
    cdf = np.asarray(cdf, dtype=np.float64)
    n = steps.shape[0]
    sst = float(np.sum((steps - steps.mean()) ** 2))
    sse = float(np.sum((steps - cdf) ** 2))
    ranks = np.arange(n + 1) / n
    ks = max(float(np.max(np.abs(ranks[1:] - cdf))), float(np.max(np.abs(ranks[:-1] - cdf))))
    r2 = (sst - sse) / sst if sst > 0 else math.nan
    return r2, ks


def acf(x, max_lag):
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    den = float(d @ d)
    n = x.shape[0]
    return np.array([float(d[: n - k] @ d[k:]) / den for k in range(max_lag + 1)])
