"""Compiled collapsed-Gibbs sweeps for the diagonal Normal-Inverse-Chi^2 IGMM.

Cluster slots are kept dense in ``0..K-1``; when a slot empties, the last
slot is moved into it.  The per-slot Student-t parameters are cached and only
refreshed when the slot's membership changes.
"""

import math

import numpy as np
from numba import njit

_LOG_PI = math.log(math.pi)


@njit(cache=True)
def _refresh(k, counts, sums, sumsq, mu0, kappa0, nu0, s0, loc, inv, const, half):
    n = counts[k]
    nun = nu0 + n
    d = mu0.shape[0]
    for j in range(d):
        knj = kappa0[j] + n
        if n > 0:
            xbar = sums[k, j] / n
            ss = sumsq[k, j] - sums[k, j] * xbar
            if ss < 0.0:
                ss = 0.0
            dev = xbar - mu0[j]
            nus2 = nu0 * s0[j] + ss + n * kappa0[j] / knj * dev * dev
        else:
            nus2 = nu0 * s0[j]
        scale2 = nus2 / nun * (knj + 1.0) / knj
        loc[k, j] = (kappa0[j] * mu0[j] + sums[k, j]) / knj
        inv[k, j] = 1.0 / (nun * scale2)
        const[k, j] = (math.lgamma(0.5 * (nun + 1.0)) - math.lgamma(0.5 * nun)
                       - 0.5 * (math.log(nun) + _LOG_PI + math.log(scale2)))
    half[k] = 0.5 * (nun + 1.0)


@njit(cache=True)
def _logpred(x, k, loc, inv, const, half):
    total = 0.0
    for j in range(x.shape[0]):
        r = x[j] - loc[k, j]
        total += const[k, j] - half[k] * math.log1p(r * r * inv[k, j])
    return total


@njit(cache=True)
def gibbs_sweeps(X, z, mu0, kappa0, nu0, s0, alpha, uniforms, trace):
    """Run ``uniforms.shape[0]`` sweeps in place on the dense labels ``z``.

    ``trace`` is either ``(n_sweeps, N)`` (labels recorded after each sweep)
    or has zero rows.  Returns the final number of clusters.
    """
    N, d = X.shape
    cap = N + 1
    counts = np.zeros(cap, dtype=np.int64)
    sums = np.zeros((cap, d))
    sumsq = np.zeros((cap, d))
    loc = np.zeros((cap, d))
    inv = np.zeros((cap, d))
    const = np.zeros((cap, d))
    half = np.zeros(cap)
    lp = np.zeros(cap)

    K = 0
    for i in range(N):
        k = z[i]
        counts[k] += 1
        if k + 1 > K:
            K = k + 1
        for j in range(d):
            sums[k, j] += X[i, j]
            sumsq[k, j] += X[i, j] * X[i, j]
    for k in range(K):
        _refresh(k, counts, sums, sumsq, mu0, kappa0, nu0, s0, loc, inv, const, half)

    # prior predictive lives in a scratch slot at index N
    _refresh(N, counts, sums, sumsq, mu0, kappa0, nu0, s0, loc, inv, const, half)
    prior_lp = np.empty(N)
    for i in range(N):
        prior_lp[i] = _logpred(X[i], N, loc, inv, const, half)
    log_alpha = math.log(alpha)

    n_sweeps = uniforms.shape[0]
    record = trace.shape[0] > 0
    for it in range(n_sweeps):
        for i in range(N):
            x = X[i]
            k = z[i]
            counts[k] -= 1
            if counts[k] == 0:
                K -= 1
                if k != K:
                    counts[k] = counts[K]
                    for j in range(d):
                        sums[k, j] = sums[K, j]
                        sumsq[k, j] = sumsq[K, j]
                        loc[k, j] = loc[K, j]
                        inv[k, j] = inv[K, j]
                        const[k, j] = const[K, j]
                    half[k] = half[K]
                    for m in range(N):
                        if z[m] == K:
                            z[m] = k
                counts[K] = 0
                for j in range(d):
                    sums[K, j] = 0.0
                    sumsq[K, j] = 0.0
            else:
                for j in range(d):
                    sums[k, j] -= x[j]
                    sumsq[k, j] -= x[j] * x[j]
                _refresh(k, counts, sums, sumsq, mu0, kappa0, nu0, s0, loc, inv, const, half)

            mx = -np.inf
            for c in range(K):
                lp[c] = math.log(counts[c]) + _logpred(x, c, loc, inv, const, half)
                if lp[c] > mx:
                    mx = lp[c]
            lp[K] = log_alpha + prior_lp[i]
            if lp[K] > mx:
                mx = lp[K]
            total = 0.0
            for c in range(K + 1):
                lp[c] = math.exp(lp[c] - mx)
                total += lp[c]
            u = uniforms[it, i]
            acc = 0.0
            chosen = K
            for c in range(K + 1):
                acc += lp[c] / total
                if u < acc:
                    chosen = c
                    break

            if chosen == K:
                K += 1
            z[i] = chosen
            counts[chosen] += 1
            for j in range(d):
                sums[chosen, j] += x[j]
                sumsq[chosen, j] += x[j] * x[j]
            _refresh(chosen, counts, sums, sumsq, mu0, kappa0, nu0, s0, loc, inv, const, half)
        if record:
            for i in range(N):
                trace[it, i] = z[i]
    return K
