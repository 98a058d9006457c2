"""Infinite Gaussian mixture clustering by collapsed Gibbs sampling.

Each feature dimension carries an independent Normal-Inverse-Chi^2 prior,
so component means and variances integrate out and the posterior predictive
of a cluster is a product of univariate Student-t densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import DimensionError, DomainError, Labeling, TimeFrame, compact_labels, seeded_rng

INIT_MODES = ("all-in-one", "one-each", "random-k")


def log_beta_function(alphas) -> float:
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 1 or a.size == 0 or np.any(~(a > 0)):
        raise DomainError("beta function needs a non-empty vector of positive reals")
    return float(np.sum(gammaln(a)) - gammaln(np.sum(a)))


def beta_function(alphas) -> float:
    """Multivariate beta function ``prod Gamma(a_i) / Gamma(sum a_i)``."""
    return math.exp(log_beta_function(alphas))


def dirichlet_density(weights, alphas) -> float:
    """Dirichlet density at a point of the open simplex.

    Each factor uses its own exponent ``alpha_i - 1``.
    """
    w = np.asarray(weights, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    if w.shape != a.shape or w.ndim != 1:
        raise DomainError("weights and alphas must be vectors of equal length")
    if np.any(~(a > 0)):
        raise DomainError("alphas must be strictly positive")
    if np.any(~(w > 0)) or abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise DomainError("weights must be strictly positive and sum to 1")
    return math.exp(float(np.sum((a - 1.0) * np.log(w))) - log_beta_function(a))


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings. ``None`` for ``mu0``/``sigma0_sq`` means "derive from the frame"."""

    mu0: tuple[float, ...] | None = None
    kappa0: float | tuple[float, ...] = 1.0
    nu0: float = 1.0
    sigma0_sq: tuple[float, ...] | None = None
    alpha: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.kappa0, dtype=float) <= 0):
            raise DomainError("kappa0 must be positive")
        if not self.nu0 > 0:
            raise DomainError("nu0 must be positive")
        if self.sigma0_sq is not None and np.any(np.asarray(self.sigma0_sq, dtype=float) <= 0):
            raise DomainError("sigma0_sq must be positive component-wise")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")

    def resolve(self, features: np.ndarray) -> "ResolvedHyper":
        """Fill frame-dependent defaults for a ``(S, d)`` feature array."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        d = x.shape[1]
        mu0 = x.mean(axis=0) if self.mu0 is None else np.asarray(self.mu0, dtype=np.float64)
        if self.sigma0_sq is None:
            s0 = x.var(axis=0) if x.shape[0] > 1 else np.ones(d)
            s0 = np.where(s0 > 0, s0, 1.0)
        else:
            s0 = np.asarray(self.sigma0_sq, dtype=np.float64)
        kappa0 = np.broadcast_to(np.asarray(self.kappa0, dtype=np.float64), (d,)).copy()
        s0 = np.broadcast_to(s0, (d,)).copy()
        if mu0.shape != (d,):
            raise DimensionError(f"mu0 has dimension {mu0.shape}, frame has {d}")
        return ResolvedHyper(mu0, kappa0, float(self.nu0), s0, float(self.alpha))


@dataclass(frozen=True)
class ResolvedHyper:
    mu0: np.ndarray
    kappa0: np.ndarray
    nu0: float
    sigma0_sq: np.ndarray
    alpha: float

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]


def _as_resolved(hp, d: int | None = None) -> ResolvedHyper:
    if isinstance(hp, ResolvedHyper):
        return hp
    if hp.mu0 is None or hp.sigma0_sq is None:
        raise ValueError("hyperparameters must be resolved against a frame first")
    return hp.resolve(np.zeros((1, len(hp.mu0))))


@dataclass
class ClusterStats:
    """Sufficient statistics of one cluster: count, sum and per-dimension sum of squares."""

    count: int
    sum: np.ndarray
    sum_sq: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "ClusterStats":
        return cls(0, np.zeros(d), np.zeros(d))

    @classmethod
    def of(cls, points) -> "ClusterStats":
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(x.shape[0], x.sum(axis=0), (x * x).sum(axis=0))

    def add(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        self.sum = self.sum + x
        self.sum_sq = self.sum_sq + x * x

    def remove(self, x) -> None:
        if self.count <= 0:
            raise ValueError("cannot remove from an empty cluster")
        x = np.asarray(x, dtype=np.float64)
        self.count -= 1
        if self.count == 0:
            self.sum = np.zeros_like(self.sum)
            self.sum_sq = np.zeros_like(self.sum_sq)
        else:
            self.sum = self.sum - x
            self.sum_sq = self.sum_sq - x * x


def student_t_params(stats: ClusterStats, hp: ResolvedHyper):
    """Location, squared scale and degrees of freedom of the per-dimension predictive."""
    n = stats.count
    kn = hp.kappa0 + n
    nun = hp.nu0 + n
    if n > 0:
        xbar = stats.sum / n
        ss = np.maximum(stats.sum_sq - stats.sum * xbar, 0.0)
        nus2 = hp.nu0 * hp.sigma0_sq + ss + n * hp.kappa0 / kn * (xbar - hp.mu0) ** 2
    else:
        nus2 = hp.nu0 * hp.sigma0_sq
    loc = (hp.kappa0 * hp.mu0 + stats.sum) / kn
    scale2 = nus2 / nun * (kn + 1.0) / kn
    return loc, scale2, nun


def posterior_predictive_logdensity(stats: ClusterStats, x, hp) -> float:
    """Log predictive density of ``x`` for a new member of the cluster ``stats``."""
    hp = _as_resolved(hp)
    v = x.vector() if hasattr(x, "vector") else np.asarray(x, dtype=np.float64)
    if v.shape != (hp.dim,) or stats.sum.shape != (hp.dim,):
        raise DimensionError(f"expected dimension {hp.dim}")
    loc, scale2, df = student_t_params(stats, hp)
    z2 = (v - loc) ** 2 / (df * scale2)
    per_dim = (gammaln(0.5 * (df + 1.0)) - gammaln(0.5 * df)
               - 0.5 * np.log(df * np.pi * scale2) - 0.5 * (df + 1.0) * np.log1p(z2))
    return float(np.sum(per_dim))


def crp_assignment_probs(features, index: int, labels: Sequence[int],
                         stats_by_label: Mapping[int, ClusterStats], hp) -> tuple[list, np.ndarray]:
    """Conditional assignment distribution for the item at ``index``.

    ``stats_by_label`` must already exclude that item.  Returns the candidate
    labels (existing non-empty clusters in mapping order, then ``None`` for a
    new cluster) and the matching normalised probabilities.
    """
    x = np.asarray(features, dtype=np.float64)[index]
    hp = _as_resolved(hp)
    cands = [lab for lab, st in stats_by_label.items() if st.count > 0]
    logp = np.empty(len(cands) + 1)
    for c, lab in enumerate(cands):
        st = stats_by_label[lab]
        logp[c] = math.log(st.count) + posterior_predictive_logdensity(st, x, hp)
    logp[-1] = math.log(hp.alpha) + posterior_predictive_logdensity(ClusterStats.empty(hp.dim), x, hp)
    probs = np.exp(logp - logsumexp(logp))
    return cands + [None], probs


@dataclass(frozen=True)
class GibbsConfig:
    max_iterations: int = 50
    init_mode: str = "one-each"
    init_k: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.init_mode == "random-k" and self.init_k < 1:
            raise ValueError("init_k must be at least 1")


def _initial_labels(n: int, cfg: GibbsConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init_mode == "all-in-one":
        return np.zeros(n, dtype=np.int64)
    if cfg.init_mode == "one-each":
        return np.arange(n, dtype=np.int64)
    z = rng.integers(0, cfg.init_k, size=n)
    return np.asarray(compact_labels(z), dtype=np.int64)


def _features_of(frame) -> np.ndarray:
    if isinstance(frame, TimeFrame):
        return frame.features
    return np.atleast_2d(np.asarray(frame, dtype=np.float64))


def _python_sweeps(x, z, hp, uniforms, trace):
    """Reference sweeps built on :func:`crp_assignment_probs`; mirrors the kernel's slot handling."""
    n, d = x.shape
    stats = {}
    for i in range(n):
        stats.setdefault(int(z[i]), ClusterStats.empty(d)).add(x[i])
    stats = dict(sorted(stats.items()))
    for it in range(uniforms.shape[0]):
        for i in range(n):
            k = int(z[i])
            stats[k].remove(x[i])
            if stats[k].count == 0:
                last = len(stats) - 1
                if k != last:
                    stats[k] = stats[last]
                    z[z == last] = k
                del stats[last]
            cands, probs = crp_assignment_probs(x, i, z, stats, hp)
            chosen = len(cands) - 1
            acc = 0.0
            for c, p in enumerate(probs):
                acc += p
                if uniforms[it, i] < acc:
                    chosen = c
                    break
            if cands[chosen] is None:
                label = len(stats)
                stats[label] = ClusterStats.empty(d)
            else:
                label = cands[chosen]
            z[i] = label
            stats[label].add(x[i])
        if trace.shape[0]:
            trace[it] = z
    return len(stats)


def run_sweeps(features, hp, n_sweeps: int, rng: np.random.Generator,
               init: np.ndarray | None = None, cfg: GibbsConfig | None = None,
               record: bool = False, backend: str = "numba"):
    """Low-level entry point: returns ``(final_labels, trace)``.

    ``trace`` holds the labels after each sweep when ``record`` is set,
    otherwise it is empty.
    """
    x = np.ascontiguousarray(_features_of(features), dtype=np.float64)
    n = x.shape[0]
    if isinstance(hp, Hyperparameters):
        hp = hp.resolve(x)
    if hp.dim != x.shape[1]:
        raise DimensionError(f"hyperparameters have dimension {hp.dim}, frame has {x.shape[1]}")
    cfg = cfg or GibbsConfig(max_iterations=n_sweeps)
    z = _initial_labels(n, cfg, rng) if init is None else np.array(compact_labels(init), dtype=np.int64)
    uniforms = rng.random((n_sweeps, n))
    trace = np.zeros((n_sweeps if record else 0, n), dtype=np.int64)
    if backend == "numba":
        from ._kernel import gibbs_sweeps
        gibbs_sweeps(x, z, hp.mu0, hp.kappa0, hp.nu0, hp.sigma0_sq, hp.alpha, uniforms, trace)
    elif backend == "python":
        _python_sweeps(x, z, hp, uniforms, trace)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return z, trace


def gibbs_cluster(frame, hp: Hyperparameters | ResolvedHyper | None = None,
                  cfg: GibbsConfig | None = None, seed=0, backend: str = "numba") -> Labeling:
    """Cluster a frame's fingerprints; labels come back compacted to ``0..K-1``.

    ``seed`` is an integer or a ``numpy.random.Generator``.  The output is the
    labeling after the last of ``cfg.max_iterations`` sweeps.
    """
    cfg = cfg or GibbsConfig()
    hp = hp or Hyperparameters()
    rng = seed if isinstance(seed, np.random.Generator) else seeded_rng(int(seed))
    z, _ = run_sweeps(frame, hp, cfg.max_iterations, rng, cfg=cfg, backend=backend)
    return Labeling(compact_labels(z.tolist()))
