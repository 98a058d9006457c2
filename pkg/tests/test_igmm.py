import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import gammaln

from pue_transfer.core import DomainError, Labeling, TimeFrame, compact_labels
from pue_transfer.igmm import (ClusterStats, GibbsConfig, Hyperparameters, beta_function, crp_assignment_probs,
                               dirichlet_density, gibbs_cluster, posterior_predictive_logdensity, run_sweeps)
from pue_transfer.metrics import hit_rate


def hp1(mu0=0.0, kappa0=1.0, nu0=1.0, s0=1.0, alpha=1.0):
    return Hyperparameters((mu0,), kappa0, nu0, (s0,), alpha).resolve(np.zeros((1, 1)))


# --- Dirichlet / Beta -------------------------------------------------------------

def test_beta_function_values():
    assert beta_function([1, 1]) == pytest.approx(1.0, rel=1e-12)
    assert beta_function([2, 2]) == pytest.approx(1 / 6, rel=1e-12)
    assert beta_function([1, 1, 1]) == pytest.approx(0.5, rel=1e-12)


def test_beta_function_matches_gamma_ratio():
    a = [0.3, 2.5, 4.0]
    expect = math.prod(math.gamma(v) for v in a) / math.gamma(sum(a))
    assert beta_function(a) == pytest.approx(expect, rel=1e-12)


def test_beta_function_rejects_non_positive():
    with pytest.raises(DomainError):
        beta_function([1, 0])


def test_dirichlet_density_values():
    assert dirichlet_density([0.5, 0.5], [1, 1]) == pytest.approx(1.0, rel=1e-12)
    assert dirichlet_density([0.5, 0.5], [2, 2]) == pytest.approx(1.5, rel=1e-12)
    assert dirichlet_density([0.2, 0.8], [1, 1]) == pytest.approx(1.0, rel=1e-12)


def test_dirichlet_uses_per_component_exponent():
    w, a = [0.2, 0.3, 0.5], [2.0, 3.0, 0.5]
    assert dirichlet_density(w, a) == pytest.approx(stats.dirichlet.pdf(w, a), rel=1e-10)


def test_dirichlet_domain_errors():
    with pytest.raises(DomainError):
        dirichlet_density([0.5, 0.6], [1, 1])
    with pytest.raises(DomainError):
        dirichlet_density([0.0, 1.0], [1, 1])
    with pytest.raises(DomainError):
        dirichlet_density([0.5, 0.5], [1, -1])
    with pytest.raises(DomainError):
        dirichlet_density([0.5, 0.5], [1, 1, 1])


def test_hyperparameter_validation():
    for bad in ({"kappa0": 0}, {"nu0": 0}, {"sigma0_sq": (0.0,)}, {"alpha": 0}):
        with pytest.raises(DomainError):
            Hyperparameters(**bad)


def test_hyperparameter_defaults_follow_frame():
    x = np.array([[0.0, 1.0], [2.0, 5.0]])
    hp = Hyperparameters().resolve(x)
    assert np.allclose(hp.mu0, [1.0, 3.0])
    assert np.allclose(hp.sigma0_sq, [1.0, 4.0])
    assert hp.alpha == 1.0 and hp.nu0 == 1.0 and np.allclose(hp.kappa0, 1.0)


# --- sufficient statistics ---------------------------------------------------------

def test_cluster_stats_round_trip():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(20, 3)) * 100
    st_ = ClusterStats.of(pts[:5])
    ref = ClusterStats.of(pts[:5])
    for p in pts[5:]:
        st_.add(p)
    for p in pts[5:][::-1]:
        st_.remove(p)
    assert st_.count == ref.count
    assert np.allclose(st_.sum, ref.sum, atol=1e-9, rtol=0)
    assert np.allclose(st_.sum_sq, ref.sum_sq, atol=1e-9, rtol=0)


def test_cluster_stats_empty_resets_exactly():
    st_ = ClusterStats.empty(2)
    st_.add(np.array([0.1, 0.7]))
    st_.add(np.array([1e8, -3.3]))
    st_.remove(np.array([1e8, -3.3]))
    st_.remove(np.array([0.1, 0.7]))
    assert st_.count == 0 and not st_.sum.any() and not st_.sum_sq.any()
    with pytest.raises(ValueError):
        st_.remove(np.array([0.0, 0.0]))


# --- posterior predictive ---------------------------------------------------------

def test_empty_cluster_is_prior_predictive():
    hp = hp1(mu0=1.0, s0=2.0)
    x = np.array([0.3])
    # prior predictive: Student-t, nu0 dof, loc mu0, scale^2 s0 (k0+1)/k0
    expect = stats.t.logpdf(0.3, df=1.0, loc=1.0, scale=math.sqrt(2.0 * 2.0))
    assert posterior_predictive_logdensity(ClusterStats.empty(1), x, hp) == pytest.approx(expect, rel=1e-12)


def test_tight_cluster_beats_prior_at_its_location():
    x = np.array([3.0, -1.0, 2.0])
    hp = Hyperparameters().resolve(np.random.default_rng(0).normal(size=(50, 3)) * 4)
    full = ClusterStats.of(np.tile(x, (10, 1)))
    assert posterior_predictive_logdensity(full, x, hp) > posterior_predictive_logdensity(ClusterStats.empty(3), x, hp)


def test_predictive_matches_quadrature_oracle():
    """Integrate N(x|mu,s2) against the normalised posterior over (mu, s2) numerically."""
    mu0, k0, nu0, s0 = 0.5, 2.0, 3.0, 1.5
    data = np.array([0.2, 1.4, -0.3, 0.9])
    x = 1.1

    mu = np.linspace(-9.0, 6.0, 2001)[:, None]
    t = np.linspace(-10.0, 8.0, 2001)[None, :]  # t = log s2
    s2 = np.exp(t)
    log_post = (stats.invgamma.logpdf(s2, a=nu0 / 2, scale=nu0 * s0 / 2)
                + stats.norm.logpdf(mu, mu0, np.sqrt(s2 / k0))
                + stats.norm.logpdf(data[:, None, None], mu, np.sqrt(s2)).sum(axis=0) + t)
    w = np.exp(log_post - log_post.max())
    like_x = stats.norm.pdf(x, mu, np.sqrt(s2))
    num = integrate.simpson(integrate.simpson(w * like_x, x=t[0], axis=1), x=mu[:, 0])
    den = integrate.simpson(integrate.simpson(w, x=t[0], axis=1), x=mu[:, 0])
    got = math.exp(posterior_predictive_logdensity(ClusterStats.of(data[:, None]), np.array([x]),
                                                   hp1(mu0, k0, nu0, s0)))
    assert got == pytest.approx(num / den, rel=1e-4)


def log_marginal(points, mu0=0.0, k0=1.0, nu0=1.0, s0=1.0):
    """Closed-form NIX marginal likelihood of a 1-d cluster."""
    x = np.asarray(points, dtype=float)
    n = x.size
    kn, nun = k0 + n, nu0 + n
    xbar = x.mean()
    nus = nu0 * s0 + ((x - xbar) ** 2).sum() + n * k0 / kn * (xbar - mu0) ** 2
    return (gammaln(nun / 2) - gammaln(nu0 / 2) + 0.5 * math.log(k0 / kn)
            + nu0 / 2 * math.log(nu0 * s0) - nun / 2 * math.log(nus) - n / 2 * math.log(math.pi))


def test_predictive_chain_rule_equals_marginal_likelihood():
    pts = [0.4, -1.2, 2.2, 0.9, 0.0]
    hp = hp1(0.3, 1.5, 2.0, 0.8)
    total, st_ = 0.0, ClusterStats.empty(1)
    for p in pts:
        total += posterior_predictive_logdensity(st_, np.array([p]), hp)
        st_.add(np.array([p]))
    assert total == pytest.approx(log_marginal(pts, 0.3, 1.5, 2.0, 0.8), rel=1e-10)


# --- CRP conditional ----------------------------------------------------------------

def test_crp_single_point_opens_new_cluster():
    cands, probs = crp_assignment_probs(np.array([[0.0]]), 0, [0], {}, hp1())
    assert cands == [None] and probs.tolist() == [1.0]


def test_crp_symmetric_clusters_tie():
    x = np.array([[-1.0], [1.0], [0.0]])
    st_ = {0: ClusterStats.of(x[:1]), 1: ClusterStats.of(x[1:2])}
    cands, probs = crp_assignment_probs(x, 2, [0, 1, 2], st_, hp1())
    assert cands == [0, 1, None]
    assert probs[0] == pytest.approx(probs[1], rel=1e-12)


def test_crp_three_point_hand_enumeration():
    x = np.array([[0.0], [0.5], [3.0]])
    hp = hp1(mu0=1.0, kappa0=1.0, nu0=1.0, s0=1.0, alpha=1.0)
    st_ = {0: ClusterStats.of(x[:2])}
    _, probs = crp_assignment_probs(x, 2, [0, 0, 2], st_, hp)
    # by hand: n_k/(N-1+alpha) * t-predictive, alpha/(N-1+alpha) * prior predictive
    kn, nun = 3.0, 3.0
    mun = (1.0 + 0.5) / kn
    nus = 1.0 + 0.125 + 2 * 1 / kn * (0.25 - 1.0) ** 2
    join = 2 / 3 * stats.t.pdf(3.0, nun, mun, math.sqrt(nus / nun * (kn + 1) / kn))
    new = 1 / 3 * stats.t.pdf(3.0, 1.0, 1.0, math.sqrt(2.0))
    assert probs == pytest.approx([join / (join + new), new / (join + new)], abs=1e-9)


def test_crp_probs_well_formed_randomised():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        x = rng.normal(scale=rng.uniform(0.1, 1e3), size=(n, 2))
        z = rng.integers(0, 3, size=n)
        i = int(rng.integers(n))
        st_ = {}
        for j in range(n):
            if j != i:
                st_.setdefault(int(z[j]), ClusterStats.empty(2)).add(x[j])
        hp = Hyperparameters(alpha=float(rng.uniform(0.01, 10))).resolve(x)
        _, p = crp_assignment_probs(x, i, z, st_, hp)
        assert np.all(np.isfinite(p)) and np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-9


def test_crp_far_outlier_does_not_underflow():
    x = np.array([[0.0], [0.1], [1e6]])
    st_ = {0: ClusterStats.of(x[:2])}
    _, p = crp_assignment_probs(x, 2, [0, 0, 1], st_, hp1())
    assert np.all(np.isfinite(p)) and p[-1] == pytest.approx(1.0)


# --- sampler ---------------------------------------------------------------------

def test_gibbs_config_validation():
    with pytest.raises(ValueError):
        GibbsConfig(max_iterations=0)
    with pytest.raises(ValueError):
        GibbsConfig(init_mode="bogus")


def test_single_fingerprint_one_cluster():
    lab = gibbs_cluster(TimeFrame(np.zeros((1, 3)), ["a"]), seed=3)
    assert lab.labels == (0,)


def test_same_seed_same_labels():
    x = np.random.default_rng(2).normal(size=(60, 3)) * 3
    frame = TimeFrame(x, ["a"] * 60)
    assert gibbs_cluster(frame, seed=9) == gibbs_cluster(frame, seed=9)


@pytest.mark.parametrize("mode", ["all-in-one", "one-each", "random-k"])
def test_labels_are_compact(mode):
    x = np.random.default_rng(4).normal(size=(40, 2)) * 5
    lab = gibbs_cluster(x, cfg=GibbsConfig(20, mode, 3), seed=1)
    assert lab.label_space == set(range(lab.n_labels))
    assert lab.labels == compact_labels(lab.labels)


@pytest.mark.parametrize("mode", ["all-in-one", "one-each", "random-k"])
def test_backends_agree(mode):
    x = np.random.default_rng(5).normal(size=(25, 2)) * 2
    hp = Hyperparameters().resolve(x)
    cfg = GibbsConfig(8, mode, 3)
    za, ta = run_sweeps(x, hp, 8, np.random.default_rng(1), cfg=cfg, record=True, backend="numba")
    zb, tb = run_sweeps(x, hp, 8, np.random.default_rng(1), cfg=cfg, record=True, backend="python")
    assert np.array_equal(za, zb) and np.array_equal(ta, tb)


def test_two_far_devices_recovered():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 1, (50, 3)), rng.normal(100, 1, (50, 3))])
    truth = Labeling([0] * 50 + [1] * 50)
    lab = gibbs_cluster(x, cfg=GibbsConfig(30), seed=0)
    assert lab.n_labels == 2
    assert hit_rate(lab, truth) == 1.0


def exact_partition_probs(points, hp_kw):
    n = len(points)
    out = {}
    # every labeling in canonical (first-appearance) form is one set partition
    for z in itertools.product(range(n), repeat=n):
        if compact_labels(z) != z:
            continue
        logp = 0.0
        for k in set(z):
            members = [points[i] for i in range(n) if z[i] == k]
            logp += math.log(hp_kw["alpha"]) + gammaln(len(members)) + log_marginal(
                members, hp_kw["mu0"], hp_kw["kappa0"], hp_kw["nu0"], hp_kw["s0"])
        out[z] = logp
    m = max(out.values())
    tot = sum(math.exp(v - m) for v in out.values())
    return {z: math.exp(v - m) / tot for z, v in out.items()}


def test_three_point_stationary_distribution():
    pts = [-1.0, 0.2, 2.0]
    kw = dict(mu0=0.0, kappa0=1.0, nu0=1.0, s0=1.0, alpha=1.0)
    exact = exact_partition_probs(pts, kw)
    assert len(exact) == 5
    hp = hp1(kw["mu0"], kw["kappa0"], kw["nu0"], kw["s0"], kw["alpha"])
    _, trace = run_sweeps(np.array(pts)[:, None], hp, 100_000, np.random.default_rng(2024), record=True)
    counts: dict = {}
    for row in trace:
        key = compact_labels(row)
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(counts.get(z, 0) / len(trace) - p) for z, p in exact.items())
    assert tv <= 0.02


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_gibbs_output_is_a_valid_labeling(n, seed):
    x = np.random.default_rng(seed).normal(size=(n, 2))
    lab = gibbs_cluster(x, cfg=GibbsConfig(3), seed=seed)
    assert len(lab) == n
    assert lab.label_space == set(range(lab.n_labels))
