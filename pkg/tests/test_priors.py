import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsdprior.errors import (
    AsymmetricInput,
    InvalidConfig,
    NonPositiveDefinite,
    NonPositiveDefinitePrior,
    NonPositiveStdError,
    NonPositiveVariance,
    SchemaMismatch,
    UnknownPredictor,
)
from rsdprior.mle import CoefEstimate
from rsdprior.model import INTERCEPT, CovariateSchema
from rsdprior.priors import (
    LitStudyEntry,
    PriorSpec,
    is_positive_definite,
    lastz_prior,
    last_prior,
    lit_prior,
    probit_to_logit,
    pwp_prior,
    ridge_stabilize,
    standard_prior,
)


def est(beta, cov, quarter=None, schema_hash="h"):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return CoefEstimate(schema_hash, beta, cov, 100, True, -1.0, quarter)


def random_spd(rng, C, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(C, C)))
    eig = np.exp(rng.uniform(0, np.log(cond), C))
    V = (Q * eig) @ Q.T
    return 0.5 * (V + V.T)


# --- standard ---

def test_standard_prior():
    p = standard_prior(3)
    assert np.array_equal(p.mean, np.zeros(3))
    assert np.array_equal(p.cov, np.diag([1e6] * 3))
    q = standard_prior(1, 4.0)
    assert q.cov[0, 0] == 4.0
    with pytest.raises(InvalidConfig):
        standard_prior(0)


# --- ridge ---

def test_ridge_examples():
    V = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert np.allclose(ridge_stabilize(V, 0.2), [[1.0, 0.4], [0.4, 1.0]], atol=1e-15)
    D = np.diag([2.0, 3.0])
    assert np.array_equal(ridge_stabilize(D, 0.7), D)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.floats(0, 1))
def test_ridge_properties(seed, C, lam):
    V = random_spd(np.random.default_rng(seed), C)
    R = ridge_stabilize(V, lam)
    assert np.array_equal(R, R.T)
    assert np.array_equal(np.diag(R), np.diag(V))
    assert np.array_equal(ridge_stabilize(V, 0.0), V)
    off = ~np.eye(C, dtype=bool)
    assert np.allclose(ridge_stabilize(V, 0.003)[off], 0.997 * V[off], rtol=1e-14, atol=0)


def test_ridge_rejects_bad_input():
    with pytest.raises(InvalidConfig):
        ridge_stabilize(np.eye(2), 1.5)
    with pytest.raises(AsymmetricInput):
        ridge_stabilize(np.array([[1.0, 0.2], [0.1, 1.0]]), 0.1)


# --- pwp ---

def test_pwp_identical_fits_exact():
    rng = np.random.default_rng(0)
    V = random_spd(rng, 4)
    b = rng.normal(size=4)
    p = pwp_prior([est(b, V)] * 5, lam=0.0)
    assert np.max(np.abs(p.mean - b)) < 1e-12
    assert np.max(np.abs(p.cov - V)) < 1e-12


def test_pwp_identical_fits_default_lambda():
    rng = np.random.default_rng(1)
    V = random_spd(rng, 3)
    b = rng.normal(size=3)
    p = pwp_prior([est(b, V)] * 8)
    assert np.max(np.abs(p.mean - b)) < 1e-12
    assert np.max(np.abs(p.cov - ridge_stabilize(V, 0.003))) < 1e-12
    assert p.provenance["lambda"] == 0.003


def test_pwp_scalar_examples():
    p = pwp_prior([est(1.0, 1.0), est(3.0, 1.0)])
    assert p.mean[0] == pytest.approx(2.0, abs=1e-15) and p.cov[0, 0] == pytest.approx(1.0, abs=1e-15)
    p = pwp_prior([est(1.0, 1.0), est(3.0, 1 / 3)])
    assert p.mean[0] == pytest.approx(2.5, abs=1e-15) and p.cov[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_pwp_weights():
    # A zero weight drops that quarter entirely.
    p = pwp_prior([est(1.0, 1.0), est(3.0, 1.0), est(9.0, 2.0)], weights=[1, 1, 0])
    assert p.mean[0] == pytest.approx(2.0) and p.cov[0, 0] == pytest.approx(1.0)
    with pytest.raises(InvalidConfig):
        pwp_prior([est(1.0, 1.0)], weights=[0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(2, 6), st.floats(0.1, 50))
def test_pwp_permutation_and_scale(seed, C, Q, k):
    rng = np.random.default_rng(seed)
    fits = [est(rng.normal(size=C), random_spd(rng, C), quarter=q) for q in range(Q)]
    base = pwp_prior(fits)
    perm = pwp_prior([fits[i] for i in rng.permutation(Q)])
    assert np.allclose(perm.mean, base.mean, rtol=1e-10, atol=1e-12)
    assert np.allclose(perm.cov, base.cov, rtol=1e-10, atol=1e-12)
    scaled = pwp_prior([est(f.beta, k * f.cov) for f in fits])
    assert np.allclose(scaled.mean, base.mean, rtol=1e-9, atol=1e-10)
    assert np.allclose(scaled.cov, k * base.cov, rtol=1e-9, atol=1e-12)
    np.linalg.cholesky(base.cov)


def test_pwp_escalates_lambda_on_singular_cov():
    V = np.array([[1.0, 1.0], [1.0, 1.0]])
    p = pwp_prior([est([0.0, 0.0], V)], lam=0.0)
    assert p.provenance["lambda"] > 0
    assert p.provenance["lambda_requested"] == 0.0
    np.linalg.cholesky(p.cov)


def test_pwp_provenance_lists_quarters():
    fits = [est([0.1, 0.2], np.eye(2), quarter=q) for q in range(1, 9)]
    p = pwp_prior(fits)
    assert p.method == "pwp" and p.provenance["quarters"] == list(range(1, 9))


def test_pwp_rejects_mixed_schemas():
    with pytest.raises(SchemaMismatch):
        pwp_prior([est(1.0, 1.0, schema_hash="a"), est(1.0, 1.0, schema_hash="b")])


# --- last / lastz ---

def test_last_passthrough():
    rng = np.random.default_rng(2)
    f = est(rng.normal(size=3), random_spd(rng, 3), quarter=4)
    p = last_prior(f)
    assert np.array_equal(p.mean, f.beta) and np.array_equal(p.cov, f.cov)
    assert p.provenance["quarters"] == [4]


def test_last_rejects_near_singular():
    V = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(NonPositiveDefinite):
        last_prior(est([0.0, 0.0], V))


def test_lastz_examples():
    f = est([0.2, -0.1], [[1.0, 0.9], [0.9, 1.0]])
    assert np.array_equal(lastz_prior(f).cov, np.eye(2))
    g = est([0.2, -0.1], np.diag([0.5, 2.0]))
    a, b = lastz_prior(g), last_prior(g)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_lastz_always_pd(seed, C):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(C, 1))
    V = A @ A.T + 1e-300 * np.eye(C)  # rank one, positive diagonal
    V[np.diag_indices(C)] = np.abs(np.diag(V)) + 1e-6
    p = lastz_prior(est(np.zeros(C), V))
    np.linalg.cholesky(p.cov)


def test_lastz_rejects_zero_variance():
    with pytest.raises(NonPositiveVariance):
        lastz_prior(est([0.0, 0.0], np.diag([1.0, 0.0])))


# --- probit and lit ---

@pytest.mark.parametrize(
    "inp, out", [((0.5, 0.1), (0.805, 0.161)), ((0.0, 0.3), (0.0, 1.61 * 0.3)), ((-1.0, 0.2), (-1.61, 0.322))]
)
def test_probit_to_logit(inp, out):
    e, s = probit_to_logit(*inp)
    assert e == pytest.approx(out[0], abs=1e-15) and s == pytest.approx(out[1], abs=1e-15)


def test_probit_rejects_nonpositive_se():
    with pytest.raises(NonPositiveStdError):
        probit_to_logit(1.0, 0.0)


SCHEMA = CovariateSchema.numeric(["a", "b", "c"])


def entry(pred, est_, se, scale="logit", study="s"):
    return LitStudyEntry(study, 2010, pred, scale, est_, se)


def test_lit_pooled_example():
    p = lit_prior([entry("a", 0.2, 0.1), entry("a", 0.4, np.sqrt(0.03))], SCHEMA)
    j = SCHEMA.coefficient_index("a")
    assert p.mean[j] == pytest.approx(0.3, abs=1e-15)
    assert p.cov[j, j] == pytest.approx(0.02, abs=1e-15)


def test_lit_probit_entry_and_fallback():
    p = lit_prior([entry("b", 0.5, 0.1, "probit")], SCHEMA)
    j = SCHEMA.coefficient_index("b")
    assert p.mean[j] == pytest.approx(0.805, abs=1e-15)
    assert p.cov[j, j] == pytest.approx(0.161**2, abs=1e-15)
    for name in (INTERCEPT, "a", "c"):
        k = SCHEMA.coefficient_index(name)
        assert p.mean[k] == 0.0 and p.cov[k, k] == 10.0
    assert p.is_diagonal


def test_lit_intercept_can_be_matched():
    p = lit_prior([entry(INTERCEPT, -1.0, 0.5)], SCHEMA)
    assert p.mean[0] == -1.0 and p.cov[0, 0] == 0.25


def test_lit_unknown_predictor():
    with pytest.raises(UnknownPredictor):
        lit_prior([entry("zzz", 0.1, 0.1)], SCHEMA)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["a", "b", "c"]), st.floats(-3, 3), st.floats(0.01, 2), st.booleans()),
        min_size=1,
        max_size=12,
    ),
    st.randoms(use_true_random=False),
    st.integers(0, 12),
)
def test_lit_order_and_split_invariance(rows, rnd, cut):
    entries = [entry(p, e, s, "probit" if pr else "logit") for p, e, s, pr in rows]
    base = lit_prior(entries, SCHEMA)
    shuffled = entries[:]
    rnd.shuffle(shuffled)
    other = lit_prior(shuffled, SCHEMA)
    split = lit_prior(entries[:cut] + entries[cut:], SCHEMA)
    for p in (other, split):
        assert np.allclose(p.mean, base.mean, rtol=1e-12, atol=1e-14)
        assert np.allclose(p.cov, base.cov, rtol=1e-12, atol=1e-14)
    np.linalg.cholesky(base.cov)


# --- PriorSpec ---

def test_prior_json_round_trip():
    for p in (standard_prior(3), pwp_prior([est([1.0, 2.0], [[1.0, 0.3], [0.3, 2.0]])])):
        back = PriorSpec.from_json_obj(p.to_json_obj())
        assert np.array_equal(back.mean, p.mean) and np.array_equal(back.cov, p.cov)
        assert back.method == p.method


def test_prior_precision_requires_pd():
    p = PriorSpec(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), "last")
    assert not is_positive_definite(p.cov)
    with pytest.raises(NonPositiveDefinitePrior):
        p.precision
