import json

import numpy as np
import pytest

from helpers import FIXTURES, check_golden, jacobi_eigh, make_samples
from inlineperf.dataset import CollectConfig, autotune_collect, dedup
from inlineperf.generate import GenConfig, generate_program
from inlineperf.ir import SchemaError
from inlineperf.preprocess import (
    N_COMPONENTS,
    PreprocessError,
    PreprocessState,
    fit_preprocess,
    transform,
    transform_samples,
)


def random_matrix(seed=0, n=40, d=20):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0, d) + rng.normal(size=d)


def test_needs_eight_distinct_rows():
    X = np.tile(np.arange(20.0), (10, 1))  # ten copies of one row
    with pytest.raises(PreprocessError):
        fit_preprocess(X)
    with pytest.raises(PreprocessError):
        fit_preprocess(random_matrix(n=7))


def test_components_orthonormal_and_variances_descending():
    ps = fit_preprocess(random_matrix())
    gram = ps.components @ ps.components.T
    assert np.allclose(gram, np.eye(N_COMPONENTS), atol=1e-9)
    assert all(a >= b for a, b in zip(ps.variances, ps.variances[1:]))
    assert np.all(ps.variances >= 0.0)


def test_axis_aligned_variance_gives_signed_basis_vector():
    # Only axis 0 varies; the rest are constant. The first component must be
    # +e0 under the largest-entry-positive sign rule.
    X = np.zeros((10, 20))
    X[:, 0] = np.arange(10.0)
    ps = fit_preprocess(X)
    e0 = np.zeros(20)
    e0[0] = 1.0
    assert np.allclose(ps.components[0], e0, atol=1e-9)
    assert ps.constant[1] and not ps.constant[0]
    assert np.all(ps.std[1:] == 1.0)


def test_sign_rule_flips_negative_dominant_entries():
    ps = fit_preprocess(random_matrix(seed=3))
    for row in ps.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_rank_two_data_concentrates_variance():
    rng = np.random.default_rng(11)
    u = rng.normal(size=20)
    v = rng.normal(size=20)
    coeffs = rng.normal(size=(60, 2)) * [5.0, 2.0]
    X = np.outer(coeffs[:, 0], u) + np.outer(coeffs[:, 1], v)
    ps = fit_preprocess(X)
    assert np.all(ps.variances[2:] <= 1e-9)
    assert ps.variances[0] > ps.variances[1] > 1e-6


def test_variances_match_jacobi_oracle():
    X = random_matrix(seed=5, n=50)
    ps = fit_preprocess(X)
    Z = (X - ps.mean) / ps.std
    cov = np.cov(Z, rowvar=False, ddof=1)
    oracle_vals, oracle_vecs = jacobi_eigh(cov)
    assert np.allclose(ps.variances, oracle_vals[:N_COMPONENTS], atol=1e-9)
    # Each production component must live in the oracle's eigenspace: its
    # image under the covariance equals eigenvalue times itself.
    for var, comp in zip(ps.variances, ps.components):
        assert np.allclose(cov @ comp, var * comp, atol=1e-8)
    gram = oracle_vecs[:N_COMPONENTS] @ oracle_vecs[:N_COMPONENTS].T
    assert np.allclose(gram, np.eye(N_COMPONENTS), atol=1e-8)


def test_transform_of_mean_is_zero():
    ps = fit_preprocess(random_matrix())
    assert np.allclose(transform(ps, ps.mean), np.zeros(N_COMPONENTS), atol=1e-12)


def test_transform_is_affine_linear():
    ps = fit_preprocess(random_matrix(seed=7))
    rng = np.random.default_rng(1)
    a = rng.normal(size=20)
    b = rng.normal(size=20)
    lhs = transform(ps, a) + transform(ps, b)
    rhs = transform(ps, a + b - ps.mean)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_transform_handles_matrices():
    ps = fit_preprocess(random_matrix())
    X = random_matrix(seed=2, n=5)
    out = transform(ps, X)
    assert out.shape == (5, N_COMPONENTS)
    assert np.allclose(out[0], transform(ps, X[0]))


def test_stored_variances_match_empirical():
    X = random_matrix(seed=9, n=80)
    ps = fit_preprocess(X)
    projected = transform(ps, X)
    empirical = projected.var(axis=0, ddof=1)
    assert np.allclose(empirical, ps.variances, atol=1e-6)


def test_fit_accepts_training_samples():
    samples = make_samples(random_matrix(seed=4, n=12))
    ps = fit_preprocess(samples)
    assert transform_samples(ps, samples).shape == (12, N_COMPONENTS)


def test_json_roundtrip_is_byte_stable():
    ps = fit_preprocess(random_matrix(seed=6))
    text = ps.to_json()
    again = PreprocessState.from_obj(json.loads(text))
    assert again.to_json() == text
    assert np.array_equal(again.components, ps.components)


def test_schema_tag_checked():
    ps = fit_preprocess(random_matrix())
    obj = ps.to_obj()
    obj["schema"] = "preproc/9"
    with pytest.raises(SchemaError):
        PreprocessState.from_obj(obj)


def test_bad_shapes_rejected():
    ps = fit_preprocess(random_matrix())
    obj = ps.to_obj()
    obj["components"] = obj["components"][:3]
    with pytest.raises(SchemaError):
        PreprocessState.from_obj(obj)


def test_fit_on_collected_corpus_golden():
    samples = []
    for seed in range(3):
        m = generate_program(
            GenConfig(seed=seed, n_functions=4, callsite_density=0.5, loop_probability=0.2)
        )
        samples.extend(
            autotune_collect(m, CollectConfig(iterations=10, seed=seed), program_id=f"p{seed}")
        )
    samples = dedup(samples)
    assert len(samples) >= 8
    ps = fit_preprocess(samples)
    probe = transform(ps, np.array(samples[0].features))
    lines = [" ".join(f"{v:.9g}" for v in ps.variances)]
    lines.append(" ".join(f"{v:.9g}" for v in probe))
    check_golden(FIXTURES / "golden_preprocess.txt", "\n".join(lines) + "\n")
