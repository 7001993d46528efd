import numpy as np
import pytest

from editleak.editors import Method
from editleak.errors import InvalidInputError, ResourceError
from editleak.worldsim import (
    WorldConfig,
    dump_batch,
    dump_world,
    extract_key,
    invariance_report,
    load_batch,
    load_world,
    new_world,
    next_token_dist,
    rng_stream,
    shannon_entropy,
    synthesize_edit_batch,
)


def cos(a, b):
    return float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))


def test_world_is_deterministic():
    a = new_world(WorldConfig(d_in=16, d_out=12, vocab=32, n_subjects=20, n_templates=3, seed=5))
    b = new_world(WorldConfig(d_in=16, d_out=12, vocab=32, n_subjects=20, n_templates=3, seed=5))
    for name in ("subject_embeddings", "template_a", "template_b", "w", "u"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_world_is_read_only(world):
    with pytest.raises(ValueError):
        world.w[0, 0] = 1.0


def test_eta_zero_collapses_templates():
    w = new_world(WorldConfig(d_in=16, d_out=12, vocab=32, n_subjects=8, n_templates=4, eta=0))
    for t in range(4):
        np.testing.assert_array_equal(extract_key(w, 3, t), w.subject_embeddings[:, 3])


def test_subject_embeddings_near_orthogonal():
    w = new_world(WorldConfig(d_in=64, seed=1))
    g = w.subject_embeddings.T @ w.subject_embeddings
    np.testing.assert_allclose(np.diag(g), 1.0)
    np.fill_diagonal(g, 0)
    assert np.max(np.abs(g)) <= 0.6


def test_key_invariance_and_separation():
    w = new_world(WorldConfig(d_in=64, eta=0.05, seed=1))
    assert cos(extract_key(w, 0, 0), extract_key(w, 0, 1)) >= 0.9
    assert cos(extract_key(w, 0, 0), extract_key(w, 1, 0)) <= 0.7


def test_default_world_invariance(world):
    # Default eta = 0.2 still keeps subjects recognisable across templates.
    inv = invariance_report(world, range(32), range(world.n_templates))
    assert np.min(np.diag(inv)) >= 0.85


def test_invariance_report_small_eta():
    w = new_world(WorldConfig(d_in=64, eta=0.05, seed=1))
    inv = invariance_report(w, range(24), range(w.n_templates))
    assert np.min(np.diag(inv)) >= 0.9
    np.testing.assert_array_equal(inv, inv.T)
    off = inv - np.diag(np.full(24, np.inf))
    assert np.all(np.max(off, axis=1) <= np.diag(inv))
    w0 = new_world(WorldConfig(d_in=16, d_out=8, vocab=16, n_subjects=6, n_templates=3, eta=0))
    np.testing.assert_allclose(np.diag(invariance_report(w0, range(6), range(3))), 1.0)


def test_extract_key_range_checks(world):
    with pytest.raises(InvalidInputError):
        extract_key(world, world.n_subjects, 0)
    with pytest.raises(InvalidInputError):
        extract_key(world, 0, -1)


def test_memory_budget():
    with pytest.raises(ResourceError):
        new_world(WorldConfig(d_in=1024, n_subjects=10**6))


def test_next_token_dist(world):
    p = next_token_dist(world, None, 3, 2)
    assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)
    assert np.array_equal(p, next_token_dist(world, 0, 3, 2))
    hot = new_world(WorldConfig(d_in=16, d_out=12, vocab=40, n_subjects=4, tau=1e9))
    q = next_token_dist(hot, None, 0, 0)
    assert np.max(np.abs(q - 1 / 40)) <= 1e-6


def test_shannon_entropy():
    assert shannon_entropy(np.full(512, 1 / 512)) == pytest.approx(np.log(512))
    assert shannon_entropy(np.eye(5)[2]) == 0.0
    assert shannon_entropy([0.5, 0.5]) == pytest.approx(np.log(2))
    with pytest.raises(InvalidInputError):
        shannon_entropy([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        shannon_entropy([1.5, -0.5])


def test_rome_batch_is_exact(world):
    c = world.population_covariance()
    b, dw = synthesize_edit_batch(world, 1, Method.ROME, c)
    v_star = world.w @ b.k[:, 0] + b.r[:, 0]
    assert np.max(np.abs((world.w + dw.dw) @ b.k[:, 0] - v_star)) <= 1e-8 * (
        1 + np.max(np.abs(v_star)))


def test_beta_zero_gives_null_edit():
    w = new_world(WorldConfig(d_in=32, d_out=24, vocab=64, n_subjects=40, beta=0.0))
    b, dw = synthesize_edit_batch(w, 4, Method.MEMIT, w.population_covariance())
    assert not np.any(b.r) and not np.any(dw.dw)


def test_edit_targets_and_entropy(world64):
    c = world64.population_covariance()
    b, dw = synthesize_edit_batch(world64, 8, Method.MEMIT, c)
    pre, post = [], []
    for s, t, o in zip(b.subject_ids, b.template_ids, b.object_token_ids):
        p0 = next_token_dist(world64, None, s, t)
        p1 = next_token_dist(world64, dw, s, t)
        assert np.argmax(p1) == o
        pre.append(shannon_entropy(p0))
        post.append(shannon_entropy(p1))
        assert post[-1] <= 0.2 * pre[-1]
    assert np.mean(post) < np.mean(pre)


@pytest.mark.parametrize("method", list(Method))
def test_entropy_contract_all_methods(world, method):
    side = world.projector() if method is Method.ALPHAEDIT else world.population_covariance()
    n = 1 if method is Method.ROME else 8
    for call in range(3):
        b, dw = synthesize_edit_batch(world, n, method, side, call_index=call)
        for s, t in zip(b.subject_ids, b.template_ids):
            h0 = shannon_entropy(next_token_dist(world, None, s, t))
            h1 = shannon_entropy(next_token_dist(world, dw, s, t))
            assert h1 <= 0.2 * h0


def test_batch_streams_are_independent(world):
    c = world.population_covariance()
    a, _ = synthesize_edit_batch(world, 8, Method.MEMIT, c, call_index=0)
    b, _ = synthesize_edit_batch(world, 8, Method.MEMIT, c, call_index=1)
    a2, _ = synthesize_edit_batch(world, 8, Method.MEMIT, c, call_index=0)
    assert a.subject_ids == a2.subject_ids and a.subject_ids != b.subject_ids
    assert len(set(a.subject_ids)) == 8


def test_rome_batch_size_enforced(world):
    with pytest.raises(InvalidInputError):
        synthesize_edit_batch(world, 2, Method.ROME, world.population_covariance())


def test_rng_stream_keys():
    a = rng_stream(7, 1, 2).standard_normal(3)
    assert np.array_equal(a, rng_stream(7, 1, 2).standard_normal(3))
    assert not np.array_equal(a, rng_stream(7, 2, 1).standard_normal(3))


def test_covariance_modes(world):
    c = world.population_covariance()
    assert c is world.population_covariance()  # cached
    e = world.estimated_covariance(100, stream_index=0)
    s = world.shifted_covariance(3)
    for cov in (c, e, s):
        assert np.min(np.linalg.eigvalsh(cov.c)) >= world.cfg.floor * (1 - 1e-9)
    assert np.linalg.norm(e.c - c.c, 2) > 0


def test_world_and_batch_serialization():
    w = new_world(WorldConfig(d_in=8, d_out=6, vocab=10, n_subjects=12, n_templates=2, seed=9))
    w2 = load_world(dump_world(w))
    assert w2.cfg == w.cfg
    for name in ("subject_embeddings", "template_a", "template_b", "w", "u"):
        assert np.array_equal(getattr(w, name), getattr(w2, name))
    b, dw = synthesize_edit_batch(w, 3, Method.MEMIT, w.population_covariance())
    b2, dw2 = load_batch(dump_batch(b, dw))
    assert b2.subject_ids == b.subject_ids and b2.template_ids == b.template_ids
    assert np.array_equal(b2.k, b.k) and np.array_equal(dw2.dw, dw.dw)
    assert dw2.method is Method.MEMIT
