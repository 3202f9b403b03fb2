import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from afn.autodiff import DimensionError, Tensor
from afn.autodiff.gradcheck import check_gradients
from afn.protonet import Episode, classify_activity, compute_prototypes, embed, make_episode, nearest_prototype, proto_loss


def embed_params(rng, d=5, hidden=4, e=3, zero=False):
    f = (lambda *s: np.zeros(s)) if zero else (lambda *s: rng.standard_normal(s))
    return {
        "q1.fc1.weight": Tensor(f(d, hidden), requires_grad=True, name="q1.fc1.weight"),
        "q1.fc1.bias": Tensor(f(hidden), requires_grad=True, name="q1.fc1.bias"),
        "q1.fc2.weight": Tensor(f(hidden, e), requires_grad=True, name="q1.fc2.weight"),
        "q1.fc2.bias": Tensor(f(e), requires_grad=True, name="q1.fc2.bias"),
    }


def test_zero_weights_embed_to_zero(rng):
    u = embed(embed_params(rng, zero=True), Tensor(rng.standard_normal((3, 5))))
    assert not u.data.any()


def test_embed_deterministic_and_checked(rng):
    p = embed_params(rng)
    L = Tensor(rng.standard_normal((3, 5)), requires_grad=True, name="L")
    np.testing.assert_array_equal(embed(p, L).data, embed(p, L).data)
    with pytest.raises(DimensionError):
        embed(p, Tensor(np.zeros((3, 6))))
    R = rng.standard_normal((3, 3))
    from afn.autodiff import ops

    errs = check_gradients(lambda: ops.sum(ops.mul(embed(p, L), Tensor(R))), [L, *p.values()])
    assert max(errs.values()) < 1e-4


def ep(labels, support):
    labels = np.asarray(labels)
    query = [i for i in range(len(labels)) if i not in support]
    return Episode(support, query, labels, sorted(set(labels[support].tolist())))


def test_single_support_prototype_is_the_vector():
    u = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]))
    protos = compute_prototypes(u, ep([0, 1, 0], [0, 1]))
    np.testing.assert_array_equal(protos.data, [[1.0, 2.0], [3.0, 4.0]])


def test_two_support_mean():
    u = Tensor(np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]]))
    np.testing.assert_array_equal(compute_prototypes(u, ep([0, 0, 0], [0, 1])).data, [[1.0, 1.0]])


def test_prototypes_match_brute_force_mean(rng):
    labels = rng.integers(5, size=40)
    labels[:5] = np.arange(5)
    u = rng.standard_normal((40, 6))
    e = make_episode(labels)
    protos = compute_prototypes(Tensor(u), e).data
    for k, c in enumerate(e.classes):
        rows = [r for r in e.support if labels[r] == c]
        assert np.abs(protos[k] - u[rows].mean(axis=0)).max() < 1e-12


def test_make_episode_split():
    e = make_episode([0, 0, 0, 1, 1, 2])
    assert e.support == [0, 1, 3, 5] and e.query == [2, 4]
    assert e.classes == [0, 1, 2]
    assert make_episode([0, 1, 2]) is None


def test_classify_near_and_equidistant():
    protos = Tensor(np.array([[0.0, 0.0], [100.0, 0.0]]))
    p = classify_activity(Tensor(np.array([0.0, 0.0])), protos).data
    assert p[0] == pytest.approx(1.0)
    p = classify_activity(Tensor(np.array([50.0, 3.0])), protos).data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_classify_dimension_mismatch():
    with pytest.raises(DimensionError):
        classify_activity(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))))


@given(st.integers(0, 1000), st.floats(-50, 50))
def test_argmax_invariant_to_distance_shift(seed, c):
    r = np.random.default_rng(seed)
    u, protos = r.standard_normal((4, 3)), r.standard_normal((3, 3))
    d = ((u[:, None] - protos[None]) ** 2).sum(-1)
    p = classify_activity(Tensor(u), Tensor(protos)).data
    assert (p.argmax(1) == (-(d + c)).argmax(1)).all()
    assert (p.argmax(1) == nearest_prototype(u, protos)).all()


@given(st.integers(0, 1000))
def test_prototypes_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    labels = np.array([0, 0, 1, 1, 0, 1, 1, 0])
    u = r.standard_normal((8, 3))
    e = make_episode(labels)
    perm = r.permutation(e.support).tolist()
    e2 = Episode(perm, e.query, labels, e.classes)
    np.testing.assert_allclose(compute_prototypes(Tensor(u), e).data, compute_prototypes(Tensor(u), e2).data, atol=1e-12)


def test_perfect_episode_small_loss():
    u = Tensor(np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 0.1], [100.0, 0.1]]))
    loss, acc = proto_loss(u, make_episode([0, 1, 0, 1]))
    assert float(loss.data) <= 1e-6 and acc == 1.0


def test_uniform_episode_loss_is_log_k():
    u = Tensor(np.zeros((6, 2)))
    loss, _ = proto_loss(u, make_episode([0, 1, 2, 0, 1, 2]))
    assert float(loss.data) == pytest.approx(np.log(3))


def test_proto_loss_gradient(rng):
    u = Tensor(rng.standard_normal((8, 3)), requires_grad=True, name="u")
    e = make_episode([0, 1, 0, 1, 2, 2, 0, 1])
    assert check_gradients(lambda: proto_loss(u, e)[0], [u])["u"] < 1e-4
