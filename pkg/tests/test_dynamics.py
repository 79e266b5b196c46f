import numpy as np
import pytest

import svbf.autodiff as ad
from svbf.autodiff import Tensor, backward
from svbf.dynamics import (
    BERNOULLI,
    CONCRETE,
    GAUSSIAN,
    MatrixBank,
    MixingDecoder,
    SwitchTransitionNet,
    mix_matrices,
    mixing_coefficients,
    transition_s,
    transition_z,
)
from svbf.params import ParamStore

from oracles import gradcheck


def make_bank(m=3, n_z=2, n_u=1, seed=0):
    store = ParamStore(rng_seed=seed, dtype=np.float64)
    return store, MatrixBank(store, "bank", m, n_z, n_u)


def set_bank(bank, A=None, B=None, q_prior=None, q_post=None):
    if A is not None:
        bank.A.data = np.asarray(A, dtype=np.float64)
    if B is not None:
        bank.B.data = np.asarray(B, dtype=np.float64)
    if q_prior is not None:
        bank.Q_prior_log.data = np.log(np.asarray(q_prior, dtype=np.float64))
    if q_post is not None:
        bank.Q_post_log.data = np.log(np.asarray(q_post, dtype=np.float64))


def test_mix_matrices_one_hot_selects_system():
    store, bank = make_bank()
    s = Tensor(np.array([[0.0, 1.0, 0.0]]))
    a_t, b_t, q_t = mix_matrices(bank, s)
    np.testing.assert_array_equal(a_t.data[0], bank.A.data[1])
    np.testing.assert_array_equal(b_t.data[0], bank.B.data[1])
    np.testing.assert_allclose(q_t.data[0], np.exp(bank.Q_prior_log.data[1]))


def test_mix_matrices_convex_combination():
    store, bank = make_bank(m=2, n_z=1, n_u=0)
    set_bank(bank, A=[[[1.0]], [[3.0]]])
    a_t, b_t, _ = mix_matrices(bank, Tensor(np.array([[0.5, 0.5]])))
    np.testing.assert_allclose(a_t.data[0], [[2.0]])
    assert b_t is None


def test_mix_matrices_bernoulli_sums_systems():
    store, bank = make_bank(m=2, n_z=1, n_u=0)
    set_bank(bank, A=[[[1.0]], [[3.0]]])
    a_t, _, _ = mix_matrices(bank, Tensor(np.array([[1.0, 1.0]])), mode=BERNOULLI)
    np.testing.assert_allclose(a_t.data[0], [[4.0]])


def test_mix_matrices_rejects_bad_mode_and_shape():
    store, bank = make_bank()
    with pytest.raises(ValueError, match="switch mode"):
        mix_matrices(bank, Tensor(np.ones((1, 3))), mode="nope")
    with pytest.raises(ValueError, match="bank size"):
        mix_matrices(bank, Tensor(np.ones((1, 4))))


def test_mix_is_linear_in_s():
    store, bank = make_bank(m=4, n_z=3, n_u=2, seed=3)
    rng = np.random.default_rng(0)
    s1 = rng.dirichlet(np.ones(4), size=2)
    s2 = rng.dirichlet(np.ones(4), size=2)
    alpha = 0.3
    mix = lambda s: mix_matrices(bank, Tensor(s))
    a_mixed, b_mixed, _ = mix(alpha * s1 + (1 - alpha) * s2)
    a1, b1, _ = mix(s1)
    a2, b2, _ = mix(s2)
    np.testing.assert_allclose(a_mixed.data, alpha * a1.data + (1 - alpha) * a2.data, atol=1e-10)
    np.testing.assert_allclose(b_mixed.data, alpha * b1.data + (1 - alpha) * b2.data, atol=1e-10)


def test_transition_z_identity_dynamics():
    store, bank = make_bank(m=2, n_z=2, n_u=1)
    set_bank(bank, A=np.broadcast_to(np.eye(2), (2, 2, 2)).copy(), B=np.zeros((2, 2, 1)))
    z = Tensor(np.array([[0.4, -1.7]]))
    out = transition_z(z, Tensor(np.array([[2.0]])), Tensor(np.array([[0.3, 0.7]])), bank)
    np.testing.assert_allclose(out.mean.data, z.data)


def test_transition_z_scalar_arithmetic():
    store, bank = make_bank(m=1, n_z=1, n_u=1)
    set_bank(bank, A=[[[2.0]]], B=[[[1.0]]])
    out = transition_z(Tensor(np.array([[1.0]])), Tensor(np.array([[0.5]])), Tensor(np.array([[1.0]])), bank)
    np.testing.assert_allclose(out.mean.data, [[2.5]])


def test_transition_z_one_hot_matches_plain_lds_oracle():
    store, bank = make_bank(m=3, n_z=3, n_u=2, seed=9)
    rng = np.random.default_rng(4)
    z = rng.standard_normal((5, 3))
    u = rng.standard_normal((5, 2))
    for i in range(3):
        s = np.zeros((5, 3))
        s[:, i] = 1.0
        got = transition_z(Tensor(z), Tensor(u), Tensor(s), bank).mean.data
        want = z @ bank.A.data[i].T + u @ bank.B.data[i].T  # independent LDS step
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_transition_z_with_single_system_ignores_s():
    store, bank = make_bank(m=1, n_z=2, n_u=0)
    z = Tensor(np.ones((1, 2)))
    out1 = transition_z(z, None, Tensor(np.array([[1.0]])), bank)
    out2 = transition_z(z, None, Tensor(np.array([[1.0]])), bank)
    np.testing.assert_array_equal(out1.mean.data, out2.mean.data)


def test_transition_z_gradients_match_finite_differences():
    rng = np.random.default_rng(2)

    def build(t):
        store = ParamStore(rng_seed=1, dtype=np.float64)
        bank = MatrixBank(store, "b", 2, 2, 1)
        bank.A, bank.B = t["A"], t["B"]
        bank.Q_prior_log = t["Qlog"]
        out = transition_z(t["z"], t["u"], ad.softmax(t["s_raw"]), bank)
        return ad.tsum(ad.add(ad.square(out.mean), out.var))

    gradcheck(
        build,
        {
            "A": rng.standard_normal((2, 2, 2)),
            "B": rng.standard_normal((2, 2, 1)),
            "Qlog": rng.standard_normal((2, 2)) * 0.1,
            "z": rng.standard_normal((3, 2)),
            "u": rng.standard_normal((3, 1)),
            "s_raw": rng.standard_normal((3, 2)),
        },
    )


def test_mixing_coefficients_zero_weights_give_uniform():
    store = ParamStore(rng_seed=0, dtype=np.float64)
    dec = MixingDecoder(store, "dec", d_s=3, m=4)
    out = mixing_coefficients(Tensor(np.random.default_rng(0).standard_normal((2, 3))), dec)
    np.testing.assert_allclose(out.data, 0.25, atol=1e-12)


def test_mixing_coefficients_bias_only_softmax():
    store = ParamStore(rng_seed=0, dtype=np.float64)
    dec = MixingDecoder(store, "dec", d_s=2, m=2)
    dec.lin.b.data = np.array([0.0, np.log(3.0)])
    out = mixing_coefficients(Tensor(np.zeros((1, 2))), dec)
    np.testing.assert_allclose(out.data, [[0.25, 0.75]], rtol=1e-12)


def test_mixing_coefficients_shift_invariance():
    store = ParamStore(rng_seed=5, dtype=np.float64)
    dec = MixingDecoder(store, "dec", d_s=2, m=3)
    dec.lin.w.data = np.random.default_rng(1).standard_normal((2, 3))
    s = Tensor(np.random.default_rng(2).standard_normal((4, 2)))
    base = mixing_coefficients(s, dec).data
    dec.lin.b.data = dec.lin.b.data + 11.3
    shifted = mixing_coefficients(s, dec).data
    np.testing.assert_allclose(base, shifted, atol=1e-10)


def test_transition_s_zero_net_gives_uniform_logits():
    store = ParamStore(rng_seed=0, dtype=np.float64)
    net = SwitchTransitionNet(store, "net", n_z=2, n_s=3, n_u=1, mode=CONCRETE, width=8)
    for _, p in store.items():
        p.data = np.zeros_like(p.data)
    out = transition_s(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3)) / 3), Tensor(np.ones((2, 1))), net, 2.0)
    np.testing.assert_array_equal(out.logits.data, np.zeros((2, 3)))
    assert out.temperature == 2.0


def test_transition_s_finite_for_large_inputs_and_deterministic():
    store = ParamStore(rng_seed=7, dtype=np.float64)
    net = SwitchTransitionNet(store, "net", n_z=2, n_s=4, n_u=2, mode=CONCRETE, width=16)
    z = Tensor(np.full((3, 2), 1e3))
    s = Tensor(np.full((3, 4), 0.25))
    u = Tensor(np.full((3, 2), -1e3))
    out1 = transition_s(z, s, u, net, 1.0)
    out2 = transition_s(z, s, u, net, 1.0)
    assert np.all(np.isfinite(out1.logits.data))
    assert np.array_equal(out1.logits.data, out2.logits.data)


def test_transition_s_gaussian_mode_returns_mean_and_variance():
    store = ParamStore(rng_seed=1, dtype=np.float64)
    net = SwitchTransitionNet(store, "net", n_z=2, n_s=3, n_u=0, mode=GAUSSIAN, width=8)
    out = transition_s(Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 3))), None, net, 1.0)
    assert out.mean.shape == (2, 3)
    assert np.all(out.var.data > 0)
