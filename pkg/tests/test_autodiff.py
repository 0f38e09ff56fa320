import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from headrec import autodiff as ad
from headrec.selfcheck import OP_CASES, finite_difference_error, grl_negation_check


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_operator_matches_central_differences(name):
    build, sample = OP_CASES[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    sign = -1.0 if name == "grl" else 1.0
    worst = max(finite_difference_error(build, sample(rng), rng, sign=sign) for _ in range(20))
    assert worst < 1e-4


def test_every_registered_operator_has_a_case():
    assert set(OP_CASES) == set(ad.OPS)


class TestTape:
    def test_backward_needs_scalar_root(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        with pytest.raises(ad.TapeError):
            tape.backward(x * 2.0)

    def test_unreached_leaf_gets_zeros(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        y = tape.leaf(np.ones(2))
        g = tape.backward(ad.sum(x))
        np.testing.assert_array_equal(g[y], np.zeros(2))

    def test_shared_subexpression_accumulates(self):
        tape = ad.Tape()
        x = tape.leaf(3.0)
        y = x * x + x
        assert tape.backward(y)[x] == pytest.approx(7.0)

    def test_constants_receive_no_gradient(self):
        tape = ad.Tape()
        c = tape.const(np.ones(2))
        x = tape.leaf(np.ones(2))
        g = tape.backward(ad.sum(c * x))
        assert c.id not in g._grads

    def test_variables_from_other_tapes_rejected(self):
        a, b = ad.Tape(), ad.Tape()
        with pytest.raises(ad.TapeError):
            a.leaf(1.0) + b.leaf(1.0)

    def test_unknown_operator(self):
        with pytest.raises(ad.TapeError):
            ad.Tape().record("softplus", [1.0])

    def test_matmul_shape_error(self):
        tape = ad.Tape()
        with pytest.raises(ad.TapeError):
            tape.leaf(np.ones((2, 3))) @ tape.leaf(np.ones((2, 3)))

    def test_conv_shorter_than_kernel(self):
        tape = ad.Tape()
        with pytest.raises(ad.TapeError):
            ad.conv1d(tape.leaf(np.ones((1, 2, 3))), tape.leaf(np.ones((3, 3, 1))),
                      tape.leaf(np.zeros(1)))

    def test_detach_blocks_gradient(self):
        tape = ad.Tape()
        x = tape.leaf(2.0)
        g = tape.backward(x * ad.detach(x))
        assert g[x] == pytest.approx(2.0)


class TestOperatorSemantics:
    def test_conv_matches_brute_force(self, rng):
        x = rng.normal(size=(2, 7, 3))
        w = rng.normal(size=(3, 3, 4))
        b = rng.normal(size=4)
        tape = ad.Tape()
        out = ad.conv1d(tape.leaf(x), tape.leaf(w), tape.leaf(b)).value
        ref = np.zeros((2, 5, 4))
        for n in range(2):
            for t in range(5):
                for f in range(4):
                    ref[n, t, f] = np.sum(x[n, t:t + 3, :] * w[:, :, f]) + b[f]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_maxpool_ties_take_first(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([[[1.0], [1.0], [0.0]]]))
        g = tape.backward(ad.sum(ad.maxpool_time(x)))
        np.testing.assert_array_equal(g[x][0, :, 0], [1.0, 0.0, 0.0])

    def test_arcosh_clamps_below_one(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([0.5, 1.0]))
        y = ad.arcosh(x)
        np.testing.assert_array_equal(y.value, [0.0, 0.0])
        np.testing.assert_array_equal(tape.backward(ad.sum(y))[x], [0.0, 0.0])

    def test_norm_gradient_zero_at_origin(self):
        tape = ad.Tape()
        x = tape.leaf(np.zeros((1, 3)))
        np.testing.assert_array_equal(tape.backward(ad.sum(ad.norm2(x)))[x], np.zeros((1, 3)))

    def test_maxzero_corner_uses_zero_branch(self):
        tape = ad.Tape()
        x = tape.leaf(np.array([0.0, 1.0]))
        np.testing.assert_array_equal(tape.backward(ad.sum(ad.maxzero(x)))[x], [0.0, 1.0])

    def test_gather_scatter_adds(self):
        tape = ad.Tape()
        t = tape.leaf(np.zeros((3, 2)))
        g = tape.backward(ad.sum(ad.gather(t, np.array([1, 1, 2]))))
        np.testing.assert_array_equal(g[t], [[0, 0], [2, 2], [1, 1]])

    def test_broadcast_gradient_sums_back(self):
        tape = ad.Tape()
        a = tape.leaf(np.ones((4, 3)))
        b = tape.leaf(np.ones((1, 3)))
        g = tape.backward(ad.sum(a * b))
        np.testing.assert_array_equal(g[b], [[4.0, 4.0, 4.0]])


class TestGradientReversal:
    def test_exact_negation(self, rng):
        assert grl_negation_check(rng).passed

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
    def test_forward_is_identity(self, x):
        tape = ad.Tape()
        np.testing.assert_array_equal(ad.grl(tape.leaf(x)).value, x)

    def test_sign_hook_is_respected(self, monkeypatch):
        monkeypatch.setattr(ad, "GRL_BACKWARD_SIGN", 1.0)
        tape = ad.Tape()
        x = tape.leaf(np.ones(2))
        np.testing.assert_array_equal(tape.backward(ad.sum(ad.grl(x)))[x], [1.0, 1.0])
