import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headrec import autodiff as ad
from headrec import geometry as G
from headrec import model as M


@pytest.fixture
def cfg():
    return M.ModelConfig(embed_dim=4, doc_len=8, feature_dim=6, n_src_users=3, n_src_items=4,
                         n_tgt_users=5, n_tgt_items=2)


@pytest.fixture
def params(cfg):
    return M.init_params(cfg, np.random.default_rng(0))


class TestConfig:
    def test_feature_dim_must_split_across_widths(self):
        with pytest.raises(ValueError):
            M.ModelConfig(feature_dim=10)

    def test_doc_len_at_least_widest_kernel(self):
        with pytest.raises(ValueError):
            M.ModelConfig(doc_len=4)

    def test_parameter_shapes(self, cfg, params):
        assert params["tgt.conv5.weight"].shape == (5, 4, 2)
        assert params["disc.w1"].shape == (12, 6)
        assert params["gate.w1"].shape == (14, 6)
        assert params["latent.tgt_user"].shape == (5, 6)

    def test_cold_latents_start_at_zero(self, cfg):
        mask = np.array([True, False, False, True, False])
        p = M.init_params(cfg, np.random.default_rng(0), {"latent.tgt_user": mask})
        assert np.all(p["latent.tgt_user"][mask] == 0.0)
        assert np.all(p["latent.tgt_user"][~mask] != 0.0)


class TestExtract:
    def test_origin_document_gives_bias_constant(self, params):
        params = dict(params)
        for w in (3, 4, 5):
            params[f"src.conv{w}.bias"] = np.array([0.1 * w, -0.2])
        tape = ad.Tape()
        docs = np.tile(G.origin(4), (2, 8, 1))
        out = M.extract(tape, docs, M.bind(tape, params), "src")
        expect = np.tanh(np.concatenate([[0.3, -0.2], [0.4, -0.2], [0.5, -0.2]]))
        np.testing.assert_allclose(out.value, np.tile(expect, (2, 1)), atol=1e-15)

    def test_matches_hand_cnn(self, params, rng):
        tang = rng.normal(size=(8, 4)) * 0.3
        hyp = G.lift(tang)
        tape = ad.Tape()
        out = M.extract(tape, hyp, M.bind(tape, params), "tgt").value[0]
        expect = []
        for w in (3, 4, 5):
            W, b = params[f"tgt.conv{w}.weight"], params[f"tgt.conv{w}.bias"]
            rows = [np.tanh(np.einsum("kd,kdf->f", tang[t:t + w], W) + b) for t in range(8 - w + 1)]
            expect.append(np.max(rows, axis=0))
        np.testing.assert_allclose(out, np.concatenate(expect), atol=1e-12)

    def test_unknown_extractor(self, params):
        tape = ad.Tape()
        with pytest.raises(ValueError):
            M.extract(tape, np.zeros((1, 8, 5)), M.bind(tape, params), "other")


class TestScaleAlign:
    def test_norm_five(self):
        tape = ad.Tape()
        out, bad = M.scale_align(tape.const(np.array([[3.0, 4.0]])))
        assert bad == 0
        np.testing.assert_allclose(out.value, [[0.6, 0.8]])

    def test_unit_vector_unchanged(self):
        tape = ad.Tape()
        v = np.array([[0.0, 1.0, 0.0]])
        np.testing.assert_array_equal(M.scale_align(tape.const(v))[0].value, v)

    def test_degenerate_row_passes_through(self):
        tape = ad.Tape()
        v = np.array([[1e-14, 0.0], [2.0, 0.0]])
        out, bad = M.scale_align(tape.const(v))
        assert bad == 1
        np.testing.assert_array_equal(out.value, [[1e-14, 0.0], [1.0, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e6))
    def test_rescaling_property(self, seed, c):
        v = np.random.default_rng(seed).normal(size=(3, 5))
        tape = ad.Tape()
        a = M.scale_align(tape.const(v))[0].value
        b = M.scale_align(tape.const(c * v))[0].value
        np.testing.assert_allclose(a, b, atol=1e-14)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)


class TestDiscriminator:
    def test_zero_weights_give_half(self, params):
        zero = {k: np.zeros_like(v) if k.startswith("disc") else v for k, v in params.items()}
        tape = ad.Tape()
        P = M.bind(tape, zero)
        f = [tape.const(np.ones((3, 12))) for _ in range(4)]
        logits = M.discriminate_features(*f, P)
        for v in logits.values():
            np.testing.assert_array_equal(v, 0.5)

    def test_aligned_inputs_have_unit_norm(self, params, rng):
        tape = ad.Tape()
        P = M.bind(tape, params)
        f = [tape.const(rng.normal(size=(4, 12)) * 100) for _ in range(4)]
        logits = M.discriminate_features(*f, P, aligned=True)
        for x in logits.inputs:
            np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)

    def test_unaligned_inputs_are_raw(self, params, rng):
        tape = ad.Tape()
        P = M.bind(tape, params)
        raw = rng.normal(size=(4, 12)) * 100
        logits = M.discriminate_features(*[tape.const(raw)] * 4, P, aligned=False)
        np.testing.assert_array_equal(logits.inputs[0], raw)


class TestScore:
    def _vars(self, tape, *arrays):
        return [tape.const(np.atleast_2d(a).astype(float)) for a in arrays]

    def test_identical_aggregates_score_zero(self, params):
        tape = ad.Tape()
        P = M.bind(tape, {k: v for k, v in params.items()})
        z = np.zeros(6)
        v = np.arange(6) * 0.1
        out = M.score(*self._vars(tape, v, v, v, v, z, z), P)
        assert out.value[0, 0] == pytest.approx(0.0, abs=1e-7)

    def test_gate_one_is_raw_distance(self, params):
        tape = ad.Tape()
        P = M.bind(tape, params)
        su, si = np.array([0.3, 0, 0, 0, 0, 0]), np.array([0, -0.5, 0, 0, 0, 0])
        z = np.zeros(6)
        out = M.score(*self._vars(tape, su, su, si, si, z, z), P, gate_override=1.0)
        expect = G.lorentz_dist(G.lift(su), G.lift(si))
        assert out.value[0, 0] == pytest.approx(expect, rel=1e-10)

    def test_half_gate_fixture(self):
        tape = ad.Tape()
        z = np.zeros(2)
        su, si = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        out = M.score(*self._vars(tape, su, su, si, si, z, z), {}, gate_override=0.5)
        d = G.lorentz_dist(G.exp_origin([0.0, 1.0, 0.0]), G.exp_origin([0.0, 0.0, 1.0]))
        assert out.value[0, 0] == pytest.approx(0.5 * d, rel=1e-10)

    def test_gate_in_unit_interval(self, params, rng):
        tape = ad.Tape()
        P = M.bind(tape, params)
        h = M.lorentz_lift(tape.const(rng.normal(size=(10, 6))))
        g = M.gate(h, h, P).value
        assert g.shape == (10, 1) and np.all((g >= 0) & (g <= 1))

    def test_lorentz_lift_on_manifold(self, rng):
        tape = ad.Tape()
        v = rng.normal(size=(5, 3))
        np.testing.assert_allclose(M.lorentz_lift(tape.const(v)).value, G.lift(v), atol=1e-12)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, params, cfg):
        p = tmp_path / "c.bin"
        M.save_checkpoint(p, params, {"model": cfg.to_dict()})
        back, conf = M.load_checkpoint(p)
        assert conf["model"]["widths"] == [3, 4, 5]
        assert back.keys() == params.keys()
        for k in params:
            assert back[k].tobytes() == params[k].tobytes()
        M.check_shapes(back, cfg)

    def test_same_params_same_bytes(self, tmp_path, params):
        M.save_checkpoint(tmp_path / "a.bin", params, {"x": 1})
        M.save_checkpoint(tmp_path / "b.bin", dict(reversed(list(params.items()))), {"x": 1})
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"hello\nworld")
        with pytest.raises(M.CheckpointError):
            M.load_checkpoint(p)

    def test_shape_mismatch(self, params, cfg):
        bad = dict(params)
        bad["disc.w2"] = np.zeros((3, 1))
        with pytest.raises(M.ShapeMismatchError):
            M.check_shapes(bad, cfg)
        del bad["disc.w2"]
        with pytest.raises(M.ShapeMismatchError):
            M.check_shapes(bad, cfg)
