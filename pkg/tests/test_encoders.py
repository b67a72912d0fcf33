import numpy as np
import pytest

from rodfind import encoders as enc
from rodfind.errors import EncoderError

TINY_TEXT = dict(embed_dim=6, conv_channels=(5, 5, 5, 7), gru_hidden=6,
                 fc_hidden=6, out_dim=4, max_len=8)
TINY_SHAPE = dict(num_conv_layers=5, front_channels=2, back_channels=(3, 4, 5),
                  out_dim=4)


def tiny_params(seed=11, dtype=np.float64, jitter=None):
    tcfg = enc.TextEncoderConfig(vocab_size=8, **TINY_TEXT)
    scfg = enc.ShapeEncoderConfig(**TINY_SHAPE)
    tp, sp = enc.init_params(8, seed, tcfg, scfg, dtype=dtype)
    if jitter is not None:
        rng = np.random.default_rng(jitter)
        for _, a in tp.named_arrays() + sp.named_arrays():
            a += rng.uniform(-0.05, 0.05, size=a.shape)
    return tp, sp


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a_t, a_s = enc.init_params(50, seed=42)
        b_t, b_s = enc.init_params(50, seed=42)
        for (n1, x), (n2, y) in zip(a_t.named_arrays() + a_s.named_arrays(),
                                    b_t.named_arrays() + b_s.named_arrays()):
            assert n1 == n2 and np.array_equal(x, y)

    def test_different_seed_differs(self):
        a_t, _ = enc.init_params(50, seed=1)
        b_t, _ = enc.init_params(50, seed=2)
        assert not np.array_equal(a_t.embed, b_t.embed)

    def test_biases_exactly_zero(self):
        tp, sp = enc.init_params(50, seed=0)
        for name, array in tp.named_arrays() + sp.named_arrays():
            if name.endswith("_b") or name.startswith("gru_b"):
                assert (array == 0).all(), name

    def test_text_parameter_count_closed_form(self):
        tp, _ = enc.init_params(100, seed=0)
        v, e, h = 100, 128, 256
        expected = v * e                                   # embedding table
        expected += 3 * (128 * 128 * 3 + 128)              # conv 1-3
        expected += 256 * 128 * 3 + 256                    # conv 4
        expected += 3 * h * 256 + 3 * h * h + 6 * h        # GRU weights + biases
        expected += 256 * 256 + 256                        # fc1
        expected += 128 * 256 + 128                        # fc2
        assert tp.param_count() == expected

    def test_shape_parameter_count_closed_form(self):
        _, sp = enc.init_params(100, seed=0)
        expected = 0
        for cin, cout in [(1, 4), (4, 4), (4, 4), (4, 4), (4, 64), (64, 128), (128, 256)]:
            expected += cout * cin * 27 + cout
        expected += 128 * 256 + 128                        # final dense
        assert sp.param_count() == expected

    def test_weight_bounds_follow_fan_in(self):
        tp, _ = enc.init_params(100, seed=3)
        bound = np.sqrt(1.0 / (128 * 3))
        assert np.abs(tp.conv_w[0]).max() <= bound
        assert np.abs(tp.conv_w[0]).max() > 0.9 * bound  # actually fills the range


class TestShapeConfig:
    def test_spatial_trace_matches_conv_arithmetic(self):
        sizes, pooled = enc.ShapeEncoderConfig().spatial_trace()
        assert [16] + sizes == [16, 16, 16, 16, 16, 6, 2, 2]
        assert pooled == 1

    @pytest.mark.parametrize("layers", [3, 4, 5, 6, 7])
    def test_variable_depth_always_lands_on_the_pool(self, layers):
        cfg = enc.ShapeEncoderConfig(num_conv_layers=layers)
        sizes, pooled = cfg.spatial_trace()
        assert sizes[-1] == 2 and pooled == 1
        assert len(cfg.layer_plan()) == layers

    def test_depth_out_of_range(self):
        with pytest.raises(EncoderError):
            enc.ShapeEncoderConfig(num_conv_layers=2)
        with pytest.raises(EncoderError):
            enc.ShapeEncoderConfig(num_conv_layers=8)


class TestForward:
    def test_text_shapes_norms_and_determinism(self):
        tp, _ = enc.init_params(30, seed=5)
        rng = np.random.default_rng(0)
        tokens = rng.integers(2, 30, size=(4, 256))
        lengths = np.array([10, 50, 128, 256])
        for b in range(4):
            tokens[b, lengths[b]:] = 0
        a = enc.text_forward(tp, tokens, lengths)
        b = enc.text_forward(tp, tokens, lengths)
        assert a.shape == (4, 128)
        assert np.abs(np.linalg.norm(a, axis=1) - 1).max() < 1e-6
        assert np.array_equal(a, b)

    def test_shape_shapes_norms_and_determinism(self):
        _, sp = enc.init_params(30, seed=5)
        rng = np.random.default_rng(1)
        grids = (rng.random((3, 16, 16, 16)) < 0.4).astype(np.uint8)
        a = enc.shape_forward(sp, grids)
        assert a.shape == (3, 128)
        assert np.abs(np.linalg.norm(a, axis=1) - 1).max() < 1e-6
        assert np.array_equal(a, enc.shape_forward(sp, grids))

    def test_pad_tail_never_matters(self):
        tp, _ = enc.init_params(30, seed=6)
        rng = np.random.default_rng(2)
        tokens = rng.integers(2, 30, size=(2, 256))
        lengths = np.array([37, 101])
        reference = enc.text_forward(tp, tokens, lengths)
        # same prefixes, arbitrary garbage tails
        garbled = tokens.copy()
        for b, n in enumerate(lengths):
            garbled[b, n:] = rng.integers(0, 30, size=256 - n)
        assert np.array_equal(enc.text_forward(tp, garbled, lengths), reference)

    def test_token_id_out_of_range(self):
        tp, _ = enc.init_params(10, seed=0)
        tokens = np.full((1, 16), 11)
        with pytest.raises(EncoderError, match="out of range"):
            enc.text_forward(tp, tokens, np.array([16]))

    def test_wrong_resolution_rejected(self):
        _, sp = enc.init_params(10, seed=0)
        with pytest.raises(EncoderError, match="shape batch"):
            enc.shape_forward(sp, np.zeros((1, 8, 8, 8)))

    def test_all_zero_grid_is_finite(self):
        _, sp = enc.init_params(10, seed=0)
        out = enc.shape_forward(sp, np.zeros((1, 16, 16, 16)))
        assert np.isfinite(out).all()

    def test_empty_text_is_finite(self):
        tp, _ = enc.init_params(10, seed=0)
        out = enc.text_forward(tp, np.zeros((1, 256), dtype=np.int32), np.array([0]))
        assert np.isfinite(out).all()


class TestBackward:
    def sampled_fd(self, params, grads, loss_fn, picks=8, h=1e-5):
        worst = 0.0
        for name, array in params.named_arrays():
            flat = array.ravel()
            g = grads[name].ravel()
            rng = np.random.default_rng(abs(hash(name)) % 2 ** 31)
            for i in rng.choice(flat.size, size=min(picks, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn()
                flat[i] = old - h
                down = loss_fn()
                flat[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(g[i] - fd) / max(1e-8, abs(g[i]), abs(fd)))
        return worst

    def test_text_backward_matches_finite_differences(self):
        tp, _ = tiny_params(jitter=99)
        rng = np.random.default_rng(5)
        tokens = rng.integers(2, 8, size=(2, 8))
        lengths = np.array([5, 7])
        probe = rng.normal(size=(2, 4))
        y, caches = enc.text_apply(tp, tokens, lengths, with_cache=True)
        grads = enc.text_backward(tp, caches, probe)

        def loss():
            return float((enc.text_forward(tp, tokens, lengths) * probe).sum())

        assert self.sampled_fd(tp, grads, loss) < 1e-4

    def test_shape_backward_matches_finite_differences(self):
        _, sp = tiny_params(jitter=98)
        rng = np.random.default_rng(6)
        grids = (rng.random((2, 16, 16, 16)) < 0.4).astype(np.float64)
        probe = rng.normal(size=(2, 4))
        y, caches = enc.shape_apply(sp, grids, with_cache=True)
        grads = enc.shape_backward(sp, caches, probe)

        def loss():
            return float((enc.shape_forward(sp, grids) * probe).sum())

        assert self.sampled_fd(sp, grads, loss) < 1e-4


class TestCheckpoint:
    def test_round_trip_lossless(self, tmp_path):
        tp, sp = enc.init_params(12, seed=9)
        path = tmp_path / "model.ckpt"
        digest = enc.save_checkpoint(path, tp, sp, {"shaft": 2}, {"seed": 9})
        ck = enc.load_checkpoint(path)
        assert ck.fingerprint == digest
        assert ck.vocab_words == {"shaft": 2}
        assert ck.meta == {"seed": 9}
        for (n1, a), (n2, b) in zip(tp.named_arrays() + sp.named_arrays(),
                                    ck.text.named_arrays() + ck.shape.named_arrays()):
            assert n1 == n2 and np.array_equal(a, b)

    def test_identical_params_identical_bytes(self):
        tp, sp = enc.init_params(12, seed=9)
        a = enc.checkpoint_bytes(tp, sp, {}, {})
        b = enc.checkpoint_bytes(tp, sp, {}, {})
        assert a == b

    def test_truncated_blob_rejected(self, tmp_path):
        tp, sp = enc.init_params(12, seed=9)
        data = enc.checkpoint_bytes(tp, sp, {}, {})
        path = tmp_path / "bad.ckpt"
        path.write_bytes(data[:-100])
        with pytest.raises(EncoderError, match="truncated"):
            enc.load_checkpoint(path)

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "other.bin"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(EncoderError, match="not a rodfind checkpoint"):
            enc.load_checkpoint(path)
