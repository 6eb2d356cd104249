import numpy as np
import pytest

from d3net.models import (
    D2NetConfig,
    RdfdbkConfig,
    d2net_forward,
    infer_d2net_config,
    infer_rdfdbk_config,
    init_d2net,
    init_rdfdbk,
    rdfdbk_forward,
)
from d3net.neuralcore import (
    Tensor,
    backward,
    l1_loss,
    no_grad,
    upsample_nearest2x,
)


def _rand_image(shape, seed):
    return np.random.default_rng(seed).uniform(0.0, 1.0, shape)


def _randomize(store, seed, scale=0.1):
    # gradient tests overwrite the zero-initialized residual heads so every
    # parameter actually participates in the forward pass
    rng = np.random.default_rng(seed)
    for name in store.names():
        arr = store[name].data
        arr[...] = rng.uniform(-scale, scale, arr.shape)


def _small_cfg(**kw):
    return D2NetConfig(width_multiplier=1.0 / 16.0, **kw)


class TestConfigs:
    def test_effective_channels_full_width(self):
        assert D2NetConfig().effective_channels() == (64, 128, 256, 512)

    def test_effective_channels_half_width(self):
        cfg = D2NetConfig(width_multiplier=0.5)
        assert cfg.effective_channels() == (32, 64, 128, 256)

    def test_effective_channels_floor_of_four(self):
        cfg = D2NetConfig(width_multiplier=1.0 / 64.0)
        assert cfg.effective_channels() == (4, 4, 4, 8)

    def test_scale_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            D2NetConfig(scales=3)

    def test_width_multiplier_range(self):
        with pytest.raises(ValueError):
            D2NetConfig(width_multiplier=0.0)
        with pytest.raises(ValueError):
            D2NetConfig(width_multiplier=1.5)

    def test_bad_channel_count_rejected(self):
        with pytest.raises(ValueError):
            D2NetConfig(in_channels=2)

    def test_rdfdbk_validation(self):
        with pytest.raises(ValueError):
            RdfdbkConfig(time_steps=0)
        with pytest.raises(ValueError):
            RdfdbkConfig(scale_factor=3)


class TestD2NetParams:
    def test_full_width_channel_counts(self):
        # the four scales carry 64/128/256/512 channels
        store = init_d2net(D2NetConfig())
        assert store["stem.w"].data.shape == (64, 1, 3, 3)
        assert store["enc0.rb0.c1.w"].data.shape == (64, 64, 3, 3)
        assert store["down1.w"].data.shape == (128, 64, 2, 2)
        assert store["down2.w"].data.shape == (256, 128, 2, 2)
        assert store["down3.w"].data.shape == (512, 256, 2, 2)
        assert store["enc3.rb1.c2.w"].data.shape == (512, 512, 3, 3)
        assert store["up3.w"].data.shape == (512, 256, 2, 2)
        assert store["dec0.rb1.c2.w"].data.shape == (64, 64, 3, 3)
        assert store["head.w"].data.shape == (1, 64, 3, 3)

    def test_biases_start_at_zero(self):
        store = init_d2net(_small_cfg())
        for name in store.names():
            if name.endswith(".b"):
                assert np.all(store[name].data == 0.0)

    def test_init_deterministic(self):
        a = init_d2net(_small_cfg(), seed=11)
        b = init_d2net(_small_cfg(), seed=11)
        c = init_d2net(_small_cfg(), seed=12)
        for name in a.names():
            assert np.array_equal(a[name].data, b[name].data)
        assert not np.array_equal(a["stem.w"].data, c["stem.w"].data)


class TestD2NetForward:
    @pytest.mark.parametrize("size", [8, 16, 24, 32])
    def test_shape_preserved(self, size):
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=1)
        _randomize(store, seed=size)
        x = Tensor(_rand_image((1, 1, size, size), seed=size).astype(np.float32))
        with no_grad():
            y = d2net_forward(store, cfg, x)
        assert y.data.shape == x.data.shape

    def test_rgb_and_batch(self):
        cfg = _small_cfg(in_channels=3)
        store = init_d2net(cfg, seed=2)
        x = Tensor(_rand_image((2, 3, 8, 16), seed=5).astype(np.float32))
        with no_grad():
            y = d2net_forward(store, cfg, x)
        assert y.data.shape == (2, 3, 8, 16)

    def test_indivisible_dims_rejected(self):
        cfg = _small_cfg()
        store = init_d2net(cfg)
        x = Tensor(np.zeros((1, 1, 12, 16), dtype=np.float32))
        with pytest.raises(ValueError):
            d2net_forward(store, cfg, x)

    def test_wrong_channels_rejected(self):
        cfg = _small_cfg()
        store = init_d2net(cfg)
        x = Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32))
        with pytest.raises(ValueError):
            d2net_forward(store, cfg, x)

    def test_zero_head_is_exact_identity(self):
        # with the head zeroed the global residual must pass the input
        # through bit for bit, whatever the other weights hold
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=3)
        _randomize(store, seed=99)
        store["head.w"].data[...] = 0.0
        store["head.b"].data[...] = 0.0
        x = Tensor(_rand_image((1, 1, 16, 16), seed=9).astype(np.float32))
        with no_grad():
            y = d2net_forward(store, cfg, x)
        assert np.array_equal(y.data, x.data)

    def test_fresh_model_is_exact_identity(self):
        # zero-initialized residual branches: an untrained model passes the
        # input through unchanged
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=3)
        x = Tensor(_rand_image((1, 1, 16, 16), seed=9).astype(np.float32))
        with no_grad():
            y = d2net_forward(store, cfg, x)
        assert np.array_equal(y.data, x.data)

    def test_zero_head_without_residual_is_zero(self):
        cfg = _small_cfg(global_residual=False)
        store = init_d2net(cfg, seed=3)
        _randomize(store, seed=98)
        store["head.w"].data[...] = 0.0
        store["head.b"].data[...] = 0.0
        x = Tensor(_rand_image((1, 1, 16, 16), seed=9).astype(np.float32))
        with no_grad():
            y = d2net_forward(store, cfg, x)
        assert np.all(y.data == 0.0)

    def test_forward_deterministic(self):
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=4)
        x = Tensor(_rand_image((1, 1, 16, 16), seed=8).astype(np.float32))
        with no_grad():
            a = d2net_forward(store, cfg, x)
            b = d2net_forward(store, cfg, x)
        assert np.array_equal(a.data, b.data)


def _sampled_fd_check(store, loss_fn, per_tensor=2, step=1e-6, tol=1e-3):
    """Central finite differences against taped gradients on a few sampled
    elements of every parameter tensor.  loss_fn() must rerun the forward
    pass and return a scalar loss Tensor."""
    loss = loss_fn()
    store.zero_grad()
    backward(loss)
    rng = np.random.default_rng(123)
    worst = 0.0
    for name in store.names():
        arr = store[name].data
        flat = arr.reshape(-1)
        idxs = rng.choice(flat.size, size=min(per_tensor, flat.size),
                          replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn().data)
            flat[i] = orig - step
            lm = float(loss_fn().data)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * step)
            ad = store[name].grad.reshape(-1)[i]
            err = abs(ad - fd) / max(abs(fd), abs(ad), 1e-6)
            assert err < tol, f"{name}[{i}]: taped {ad} vs fd {fd}"
            worst = max(worst, err)
    return worst


class TestD2NetGradients:
    def test_every_parameter_tensor_matches_finite_differences(self):
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=21, dtype=np.float64)
        _randomize(store, seed=41)
        x = Tensor(_rand_image((1, 1, 8, 8), seed=31))
        target = None

        def loss_fn():
            out = d2net_forward(store, cfg, x)
            nonlocal target
            if target is None:
                # constant offset keeps |out - target| away from the kink
                target = Tensor(out.data - 1.0)
            return l1_loss(out, target)

        _sampled_fd_check(store, loss_fn)

    def test_loss_reaches_all_parameters(self):
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=22, dtype=np.float64)
        _randomize(store, seed=42)
        x = Tensor(_rand_image((1, 1, 8, 8), seed=32))
        out = d2net_forward(store, cfg, x)
        loss = l1_loss(out, Tensor(out.data - 1.0))
        store.zero_grad()
        backward(loss)
        for name in store.names():
            assert np.any(store[name].grad != 0.0), f"{name} got no gradient"


class TestRdfdbk:
    def test_output_is_twice_the_input(self):
        cfg = RdfdbkConfig(feature_channels=8, residual_blocks=2)
        store = init_rdfdbk(cfg, seed=5)
        x = Tensor(_rand_image((1, 1, 9, 13), seed=6).astype(np.float32))
        with no_grad():
            y = rdfdbk_forward(store, cfg, x)
        assert y.data.shape == (1, 1, 18, 26)

    def test_param_count_independent_of_time_steps(self):
        counts = set()
        for steps in (1, 3, 5):
            cfg = RdfdbkConfig(time_steps=steps)
            counts.add(init_rdfdbk(cfg).param_count())
        assert len(counts) == 1

    def test_zero_recon_out_is_exact_nearest_upsampling(self):
        cfg = RdfdbkConfig(feature_channels=8, residual_blocks=2)
        store = init_rdfdbk(cfg, seed=7)
        _randomize(store, seed=97)
        store["recon.out.w"].data[...] = 0.0
        store["recon.out.b"].data[...] = 0.0
        x = Tensor(_rand_image((1, 1, 12, 10), seed=14).astype(np.float32))
        with no_grad():
            y = rdfdbk_forward(store, cfg, x)
            nn = upsample_nearest2x(x)
        assert np.array_equal(y.data, nn.data)

    def test_fresh_model_is_exact_nearest_upsampling(self):
        cfg = RdfdbkConfig(feature_channels=8, residual_blocks=2)
        store = init_rdfdbk(cfg, seed=7)
        x = Tensor(_rand_image((1, 1, 12, 10), seed=14).astype(np.float32))
        with no_grad():
            y = rdfdbk_forward(store, cfg, x)
            nn = upsample_nearest2x(x)
        assert np.array_equal(y.data, nn.data)

    def test_gradients_accumulate_across_time_steps(self):
        # shared weights: two unrolled steps must produce different gradients
        # than one on the same parameters
        base = RdfdbkConfig(time_steps=1, feature_channels=8, residual_blocks=2)
        deep = RdfdbkConfig(time_steps=2, feature_channels=8, residual_blocks=2)
        store = init_rdfdbk(base, seed=8, dtype=np.float64)
        _randomize(store, seed=96)
        x = Tensor(_rand_image((1, 1, 8, 8), seed=15))

        grads = {}
        for tag, cfg in (("t1", base), ("t2", deep)):
            out = rdfdbk_forward(store, cfg, x)
            loss = l1_loss(out, Tensor(out.data - 1.0))
            store.zero_grad()
            backward(loss)
            grads[tag] = store["extract.w"].grad.copy()
        assert not np.allclose(grads["t1"], grads["t2"])

    def test_gradients_match_finite_differences(self):
        cfg = RdfdbkConfig(time_steps=2, feature_channels=6, residual_blocks=2)
        store = init_rdfdbk(cfg, seed=9, dtype=np.float64)
        _randomize(store, seed=95)
        x = Tensor(_rand_image((1, 1, 6, 6), seed=16))
        target = None

        def loss_fn():
            out = rdfdbk_forward(store, cfg, x)
            nonlocal target
            if target is None:
                target = Tensor(out.data - 1.0)
            return l1_loss(out, target)

        _sampled_fd_check(store, loss_fn)

    def test_wrong_channels_rejected(self):
        cfg = RdfdbkConfig()
        store = init_rdfdbk(cfg)
        with pytest.raises(ValueError):
            rdfdbk_forward(store, cfg, Tensor(np.zeros((1, 3, 8, 8),
                                                       dtype=np.float32)))


class TestConfigInference:
    def test_d2net_round_trip(self):
        cfg = D2NetConfig(width_multiplier=0.25, in_channels=3)
        store = init_d2net(cfg, seed=10)
        got = infer_d2net_config(store)
        assert got.scales == 4
        assert got.effective_channels() == cfg.effective_channels()
        assert got.residual_blocks_per_scale == 2
        assert got.in_channels == 3

    def test_rdfdbk_round_trip(self):
        cfg = RdfdbkConfig(feature_channels=16, residual_blocks=3)
        store = init_rdfdbk(cfg, seed=10)
        got = infer_rdfdbk_config(store, time_steps=4)
        assert got.feature_channels == 16
        assert got.residual_blocks == 3
        assert got.time_steps == 4

    def test_inference_rejects_wrong_model_kind(self):
        d2 = init_d2net(_small_cfg())
        up = init_rdfdbk(RdfdbkConfig(feature_channels=4, residual_blocks=1))
        with pytest.raises(ValueError):
            infer_d2net_config(up)
        with pytest.raises(ValueError):
            infer_rdfdbk_config(d2)

    def test_inferred_config_reproduces_forward(self):
        cfg = _small_cfg()
        store = init_d2net(cfg, seed=13)
        _randomize(store, seed=94)
        got = infer_d2net_config(store)
        x = Tensor(_rand_image((1, 1, 16, 16), seed=17).astype(np.float32))
        with no_grad():
            a = d2net_forward(store, cfg, x)
            b = d2net_forward(store, got, x)
        assert np.array_equal(a.data, b.data)
