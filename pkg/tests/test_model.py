import numpy as np
import pytest
import torch

from semco.errors import DataError, NumericalError
from semco.model import (
    ModelSpec,
    config_hash,
    ema_update,
    forward,
    gradients,
    init_state,
    load_checkpoint,
    save_checkpoint,
    set_flat_params,
    sgd_step,
)


def tiny_state(seed=0, **kw):
    spec = ModelSpec(**{"image_shape": (4, 4, 3), "emb_dim": 6, "num_classes": 3,
                        "backbone": "mlp", "hidden": 5, "dtype": "float64", **kw})
    return init_state(spec, seed)


def scalar_state():
    """Six scalar parameters, all set to 1."""
    spec = ModelSpec((1, 1, 1), 1, 1, backbone="mlp", hidden=1, dtype="float64")
    state = init_state(spec)
    set_flat_params(state, np.ones(state.num_params()))
    return state


def finite_difference(state, loss_fn, h=1e-4):
    base = state.flat_params()
    out = np.zeros_like(base)
    for i in range(len(base)):
        for sign in (1, -1):
            v = base.copy()
            v[i] += sign * h
            set_flat_params(state, v)
            with torch.no_grad():
                out[i] += sign * float(loss_fn()) / (2 * h)
    set_flat_params(state, base)
    return out


class TestForward:
    def test_shapes(self, rng):
        spec = ModelSpec((8, 8, 3), 128, 10)
        state = init_state(spec, 0)
        emb, logits = forward(state, rng.uniform(size=(3, 8, 8, 3)))
        assert emb.shape == (3, 128) and logits.shape == (3, 10)

    def test_deterministic(self, rng):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 0)
        x = rng.uniform(size=(5, 8, 8, 3))
        a, b = forward(state, x), forward(state, x)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_zero_heads_give_zero_outputs(self, rng):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 0)
        with torch.no_grad():
            for head in (state.net.sc_head, state.net.oh_head):
                head.weight.zero_()
                head.bias.zero_()
        emb, logits = forward(state, rng.uniform(size=(2, 8, 8, 3)))
        assert torch.count_nonzero(emb) == 0 and torch.count_nonzero(logits) == 0

    def test_shape_mismatch(self, rng):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 0)
        with pytest.raises(DataError):
            forward(state, rng.uniform(size=(2, 6, 6, 3)))
        with pytest.raises(DataError):
            forward(state, np.zeros((0, 8, 8, 3)))

    def test_ema_forward_uses_shadow(self, rng):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 0)
        x = rng.uniform(size=(2, 8, 8, 3))
        before = forward(state, x, use_ema=True)[1].clone()
        with torch.no_grad():
            for p in state.net.parameters():
                p.add_(1.0)
        assert torch.equal(forward(state, x, use_ema=True)[1], before)
        assert not torch.equal(forward(state, x)[1], before)

    def test_he_init_zero_bias(self):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 0)
        for name, p in state.net.named_parameters():
            if name.endswith("bias"):
                assert torch.count_nonzero(p) == 0
        assert state.net.sc_head.weight.std().item() == pytest.approx(np.sqrt(2 / 64), rel=0.2)


class TestGradients:
    def test_matches_finite_differences(self, rng):
        state = tiny_state()
        x = torch.as_tensor(rng.uniform(size=(8, 4, 4, 3))).permute(0, 3, 1, 2)
        y = torch.as_tensor(rng.integers(0, 3, size=8))

        def loss():
            emb, logits = forward(state, x)
            return torch.nn.functional.cross_entropy(logits, y) + (emb**2).mean()

        g = gradients(state, loss).numpy()
        fd = finite_difference(state, loss)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    def test_cosine_loss_stationary_along_target(self, rng):
        state = tiny_state()
        x = torch.as_tensor(rng.uniform(size=(1, 4, 4, 3))).permute(0, 3, 1, 2)
        with torch.no_grad():
            target = 2.5 * forward(state, x)[0][0]

        def loss():
            z = forward(state, x)[0][0]
            return 1 - torch.dot(z, target) / (z.norm() * target.norm())

        g = gradients(state, loss).numpy()
        assert np.max(np.abs(g)) < 1e-10

    def test_constant_loss_zero_gradient(self):
        state = tiny_state()
        g = gradients(state, lambda: torch.tensor(3.0))
        assert g.shape == (state.num_params(),) and torch.count_nonzero(g) == 0

    def test_nonfinite_loss(self):
        with pytest.raises(NumericalError):
            gradients(tiny_state(), lambda: torch.tensor(float("nan")))


class TestSGD:
    def test_plain_sgd(self, rng):
        state = tiny_state()
        p0 = state.flat_params()
        g = rng.normal(size=p0.shape)
        sgd_step(state, g, lr=0.1, momentum=0.0, weight_decay=0.0)
        np.testing.assert_allclose(state.flat_params(), p0 - 0.1 * g, atol=1e-15)

    def test_zero_lr_updates_buffers_only(self, rng):
        state = tiny_state()
        p0 = state.flat_params()
        sgd_step(state, rng.normal(size=p0.shape), lr=0.0)
        np.testing.assert_array_equal(state.flat_params(), p0)
        assert any(torch.count_nonzero(b) for b in state.momentum_buf.values())

    def test_nesterov_hand_value(self):
        # f(w) = w^2 at w = 1: g = 2, buf = 2, step = g + 0.9 * buf = 3.8
        state = scalar_state()
        sgd_step(state, 2 * state.flat_params(), lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(state.flat_params(), 0.62, atol=1e-15)
        # second step from w = 0.62: g = 1.24, buf = 0.9 * 2 + 1.24 = 3.04
        sgd_step(state, 2 * state.flat_params(), lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(state.flat_params(), 0.62 - 0.1 * (1.24 + 0.9 * 3.04), atol=1e-14)

    def test_weight_decay_added_to_gradient(self):
        state = scalar_state()
        sgd_step(state, np.zeros(state.num_params()), lr=0.1, momentum=0.0, weight_decay=0.5)
        np.testing.assert_allclose(state.flat_params(), 1 - 0.1 * 0.5, atol=1e-15)

    def test_nonfinite_gradient(self):
        state = tiny_state()
        g = np.zeros(state.num_params())
        g[0] = np.inf
        with pytest.raises(NumericalError):
            sgd_step(state, g, lr=0.1)

    def test_gradient_length_checked(self):
        with pytest.raises(ValueError):
            sgd_step(tiny_state(), np.zeros(3), lr=0.1)


class TestEMA:
    def test_decay_zero_copies_live(self, rng):
        state = tiny_state()
        set_flat_params(state, rng.normal(size=state.num_params()))
        ema_update(state, 0.0)
        np.testing.assert_array_equal(state.flat_params(ema=True), state.flat_params())

    def test_decay_one_keeps_shadow(self, rng):
        state = tiny_state()
        before = state.flat_params(ema=True)
        set_flat_params(state, rng.normal(size=state.num_params()))
        ema_update(state, 1.0)
        np.testing.assert_array_equal(state.flat_params(ema=True), before)

    def test_closed_form(self, rng):
        state = tiny_state()
        e0 = state.flat_params(ema=True)
        live = rng.normal(size=state.num_params())
        set_flat_params(state, live)
        ema_update(state, 0.999)
        np.testing.assert_allclose(state.flat_params(ema=True), 0.999 * e0 + 0.001 * live, atol=1e-12)

    def test_initial_shadow_equals_live(self):
        state = tiny_state()
        np.testing.assert_array_equal(state.flat_params(ema=True), state.flat_params())

    def test_invalid_decay(self):
        with pytest.raises(ValueError):
            ema_update(tiny_state(), 1.5)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        state = init_state(ModelSpec((8, 8, 3), 16, 4), 3)
        sgd_step(state, rng.normal(size=state.num_params()), lr=0.01)
        ema_update(state, 0.5)
        cfg = {"seed": 3, "eps": 0.2}
        save_checkpoint(state, tmp_path / "c.npz", cfg, {"label_matrix": np.eye(4)})
        back, header, extras = load_checkpoint(tmp_path / "c.npz")
        np.testing.assert_array_equal(back.flat_params(), state.flat_params())
        np.testing.assert_array_equal(back.flat_params(ema=True), state.flat_params(ema=True))
        for name in state.names:
            assert torch.equal(back.momentum_buf[name], state.momentum_buf[name])
        assert back.step == 1 and header["config_hash"] == config_hash(cfg)
        np.testing.assert_array_equal(extras["label_matrix"], np.eye(4))
        x = rng.uniform(size=(2, 8, 8, 3))
        assert torch.equal(forward(back, x, use_ema=True)[1], forward(state, x, use_ema=True)[1])

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "missing.npz")

    def test_config_hash_order_independent(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
