"""Gradient verification for the hand-written backward passes.

Layer backwards are checked by central finite differences in float64; the
full training objective is checked for gradient flow into every parameter.
"""

import numpy as np
import pytest

from skelcompose import nn
from skelcompose.losses import LossConfig
from skelcompose.modalities import make_bundle
from skelcompose.model import Model, ModelConfig
from skelcompose.synthetic import synth_generate
from skelcompose.training import pair_objective


def fd_grad(f, x, step=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = f()
        x[i] = orig - step
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return g


def assert_close(analytic, numeric, tol=2e-5):
    # The 1e-4 floor absorbs central-difference cancellation noise (~1e-10
    # absolute) on entries whose true gradient is at or near zero.
    analytic = np.asarray(analytic)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    assert (np.abs(analytic - numeric) / denom).max() <= tol


def scalar_head(out):
    """Fixed linear functional so layer outputs reduce to one scalar."""
    w = np.cos(np.arange(out.size, dtype=np.float64)).reshape(out.shape)
    return float((out * w).sum()), w


class TestLayerBackwards:
    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.params = {}

    def _check_param_grads(self, value_fn, grads, names):
        for name in names:
            num = fd_grad(value_fn, self.params[name])
            assert_close(grads[name], num)

    def test_mlp2(self):
        nn.init_mlp2(self.params, "m", 4, 6, 3, self.rng, np.float64)
        # jitter biases off the ReLU kink
        self.params["m.fc1.b"] += self.rng.normal(0, 0.3, 6)
        x = self.rng.standard_normal((5, 4))

        def value():
            out, _ = nn.mlp2_fwd(self.params, "m", x)
            return scalar_head(out)[0]

        out, cache = nn.mlp2_fwd(self.params, "m", x)
        _, w = scalar_head(out)
        grads = {}
        dx = nn.mlp2_bwd(self.params, "m", w, cache, grads)
        assert_close(dx, fd_grad(value, x))
        self._check_param_grads(value, grads, ["m.fc1.w", "m.fc1.b", "m.fc2.w", "m.fc2.b"])

    def test_layer_norm(self):
        nn.init_layer_norm(self.params, "ln", 6, np.float64)
        self.params["ln.g"] += self.rng.normal(0, 0.2, 6)
        x = self.rng.standard_normal((4, 6))

        def value():
            out, _ = nn.layer_norm_fwd(self.params, "ln", x)
            return scalar_head(out)[0]

        out, cache = nn.layer_norm_fwd(self.params, "ln", x)
        _, w = scalar_head(out)
        grads = {}
        dx = nn.layer_norm_bwd(self.params, "ln", w, cache, grads)
        assert_close(dx, fd_grad(value, x))
        self._check_param_grads(value, grads, ["ln.g", "ln.b"])

    @pytest.mark.parametrize("n_heads", [1, 2])
    def test_attention(self, n_heads):
        nn.init_attention(self.params, "at", 6, self.rng, np.float64)
        x = self.rng.standard_normal((2, 5, 6))

        def value():
            out, _ = nn.attention_fwd(self.params, "at", x, n_heads)
            return scalar_head(out)[0]

        out, cache = nn.attention_fwd(self.params, "at", x, n_heads)
        _, w = scalar_head(out)
        grads = {}
        dx = nn.attention_bwd(self.params, "at", w, cache, grads)
        assert_close(dx, fd_grad(value, x))
        self._check_param_grads(
            value, grads, [f"at.{p}.{s}" for p in "qkvo" for s in "wb"]
        )

    def test_encoder_stack(self):
        for i in range(2):
            nn.init_block(self.params, f"e.{i}", 6, 2, self.rng, np.float64)
            self.params[f"e.{i}.ffn.fc1.b"] += self.rng.normal(0, 0.3, 12)
        x = self.rng.standard_normal((2, 4, 6))

        def value():
            out, _ = nn.encoder_fwd(self.params, "e", x, 2, 2)
            return scalar_head(out)[0]

        out, cache = nn.encoder_fwd(self.params, "e", x, 2, 2)
        _, w = scalar_head(out)
        grads = {}
        dx = nn.encoder_bwd(self.params, "e", w, cache, grads)
        assert_close(dx, fd_grad(value, x))
        some = ["e.0.attn.q.w", "e.0.ffn.fc1.w", "e.1.ln1.g", "e.1.ffn.fc2.b"]
        self._check_param_grads(value, grads, some)


@pytest.fixture(scope="module")
def grad_setup():
    ds = synth_generate(2, 6, 2, n_joints=5, n_frames=6, noise_sd=0.01, seed=2)
    cfg = ModelConfig(embed_dim=8, frames=6, n_joints=5, n_heads=2, ffn_mult=2,
                      global_heads=True)
    model = Model(cfg, seed=1, dtype=np.float64)
    jitter = np.random.default_rng(9)
    for p in model.params.values():
        p += jitter.normal(0, 0.05, p.shape)
    mods = cfg.modalities
    b_a = [make_bundle(s.coords, ds.topology, mods) for s in ds.sequences[:3]]
    b_b = [make_bundle(s.coords, ds.topology, mods) for s in ds.sequences[3:6]]
    return model, b_a, b_b


class TestObjectiveGradients:
    @pytest.mark.parametrize("loss_cfg", [
        LossConfig(alpha=0.8, beta=1.2),
        LossConfig(alpha=0.0, beta=1.0),
        LossConfig(beta=0.0, space="global"),
    ], ids=["full", "composition-only", "global-baseline"])
    def test_every_parameter_receives_gradient(self, grad_setup, loss_cfg):
        model, b_a, b_b = grad_setup
        _, grads = pair_objective(model, b_a, b_b, loss_cfg)
        skip_spaces = ("g",) if loss_cfg.space == "stream" else ("t", "s")
        for name, p in model.params.items():
            if name.startswith("proj.") and name.split(".")[2] in skip_spaces:
                continue  # heads of the unused projection space see no loss
            if loss_cfg.alpha == 0.0 and loss_cfg.beta == 0.0:
                continue
            assert name in grads and grads[name].shape == p.shape
            assert np.abs(grads[name]).max() > 0, f"zero gradient for {name}"

    def test_spot_finite_differences_through_model(self, grad_setup):
        model, b_a, b_b = grad_setup
        cfg = LossConfig(alpha=0.8, beta=1.2)
        _, grads = pair_objective(model, b_a, b_b, cfg)

        def value():
            return pair_objective(model, b_a, b_b, cfg)[0].total

        rng = np.random.default_rng(4)
        picked = [
            "embed.joint.t.fc1.w", "embed.motion.s.fc2.b", "pos.t", "pos.s",
            "enc.t.0.attn.q.w", "enc.s.0.ffn.fc1.w", "enc.t.0.ln2.g",
            "proj.bone.t.fc1.w", "proj.multi.s.fc2.w",
        ]
        for name in picked:
            p = model.params[name]
            flat, gflat = p.reshape(-1), np.asarray(grads[name]).reshape(-1)
            for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                orig = flat[i]
                step = 1e-6
                flat[i] = orig + step
                fp = value()
                flat[i] = orig - step
                fm = value()
                flat[i] = orig
                num = (fp - fm) / (2 * step)
                denom = max(abs(num), abs(gflat[i]), 1e-4)
                assert abs(num - gflat[i]) / denom <= 5e-5, name

    def test_unified_path_backward(self, grad_setup):
        model, b_a, _ = grad_setup
        subset = ("joint", "bone")

        def value():
            out = model.forward_unified(b_a, subset)
            return scalar_head(out)[0]

        out, cache = model.forward_unified(b_a, subset, with_cache=True)
        _, w = scalar_head(out)
        grads = model.backward_unified(cache, w)
        for name in ("embed.joint.t.fc1.w", "embed.bone.s.fc2.w", "pos.t",
                     "enc.t.0.attn.v.w", "enc.s.0.ffn.fc2.w"):
            num = fd_grad(value, model.params[name])
            assert_close(grads[name], num, tol=5e-5)
        assert "embed.motion.t.fc1.w" not in grads  # outside the subset
