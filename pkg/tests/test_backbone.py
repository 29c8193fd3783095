import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from connectome_llm import autograd as ag
from connectome_llm.autograd import Tensor, backward, finite_difference_check
from connectome_llm.backbone import (
    PRESETS,
    BackboneConfig,
    backbone_forward,
    build_backbone,
    load_backbone,
    preset_config,
    save_backbone,
)
from connectome_llm.errors import ConfigError, DimensionError, LoadError, NumericError

SMALL = BackboneConfig(n_layers=2, d_h=8, n_attn_heads=2, d_ff=16)


def test_same_seed_same_weights():
    assert build_backbone(SMALL, 3).checksum() == build_backbone(SMALL, 3).checksum()
    assert build_backbone(SMALL, 3).checksum() != build_backbone(SMALL, 4).checksum()


def test_weights_are_frozen():
    for t in build_backbone(SMALL, 0).tensors().values():
        assert not t.requires_grad


def test_save_load_round_trip(tmp_path):
    w = build_backbone(SMALL, 5)
    save_backbone(w, tmp_path / "bb.bin")
    back = load_backbone(tmp_path / "bb.bin")
    assert back.checksum() == w.checksum()
    assert build_backbone(SMALL, weight_file=tmp_path / "bb.bin").checksum() == w.checksum()


def test_load_with_wrong_width(tmp_path):
    save_backbone(build_backbone(SMALL, 5), tmp_path / "bb.bin")
    with pytest.raises(LoadError):
        load_backbone(tmp_path / "bb.bin", BackboneConfig(n_layers=2, d_h=16, n_attn_heads=2, d_ff=16))


def test_load_truncates_to_config(tmp_path):
    w = build_backbone(SMALL, 5)
    save_backbone(w, tmp_path / "bb.bin")
    one = load_backbone(tmp_path / "bb.bin", BackboneConfig(n_layers=1, d_h=8, n_attn_heads=2, d_ff=16))
    assert len(one.layers) == 1
    x = np.random.default_rng(0).normal(size=(3, 8))
    np.testing.assert_array_equal(backbone_forward(x, one).data, backbone_forward(x, w.truncated(1)).data)


def test_config_errors():
    with pytest.raises(ConfigError):
        build_backbone(BackboneConfig(n_layers=0, d_h=8, n_attn_heads=2))
    with pytest.raises(ConfigError):
        build_backbone(BackboneConfig(d_h=8, n_attn_heads=3))
    with pytest.raises(ConfigError):
        build_backbone(SMALL, 0).truncated(3)


def test_single_token_causal():
    w = build_backbone(SMALL, 1)
    x = np.random.default_rng(1).normal(size=(1, 8))
    a, b = backbone_forward(x, w).data, backbone_forward(x, w).data
    assert a.shape == (1, 8) and np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()


def test_width_mismatch():
    with pytest.raises(DimensionError):
        backbone_forward(np.ones((3, 7)), build_backbone(SMALL, 0))


def test_non_finite_reports_layer():
    w = build_backbone(SMALL, 0)
    w.layers[0]["ff.b2"].data[:] = np.inf
    with pytest.raises(NumericError, match="layer 0"):
        backbone_forward(np.ones((2, 8)), w)


@given(seed=st.integers(0, 2**32 - 1), M=st.integers(2, 6))
def test_non_causal_is_permutation_equivariant(seed, M):
    rng = np.random.default_rng(seed)
    w = build_backbone(BackboneConfig(2, 8, 2, 16, causal=False), seed)
    x = rng.normal(size=(M, 8))
    perm = rng.permutation(M)
    np.testing.assert_allclose(backbone_forward(x[perm], w).data, backbone_forward(x, w).data[perm], atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), M=st.integers(2, 6), data=st.data())
def test_causal_rows_ignore_future_tokens(seed, M, data):
    t = data.draw(st.integers(0, M - 2))
    rng = np.random.default_rng(seed)
    w = build_backbone(SMALL, seed)
    x = rng.normal(size=(M, 8))
    y = x.copy()
    y[t + 1 :] += rng.normal(size=(M - t - 1, 8))
    np.testing.assert_array_equal(backbone_forward(x, w).data[: t + 1], backbone_forward(y, w).data[: t + 1])


@pytest.mark.parametrize("causal", [True, False])
def test_token_gradient_matches_finite_differences(causal):
    rng = np.random.default_rng(11)
    w = build_backbone(BackboneConfig(2, 8, 2, 16, causal=causal), 11)
    # sum(H) is identically zero after the final layer norm, so project first
    r = Tensor(rng.normal(size=(4, 8)))
    err = finite_difference_check(lambda t: ag.sum_(backbone_forward(t, w) * r), rng.normal(size=(4, 8)))
    assert err <= 1e-4


def test_gradient_flows_to_tokens_not_weights():
    w = build_backbone(SMALL, 2)
    before = w.checksum()
    x = Tensor(np.random.default_rng(2).normal(size=(3, 8)), requires_grad=True)
    backward(ag.sum_(backbone_forward(x, w) ** 2))
    assert x.grad is not None and np.abs(x.grad).max() > 0
    assert all(t.grad is None for t in w.tensors().values())
    assert w.checksum() == before


@settings(max_examples=10)
@given(M=st.integers(1, 9), batch=st.integers(1, 3))
def test_output_shape(M, batch):
    w = build_backbone(SMALL, 0)
    x = np.random.default_rng(M).normal(size=(batch, M, 8))
    assert backbone_forward(x, w).shape == (batch, M, 8)


def test_presets():
    assert preset_config("llama").n_layers == 16 and preset_config("llama").causal
    assert preset_config("gpt2").n_layers == 12 and preset_config("gpt2").causal
    assert preset_config("bert").n_layers == 12 and not preset_config("bert").causal
    assert set(PRESETS) == {"llama", "gpt2", "bert"}
    with pytest.raises(ConfigError):
        preset_config("t5")


def test_positional_option_breaks_equivariance():
    w = build_backbone(BackboneConfig(1, 8, 2, 16, causal=False, positional=True), 0)
    x = np.random.default_rng(0).normal(size=(3, 8))
    perm = np.array([2, 0, 1])
    assert not np.allclose(backbone_forward(x[perm], w).data, backbone_forward(x, w).data[perm])
