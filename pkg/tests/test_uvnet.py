import numpy as np
import pytest
import torch

from ki67pi.uvnet import (
    CheckpointError,
    ConfigurationError,
    UVNet,
    UVNetConfig,
    VBlock,
    VBlockConfig,
    count_parameters,
    instantiated_parameter_count,
    load_checkpoint,
    save_checkpoint,
    uvnet_forward,
    vblock_channel_schedule,
)

from _oracles import finite_difference_check


@pytest.mark.parametrize(
    "f, k, schedule",
    [(16, 4, [16, 20, 24, 28, 32]), (4, 1, [4, 5, 6, 7, 8]), (32, 8, [32, 40, 48, 56, 64])],
)
def test_channel_schedule(f, k, schedule):
    cfg = VBlockConfig(f)
    assert cfg.k == k
    assert vblock_channel_schedule(cfg) == schedule


@pytest.mark.parametrize("f", [0, 6, 18, -4])
def test_schedule_rejects_indivisible(f):
    with pytest.raises(ConfigurationError):
        vblock_channel_schedule(f)


def test_vblock_doubles_channels():
    torch.manual_seed(0)
    assert VBlock(4)(torch.rand(1, 4, 8, 8)).shape == (1, 8, 8, 8)
    assert VBlock(16)(torch.rand(1, 16, 32, 32)).shape == (1, 32, 32, 32)


def test_vblock_channel_mismatch():
    with pytest.raises(ValueError):
        VBlock(8)(torch.rand(1, 4, 8, 8))


def test_vblock_stage_layout():
    block = VBlock(16)
    for s, stage in enumerate(block.stages):
        bottleneck, growth = stage[0][0], stage[1][0]
        assert (bottleneck.in_channels, bottleneck.out_channels, bottleneck.kernel_size) == (16 + 4 * s, 16, (1, 1))
        assert (growth.in_channels, growth.out_channels, growth.kernel_size) == (16, 4, (3, 3))


def test_vblock_dense_preservation_with_zero_weights():
    block = VBlock(8)
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()
    x = torch.rand(2, 8, 12, 12)
    out = block(x)
    assert torch.equal(out[:, :8], x)
    assert not out[:, 8:].any()


def test_every_vblock_doubles_in_full_network():
    model = UVNet(UVNetConfig(base_f=16, depth=4))
    blocks = model.vblocks()
    assert len(blocks) == 2 * 4 + 1
    for block in blocks:
        assert block.out_channels == 2 * block.in_channels
    assert [b.in_channels for b in model.encoder] == [16, 32, 64, 128]
    assert model.bottleneck.in_channels == 256


def test_bottleneck_resolution():
    model = UVNet(UVNetConfig(base_f=16, depth=4))
    seen = {}
    model.bottleneck.register_forward_hook(lambda m, i, o: seen.update(shape=tuple(i[0].shape)))
    with torch.no_grad():
        out = model(torch.rand(1, 3, 256, 256))
    assert out.shape == (1, 3, 256, 256)
    assert seen["shape"] == (1, 256, 16, 16)


@pytest.mark.parametrize("size, base_f, depth", [(64, 4, 2), (32, 8, 3), (48, 4, 4)])
def test_spatial_preservation(size, base_f, depth):
    model = UVNet(UVNetConfig(base_f=base_f, depth=depth))
    with torch.no_grad():
        assert model(torch.rand(2, 3, size, size)).shape == (2, 3, size, size)


def test_indivisible_input():
    with pytest.raises(ValueError):
        UVNet(UVNetConfig(base_f=4, depth=2))(torch.rand(1, 3, 30, 32))


def test_zero_input_zero_bias_gives_zero():
    model = UVNet(UVNetConfig(base_f=4, depth=2))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    out = uvnet_forward(np.zeros((64, 64, 3), np.float32), model)
    assert out.shape == (64, 64, 3)
    assert not out.any()


def test_uvnet_forward_accepts_uint8():
    model = UVNet(UVNetConfig(base_f=4, depth=2))
    img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    a = uvnet_forward(img, model)
    b = uvnet_forward(img.astype(np.float32) / 255, model)
    np.testing.assert_allclose(a, b, atol=1e-6)


@pytest.mark.parametrize(
    "cfg",
    [UVNetConfig(4, 1), UVNetConfig(4, 2), UVNetConfig(8, 3), UVNetConfig(16, 4), UVNetConfig(8, 2, batch_norm=True)],
)
def test_parameter_count_matches_model(cfg):
    assert count_parameters(cfg) == instantiated_parameter_count(UVNet(cfg))


def test_parameter_count_small_config_by_hand():
    # base_f=4, depth=1: stem, two V-Blocks (f=4 and f=8), one decoder level, head
    def vblock(f):
        k = f // 4
        return sum((f + s * k) * f + f + 9 * f * k + k for s in range(4))

    expected = (3 * 4 * 9 + 4) + vblock(4) + vblock(8) + (16 * 8 + 8) + (16 * 4 + 4) + vblock(4) + (8 * 3 + 3)
    assert count_parameters(UVNetConfig(4, 1)) == expected


@pytest.mark.parametrize("base_f, depth", [(4, 2), (8, 3), (16, 4)])
def test_parameter_growth_with_width(base_f, depth):
    ratio = count_parameters(UVNetConfig(2 * base_f, depth)) / count_parameters(UVNetConfig(base_f, depth))
    assert 2 < ratio < 5


def test_parameter_growth_with_depth():
    assert count_parameters(UVNetConfig(4, 2)) > count_parameters(UVNetConfig(4, 1))


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = UVNet(UVNetConfig(base_f=4, depth=2)).double()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    results = finite_difference_check(model, lambda: (model(x) ** 2).mean(), 60, np.random.default_rng(0))
    worst = max(r[2] for r in results)
    assert worst <= 1e-3


def test_forward_is_deterministic():
    torch.manual_seed(3)
    model = UVNet(UVNetConfig(base_f=8, depth=2)).eval()
    x = torch.rand(2, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(model(x), model(x))


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(1)
    model = UVNet(UVNetConfig(base_f=4, depth=2))
    save_checkpoint(tmp_path / "m.pt", model)
    back = load_checkpoint(tmp_path / "m.pt")
    assert back.config == model.config
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(back.eval()(x), model.eval()(x))


def test_checkpoint_config_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m.pt", UVNet(UVNetConfig(base_f=4, depth=2)))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.pt", UVNetConfig(base_f=8, depth=2))


def test_checkpoint_tampered_weights(tmp_path):
    model = UVNet(UVNetConfig(base_f=4, depth=2))
    save_checkpoint(tmp_path / "m.pt", model)
    payload = torch.load(tmp_path / "m.pt", weights_only=True)
    payload["config"]["base_f"] = 8
    torch.save(payload, tmp_path / "m.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.pt")
