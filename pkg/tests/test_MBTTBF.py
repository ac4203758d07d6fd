import numpy as np
import numpy.testing as npt
import pytest
import torch

from pyMBTTBF import MBTTBF as net
from pyMBTTBF.exceptions import AlignmentError, CheckpointError, ConfigError


def random_image(size=(40, 56), seed=0, dtype=torch.float32):
    rng = np.random.default_rng(seed)
    return net.image_to_tensor(rng.random(size + (3,)), dtype)


def test_tap_strides_and_channels():
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.MBTTBF))
    raw = model.backbone(random_image((64, 96)))
    for name, stride in net.TAP_STRIDES.items():
        assert raw[name].stride == stride
        assert raw[name].values.shape[-2:] == (64 // stride, 96 // stride)
    assert list(net.tap_channels(net.VGG16_LAYOUT).values()) == [256, 512, 512, 128]


@pytest.mark.parametrize('topology', net.TOPOLOGIES)
def test_prediction_shape(topology):
    model = net.MBTTBFNet(net.NetworkConfig(topology=topology))
    with torch.no_grad():
        state = model(random_image((45, 70)))
    assert state.prediction.values.shape == (1, 1, 12, 18)
    assert state.prediction.stride == 4
    assert torch.all(state.prediction.values >= 0)
    for side in state.side_outputs:
        assert side.values.shape[-2:] == (-(-45 // side.stride), -(-70 // side.stride))


def test_side_output_count():
    expected = {net.NONE: 0, net.FLAT_ADD: 0, net.FLAT_CONCAT: 0, net.BT: 6, net.TB: 6,
                net.BTTB: 12, net.MBTTBF: 20}
    for topology, n in expected.items():
        with torch.no_grad():
            state = net.MBTTBFNet(net.NetworkConfig(topology=topology))(random_image())
        assert len(state.side_outputs) == n
    with torch.no_grad():
        state = net.MBTTBFNet(net.NetworkConfig(use_scfb=False))(random_image())
    assert state.side_outputs == []


def test_bands_of_side_outputs():
    with torch.no_grad():
        state = net.MBTTBFNet()(random_image())
    level1 = [s for s in state.side_outputs if s.level == 1]
    assert len(level1) == 12
    assert all(len(s.bands) == 1 for s in level1)
    level2 = {(s.block, s.branch): s.bands for s in state.side_outputs if s.level == 2}
    assert level2[('scfb2_456', 'i')] == (3, 4, 5)
    assert level2[('scfb2_543', 'j')] == (3, 4)


def test_none_topology_is_baseline():
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.NONE, rng_seed=3))
    image = random_image((33, 47), seed=1)
    with torch.no_grad():
        state = model(image)
        baseline = model.baseline()(image)
    assert torch.equal(state.prediction.values, baseline)
    with pytest.raises(ConfigError):
        net.MBTTBFNet().baseline()


def test_zero_residuals_pass_inputs_through():
    model = net.MBTTBFNet()
    model.zero_scfb_residuals()
    with torch.no_grad():
        state = model(random_image())
    for name, out in state.blocks.items():
        assert torch.equal(out.hats[0], out.inputs[0]), name
        assert torch.equal(out.hats[1], out.inputs[1]), name
        assert torch.count_nonzero(out.residuals[0]) == 0


def test_zero_attention_averages():
    for topology in (net.BTTB, net.MBTTBF):
        model = net.MBTTBFNet(net.NetworkConfig(topology=topology))
        model.zero_attention()
        with torch.no_grad():
            state = model(random_image())
        npt.assert_array_equal(state.attention.numpy(), 0.5)
        expected = 0.5 * sum(state.attention_inputs)
        npt.assert_allclose(state.fused.values.numpy(), expected.numpy(), rtol=1e-6, atol=1e-7)


def test_scfb_target_stride():
    block = net.SCFB(4)
    fine = net.FeatureGrid(torch.rand(1, 4, 8, 8), 4)
    coarse = net.FeatureGrid(torch.rand(1, 4, 4, 4), 8)
    assert block(fine, coarse).fused.stride == 8
    assert block(coarse, fine).fused.stride == 4
    assert block(fine, coarse).fused.values.shape == (1, 4, 4, 4)
    with pytest.raises(ConfigError):
        net.SCFB(4, target='k')


def test_resample_alignment():
    x = torch.rand(1, 2, 6, 6)
    assert net.resample(x, (3, 3)).shape == (1, 2, 3, 3)
    assert net.resample(x, (12, 12)).shape == (1, 2, 12, 12)
    with pytest.raises(AlignmentError):
        net.resample(x, (4, 4))


def test_same_seed_same_parameters():
    a = net.MBTTBFNet(net.NetworkConfig(rng_seed=5)).state_dict()
    b = net.MBTTBFNet(net.NetworkConfig(rng_seed=5)).state_dict()
    c = net.MBTTBFNet(net.NetworkConfig(rng_seed=6)).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_config_errors():
    with pytest.raises(ConfigError):
        net.NetworkConfig(topology='FPN')
    with pytest.raises(ConfigError):
        net.NetworkConfig(backbone='resnet')
    with pytest.raises(ConfigError):
        net.NetworkConfig(dr_channels=0)
    config = net.NetworkConfig(topology=net.BT, rng_seed=4)
    assert net.NetworkConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()
    assert config.replace(topology=net.TB).topology == net.TB


def test_checkpoint_round_trip(tmp_path):
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.BTTB, rng_seed=2))
    path = tmp_path / 'model.npz'
    net.save_checkpoint(model, str(path))
    restored = net.load_checkpoint(str(path))
    assert restored.config.to_dict() == model.config.to_dict()
    image = random_image()
    with torch.no_grad():
        assert torch.equal(model(image).prediction.values, restored(image).prediction.values)
    second = tmp_path / 'again.npz'
    net.save_checkpoint(restored, str(second))
    assert path.read_bytes() == second.read_bytes()


def test_checkpoint_keys(tmp_path):
    path = str(tmp_path / 'model.npz')
    net.save_checkpoint(net.MBTTBFNet(), path)
    with np.load(path) as data:
        keys = set(data.files)
    assert {'backbone.layers.conv3_1.weight', 'bottom_top.blocks.scfb1_34.c1_i.conv.weight',
            'attention.conv1.bias', net.CONFIG_KEY} <= keys


def test_checkpoint_key_mismatch(tmp_path):
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.BT))
    path = str(tmp_path / 'model.npz')
    net.save_checkpoint(model, path)
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files if not k.startswith('predictor.')}
    arrays['extra.weight'] = np.zeros(3)
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError) as info:
        net.load_checkpoint(path)
    assert info.value.missing == ['predictor.conv.bias', 'predictor.conv.weight']
    assert info.value.unexpected == ['extra.weight']


def test_checkpoint_without_config(tmp_path):
    path = str(tmp_path / 'bare.npz')
    np.savez(path, a=np.zeros(2))
    with pytest.raises(CheckpointError):
        net.load_checkpoint(path)


def test_load_backbone_weights(tmp_path):
    source = net.MBTTBFNet(net.NetworkConfig(rng_seed=9))
    path = str(tmp_path / 'backbone.npz')
    np.savez(path, **{k: v.numpy() for k, v in source.backbone.layers.state_dict().items()})
    model = net.MBTTBFNet(net.NetworkConfig(rng_seed=1))
    net.load_backbone_weights(model, path)
    for key, value in source.backbone.layers.state_dict().items():
        assert torch.equal(model.backbone.layers.state_dict()[key], value)
    np.savez(path, conv1_1=np.zeros(1))
    with pytest.raises(CheckpointError):
        net.load_backbone_weights(model, path)
