import math

import numpy as np
import numpy.testing as npt
import pytest
import torch
from torch import nn

from pyMBTTBF import MBTTBF as net
from pyMBTTBF import data_io
from pyMBTTBF import density_utils as du
from pyMBTTBF import scale_mrf as sm
from pyMBTTBF import training
from pyMBTTBF.exceptions import AlignmentError, ConfigError, DivergenceError, DomainError


def synthetic_samples(n, size=(32, 32), n_heads=6, seed=0):
    spec = data_io.SyntheticSceneSpec(size, n_heads=n_heads, size_range=(2.0, 3.0),
                                      perspective_gain=0.5, clutter_level=0.1)
    samples = []
    for i in range(n):
        image, annotations, _ = data_io.generate_synthetic_scene(spec.replace(rng_seed=seed + i))
        samples.append(data_io.Sample(image, annotations, sm.estimate_sigmas_knn(annotations),
                                      f'scene_{i:04d}'))
    return samples


def perfect_state(prediction, side_outputs=(), supervision=True):
    state = net.FusionState((16, 16), supervision)
    state.prediction = net.FeatureGrid(prediction, 4)
    state.side_outputs = list(side_outputs)
    return state


def scene_targets():
    annotations = du.AnnotationSet([[3, 4], [10, 12], [7, 2], [13, 9]], (16, 16))
    sigmas = du.SigmaAssignment([1.0, 1.5, 2.0, 3.0], du.SIGMA_CONSTANT)
    return du.render_scale_bands(annotations, sigmas)


def as_tensor(density):
    return torch.as_tensor(density.grid)[None, None]


def test_loss_is_zero_for_exact_targets():
    gt, bands = scene_targets()
    side = net.SideOutput('scfb1_34', 'i', 1, (3,), as_tensor(du.band_target(bands, (3,), 4)),
                          4)
    state = perfect_state(as_tensor(du.pool_to_stride(gt, 4)), [side])
    assert training.total_loss(state, gt, bands).item() == 0.0


def test_loss_side_weight():
    gt, bands = scene_targets()
    prediction = as_tensor(du.pool_to_stride(gt, 4)) + 0.1
    side = net.SideOutput('scfb1_34', 'i', 1, (3,), torch.zeros(1, 1, 4, 4,
                                                                 dtype=torch.float64), 4)
    main_only = training.total_loss(perfect_state(prediction, [side]), gt, bands,
                                    training.LossConfig(0.0)).item()
    npt.assert_allclose(main_only, 0.01, rtol=1e-9)
    one = training.total_loss(perfect_state(prediction, [side]), gt, bands,
                              training.LossConfig(1.0)).item()
    two = training.total_loss(perfect_state(prediction, [side]), gt, bands,
                              training.LossConfig(2.0)).item()
    npt.assert_allclose(two - main_only, 2 * (one - main_only), rtol=1e-9)
    unsupervised = training.total_loss(perfect_state(prediction, [side], False), gt, bands,
                                       training.LossConfig(2.0)).item()
    npt.assert_allclose(unsupervised, main_only, rtol=1e-12)


def test_loss_shape_mismatch():
    gt, bands = scene_targets()
    state = perfect_state(torch.zeros(1, 1, 3, 4, dtype=torch.float64))
    with pytest.raises(AlignmentError):
        training.total_loss(state, gt, bands)
    with pytest.raises(ConfigError):
        training.LossConfig(-1)


def test_metrics_example():
    report = training.metrics_from_counts([10, 20], [12, 17])
    assert report.mae == 2.5
    npt.assert_allclose(report.mse, math.sqrt(6.5))
    assert report.n_images == 2
    assert report.per_image == [(10.0, 12.0), (20.0, 17.0)]


def test_metrics_rms_dominates_mae():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        report = training.metrics_from_counts(rng.uniform(0, 100, n), rng.uniform(0, 100, n))
        assert report.mse >= report.mae - 1e-9


def test_metrics_errors():
    with pytest.raises(DomainError):
        training.metrics_from_counts([], [])
    with pytest.raises(AlignmentError):
        training.metrics_from_counts([1, 2], [1])
    with pytest.raises(DomainError):
        training.evaluate(net.MBTTBFNet(), [])


def test_evaluate_counts_every_image():
    samples = synthetic_samples(3)
    report = training.evaluate(net.MBTTBFNet(net.NetworkConfig(topology=net.NONE)), samples)
    assert report.n_images == 3
    assert [y for y, _ in report.per_image] == [len(s.annotations) for s in samples]


def test_optim_config_domain():
    assert training.OptimConfig(learning_rate=0).learning_rate == 0
    for bad in (dict(learning_rate=-1), dict(beta1=1.0), dict(epsilon=0), dict(batch_size=0),
                dict(flip_probability=1.5), dict(noise_amplitude=-0.1), dict(epochs=-1)):
        with pytest.raises(ConfigError):
            training.OptimConfig(**bad)


def test_zero_learning_rate_keeps_parameters():
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.BT))
    before = {k: v.clone() for k, v in model.state_dict().items()}
    history = training.train(model, synthetic_samples(2),
                             optim=training.OptimConfig(learning_rate=0.0, epochs=2))
    assert list(history.columns) == training.HISTORY_COLUMNS
    assert list(history['epoch']) == [1, 2]
    for key, value in model.state_dict().items():
        assert torch.equal(value, before[key]), key


def test_training_is_reproducible(tmp_path):
    samples = synthetic_samples(3)
    optim = training.OptimConfig(learning_rate=1e-3, epochs=2, rng_seed=4)
    runs = []
    for run in ('a', 'b'):
        model = net.MBTTBFNet(net.NetworkConfig(topology=net.TB, rng_seed=1))
        checkpoint = str(tmp_path / f'{run}.npz')
        history = training.train(model, samples, samples[:1], optim, checkpoint=checkpoint,
                                 history=str(tmp_path / f'{run}.jsonl'))
        runs.append((history, (tmp_path / f'{run}.npz').read_bytes()))
    assert runs[0][0].equals(runs[1][0])
    assert runs[0][1] == runs[1][1]
    assert np.all(np.isfinite(runs[0][0]['val_mae']))
    restored = training.load_history(str(tmp_path / 'a.jsonl'))
    npt.assert_allclose(restored['train_loss'], runs[0][0]['train_loss'])


def test_training_divergence():
    model = net.MBTTBFNet(net.NetworkConfig(topology=net.NONE))
    with torch.no_grad():
        model.predictor.conv.bias.fill_(float('nan'))
    with pytest.raises(DivergenceError) as info:
        training.train(model, synthetic_samples(1), optim=training.OptimConfig(epochs=1))
    assert info.value.epoch == 1
    assert info.value.step == 0


def test_gradient_check_network():
    report = training.gradient_check_network(tolerance=1e-4)
    assert report.max_relative_error < 1e-4
    assert report.passed
    assert len(report.groups) == len(list(net.MBTTBFNet().parameters()))


def test_gradient_check_linear_model():
    torch.manual_seed(0)
    model = nn.Linear(5, 3).double()
    x = torch.randn(4, 5, dtype=torch.float64)
    y = torch.randn(4, 3, dtype=torch.float64)
    report = training.gradient_check(model, lambda m: ((m(x) - y) ** 2).sum())
    assert report.max_relative_error < 1e-7
    assert report.n_skipped == 0


def test_gradient_check_frozen_group():
    torch.manual_seed(1)
    model = nn.Sequential(nn.Linear(4, 4), nn.Tanh(), nn.Linear(4, 1)).double()
    model[0].bias.requires_grad_(False)
    x = torch.randn(6, 4, dtype=torch.float64)
    report = training.gradient_check(model, lambda m: m(x).pow(2).mean())
    frozen = report.groups.set_index('name').loc['0.bias']
    assert frozen['frozen']
    assert frozen['analytic_norm'] == 0.0
    assert report.passed


def test_gradient_check_needs_float64():
    with pytest.raises(DomainError):
        training.gradient_check(nn.Linear(2, 1), lambda m: m(torch.ones(1, 2)).sum())


def test_resolve_ablation_configs():
    assert training.resolve_ablation_configs(['NONE', 'MBTTB+SCFB-NS', 'MBTTBF']) == [
        'baseline', 'MBTTB+SCFB-NS', 'MBTTB+SCFB']
    with pytest.raises(ConfigError):
        training.resolve_ablation_configs(['FPN'])


def test_ablation_single_row():
    samples = synthetic_samples(2)
    table = training.run_ablation(['NONE'], samples, samples,
                                  training.OptimConfig(learning_rate=1e-3, epochs=1))
    assert list(table.columns) == training.ABLATION_COLUMNS
    assert len(table) == 1
    assert table.loc[0, 'config'] == 'baseline'
    assert np.isfinite(table.loc[0, 'mae'])
    text = training.format_ablation_table(table)
    assert 'baseline' in text
    assert 'MAE' in text


def test_ablation_row_failure_is_recorded():
    samples = synthetic_samples(1)
    table = training.run_ablation(['baseline'], samples, samples,
                                  training.OptimConfig(epochs=1),
                                  backbone_weights='missing_weights.npz')
    assert len(table) == 1
    assert np.isnan(table.loc[0, 'mae'])


@pytest.mark.slow
def test_overfit_small_set():
    samples = synthetic_samples(10, size=(64, 64), n_heads=15)
    model = net.MBTTBFNet(net.NetworkConfig(rng_seed=0))
    training.train(model, samples, optim=training.OptimConfig(learning_rate=1e-3, epochs=200,
                                                              noise_amplitude=0,
                                                              flip_probability=0))
    assert training.evaluate(model, samples).mae < 1.0


@pytest.mark.slow
def test_ablation_trend():
    spec = data_io.SyntheticSceneSpec((64, 64), n_heads=30)
    samples = []
    for i in range(250):
        image, annotations, _ = data_io.generate_synthetic_scene(spec.replace(rng_seed=i))
        samples.append(data_io.Sample(image, annotations,
                                      sm.estimate_sigmas_knn(annotations), str(i)))
    table = training.run_ablation(['baseline', 'fuse-c', 'MBTTB+SCFB'], samples[:200],
                                  samples[200:], training.OptimConfig(learning_rate=1e-3,
                                                                     epochs=30),
                                  seeds=(0, 1, 2))
    medians = table.groupby('config')['mae'].median()
    assert medians['MBTTB+SCFB'] <= medians['fuse-c']
    assert medians['fuse-c'] <= 1.1 * medians['baseline']
