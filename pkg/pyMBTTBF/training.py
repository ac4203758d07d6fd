# This file is part of pyMBTTBF, the multi-level bottom-top and top-bottom fusion network
# Copyright 2024 the pyMBTTBF contributors listed in the README.md file.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

'''
DESCRIPTION
===========
Loss, optimisation loop, count metrics, gradient checking and the ablation runner.

The loss is the mean squared error between the predicted density map and the ground truth
sum-pooled to the prediction stride, plus ``lambda_side`` times the mean squared errors of the
side outputs against their scale-band targets. A level-1 side branch fed by backbone tap
``conv_k`` is supervised by band ``k``; level-2 branches by the sum of their bands.

Counts are evaluated with

.. math::

    MAE = \\frac{1}{N}\\sum_i |y_i - y'_i| \\qquad
    MSE = \\sqrt{\\frac{1}{N}\\sum_i (y_i - y'_i)^2}

PACKAGE CONTENTS
================
* :class:`LossConfig` Side supervision weight.
* :class:`OptimConfig` Adam and augmentation settings.
* :class:`MetricsReport` MAE, MSE and per-image counts.
* :func:`total_loss` Final and side supervision.
* :func:`evaluate` Count metrics of a model on a dataset.
* :func:`metrics_from_counts` Count metrics of true and predicted counts.
* :func:`train` Adam training with flip and noise augmentation.
* :func:`gradient_check` Analytic against central finite-difference gradients.
* :func:`gradient_check_network` Gradient check of a tiny float64 network.
* :func:`run_ablation` Trains and evaluates the ablation ladder.
* :func:`format_ablation_table` Median MAE and MSE per configuration.
'''

from collections import OrderedDict
import logging
import math

import numpy as np
import pandas as pd
import torch
from torch import nn
from torch.nn import functional as F
from tqdm import tqdm

from . import MBTTBF as net
from . import density_utils as du
from .exceptions import (AlignmentError, ConfigError, DivergenceError, DomainError,
                         MBTTBFError)

logger = logging.getLogger(__name__)

# ==============================================================================
# List of constants used in training
# ==============================================================================
LAMBDA_SIDE = 1.0
LEARNING_RATE = 5e-5
BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8
EPOCHS = 30
BATCH_SIZE = 1
# Standard deviation of the additive pixel noise, in units of the [0, 1] intensity range
NOISE_AMPLITUDE = 0.01
FLIP_PROBABILITY = 0.5

# Central finite differences
FD_STEP = 1e-5
FD_ENTRIES = 6
FD_RETRIES = 3
FD_TOLERANCE = 1e-4
# Spread of the random biases that keep rectifier inputs off zero during the check
FD_BIAS_STD = 0.1

HISTORY_COLUMNS = ['epoch', 'train_loss', 'val_mae', 'val_mse']
ABLATION_COLUMNS = ['config', 'seed', 'mae', 'mse', 'error']

# Ablation ladder: name -> (topology, use_scfb, use_scale_supervision)
ABLATION_LADDER = OrderedDict([
    ('baseline', (net.NONE, True, True)),
    ('fuse-a', (net.FLAT_ADD, True, True)),
    ('fuse-c', (net.FLAT_CONCAT, True, True)),
    ('BT+fuse-c', (net.BT, False, True)),
    ('TB+fuse-c', (net.TB, False, True)),
    ('BTTB+fuse-c', (net.BTTB, False, True)),
    ('MBTTB+fuse-c', (net.MBTTBF, False, True)),
    ('MBTTB+SCFB-NS', (net.MBTTBF, True, False)),
    ('MBTTB+SCFB', (net.MBTTBF, True, True)),
])
# Bare topology names select their ladder row
TOPOLOGY_ALIASES = OrderedDict([
    (net.NONE, 'baseline'),
    (net.FLAT_ADD, 'fuse-a'),
    (net.FLAT_CONCAT, 'fuse-c'),
    (net.BT, 'BT+fuse-c'),
    (net.TB, 'TB+fuse-c'),
    (net.BTTB, 'BTTB+fuse-c'),
    (net.MBTTBF, 'MBTTB+SCFB'),
])


class LossConfig(object):

    def __init__(self, lambda_side=LAMBDA_SIDE):
        lambda_side = float(lambda_side)
        if not lambda_side >= 0:
            raise ConfigError(f'lambda_side must be non-negative, got {lambda_side}')
        self.lambda_side = lambda_side

    def to_dict(self):
        return OrderedDict([('lambda_side', self.lambda_side)])

    def __repr__(self):
        return f'LossConfig(lambda_side={self.lambda_side!r})'


class OptimConfig(object):
    ''' Adam hyperparameters, training budget and augmentation.

    Parameters
    ----------
    learning_rate : float
        Adam step size. Zero is accepted and leaves the parameters untouched.
    beta1, beta2, epsilon : float
        Adam moment decays and denominator offset.
    epochs : int
        Passes over the training set.
    batch_size : int
        Images whose gradients are accumulated per Adam step.
    rng_seed : int
        Seed of the sample order, flips and pixel noise.
    noise_amplitude : float
        Standard deviation of the additive Gaussian pixel noise.
    flip_probability : float
        Probability of a horizontal flip per sample.
    '''

    def __init__(self, learning_rate=LEARNING_RATE, beta1=BETA1, beta2=BETA2, epsilon=EPSILON,
                 epochs=EPOCHS, batch_size=BATCH_SIZE, rng_seed=0,
                 noise_amplitude=NOISE_AMPLITUDE, flip_probability=FLIP_PROBABILITY):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.rng_seed = int(rng_seed)
        self.noise_amplitude = float(noise_amplitude)
        self.flip_probability = float(flip_probability)
        if not self.learning_rate >= 0:
            raise ConfigError(f'learning_rate must be non-negative, got {learning_rate}')
        for name in ('beta1', 'beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f'{name} must lie in [0, 1), got {getattr(self, name)}')
        if not self.epsilon > 0:
            raise ConfigError(f'epsilon must be positive, got {epsilon}')
        if self.epochs < 0:
            raise ConfigError(f'epochs must be non-negative, got {epochs}')
        if self.batch_size < 1:
            raise ConfigError(f'batch_size must be positive, got {batch_size}')
        if not self.noise_amplitude >= 0:
            raise ConfigError(f'noise_amplitude must be non-negative, got {noise_amplitude}')
        if not 0 <= self.flip_probability <= 1:
            raise ConfigError(f'flip_probability must lie in [0, 1], got {flip_probability}')

    def to_dict(self):
        return OrderedDict([('learning_rate', self.learning_rate), ('beta1', self.beta1),
                            ('beta2', self.beta2), ('epsilon', self.epsilon),
                            ('epochs', self.epochs), ('batch_size', self.batch_size),
                            ('rng_seed', self.rng_seed),
                            ('noise_amplitude', self.noise_amplitude),
                            ('flip_probability', self.flip_probability)])

    def replace(self, **kwargs):
        params = self.to_dict()
        params.update(kwargs)
        return OptimConfig(**params)

    def __repr__(self):
        return 'OptimConfig(' + ', '.join(f'{k}={v!r}' for k, v in self.to_dict().items()) + ')'


class MetricsReport(object):
    ''' Count errors of a model on a dataset.

    ``per_image`` holds (true count, predicted count) pairs in dataset order.
    '''

    def __init__(self, mae, mse, n_images, per_image):
        self.mae = float(mae)
        self.mse = float(mse)
        self.n_images = int(n_images)
        self.per_image = [(float(y), float(p)) for y, p in per_image]

    def to_dict(self):
        return OrderedDict([('mae', self.mae), ('mse', self.mse), ('n_images', self.n_images),
                            ('per_image', [list(pair) for pair in self.per_image])])

    def __repr__(self):
        return f'MetricsReport(mae={self.mae:.4f}, mse={self.mse:.4f}, n_images={self.n_images})'


def _target_tensor(density, stride, like):
    pooled = du.pool_to_stride(density, stride)
    if pooled.grid.shape != tuple(like.shape[-2:]):
        raise AlignmentError(f'target of shape {pooled.grid.shape} at stride {stride} does not '
                             f'match an output of shape {tuple(like.shape[-2:])}')
    return torch.as_tensor(pooled.grid, dtype=like.dtype).expand_as(like)


def total_loss(state, gt_full, bands, cfg=None):
    ''' Supervision loss of one forward pass.

    Parameters
    ----------
    state : FusionState
        Output of :class:`MBTTBFNet`.
    gt_full : DensityMap
        Ground truth density map, at a stride dividing the prediction stride.
    bands : ScaleBandPartition
        Scale-band maps of the same image. Ignored without scale supervision.
    cfg : LossConfig, optional
        Side term weight.

    Returns
    -------
    loss : tensor
        Scalar.

    Raises
    ------
    AlignmentError
        When a target cannot be pooled to the stride and shape of its output.
    '''

    if cfg is None:
        cfg = LossConfig()
    prediction = state.prediction
    loss = F.mse_loss(prediction.values,
                      _target_tensor(gt_full, prediction.stride, prediction.values))
    if not state.scale_supervision or not state.side_outputs:
        return loss
    side = 0
    for output in state.side_outputs:
        target = du.band_target(bands, output.bands, output.stride)
        side = side + F.mse_loss(output.values,
                                 _target_tensor(target, output.stride, output.values))
    return loss + cfg.lambda_side * side


def metrics_from_counts(true_counts, predicted_counts):
    ''' MAE and root mean squared count error of paired counts.'''

    y = np.asarray(true_counts, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(predicted_counts, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise DomainError('cannot evaluate an empty dataset')
    if len(y) != len(y_hat):
        raise AlignmentError(f'{len(y)} true counts but {len(y_hat)} predictions')
    error = y - y_hat
    mae = np.mean(np.abs(error))
    mse = np.sqrt(np.mean(error ** 2))
    return MetricsReport(mae, mse, len(y), zip(y, y_hat))


def _dtype(model):
    return next(model.parameters()).dtype


def evaluate(model, dataset):
    ''' Counts people in every sample and compares with the annotation counts.

    Parameters
    ----------
    model : MBTTBFNet
    dataset : sequence of Sample
        Images and their annotations.

    Returns
    -------
    report : MetricsReport
    '''

    if len(dataset) == 0:
        raise DomainError('cannot evaluate an empty dataset')
    dtype = _dtype(model)
    was_training = model.training
    model.eval()
    true_counts, predicted = [], []
    with torch.no_grad():
        for sample in tqdm(dataset, desc='Evaluating', leave=False, disable=None):
            state = model(net.image_to_tensor(sample.image, dtype))
            predicted.append(state.predicted_count())
            true_counts.append(len(sample.annotations))
    model.train(was_training)
    return metrics_from_counts(true_counts, predicted)


def _targets(sample):
    gt, bands = du.render_scale_bands(sample.annotations, sample.sigmas)
    return gt, bands


def _flipped_targets(gt, bands):
    flip = du.DensityMap(gt.grid[:, ::-1].copy(), gt.stride)
    maps = [du.DensityMap(m.grid[:, ::-1].copy(), m.stride) for m in bands.band_maps]
    return flip, du.ScaleBandPartition(bands.band_indices, maps, bands.thresholds)


def _augment(image, gt, bands, rng, optim):
    ''' Horizontal flip and additive pixel noise of one sample, drawn from ``rng``.'''
    image = np.asarray(image, dtype=np.float64)
    if rng.random() < optim.flip_probability:
        image = image[:, ::-1]
        gt, bands = _flipped_targets(gt, bands)
    if optim.noise_amplitude > 0:
        image = image + rng.normal(0.0, optim.noise_amplitude, size=image.shape)
    return image, gt, bands


def train(model, train_set, val_set=None, optim=None, loss=None, checkpoint=None,
          history=None):
    ''' Trains a network with Adam.

    Each epoch visits the training samples in a seeded random order. Every sample is flipped
    horizontally with probability ``flip_probability`` (image and targets together) and
    receives additive Gaussian pixel noise. Gradients of ``batch_size`` samples are
    accumulated before each Adam step.

    Parameters
    ----------
    model : MBTTBFNet
        Trained in place.
    train_set : sequence of Sample
        Samples with annotations and scales.
    val_set : sequence of Sample, optional
        Evaluated after every epoch.
    optim : OptimConfig, optional
    loss : LossConfig, optional
    checkpoint : str, optional
        Path of the checkpoint written at the end.
    history : str, optional
        Path of the JSON lines history written at the end.

    Returns
    -------
    history : pandas.DataFrame
        One row per epoch with columns ``epoch``, ``train_loss``, ``val_mae``, ``val_mse``.

    Raises
    ------
    DivergenceError
        As soon as a sample loss is not finite.
    '''

    if optim is None:
        optim = OptimConfig()
    if loss is None:
        loss = LossConfig()
    if len(train_set) == 0:
        raise DomainError('cannot train on an empty dataset')
    dtype = _dtype(model)
    rng = np.random.default_rng(optim.rng_seed)
    targets = [_targets(sample) for sample in train_set]
    adam = torch.optim.Adam(model.parameters(), lr=optim.learning_rate,
                            betas=(optim.beta1, optim.beta2), eps=optim.epsilon)
    records = []
    step = 0
    for epoch in tqdm(range(1, optim.epochs + 1), desc='Training', disable=None):
        model.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), optim.batch_size):
            batch = order[start:start + optim.batch_size]
            adam.zero_grad()
            for index in batch:
                sample = train_set[index]
                image, gt, bands = _augment(sample.image, *targets[index], rng, optim)
                state = model(net.image_to_tensor(image, dtype))
                value = total_loss(state, gt, bands, loss)
                if not math.isfinite(value.item()):
                    raise DivergenceError(epoch, step, value.item())
                (value / len(batch)).backward()
                total += value.item()
                step += 1
            adam.step()
        record = OrderedDict([('epoch', epoch), ('train_loss', total / len(order)),
                              ('val_mae', np.nan), ('val_mse', np.nan)])
        if val_set:
            report = evaluate(model, val_set)
            record['val_mae'], record['val_mse'] = report.mae, report.mse
        logger.info('Epoch %d/%d: train loss %.6g, val MAE %.4g, val MSE %.4g', epoch,
                    optim.epochs, record['train_loss'], record['val_mae'], record['val_mse'])
        records.append(record)
    frame = pd.DataFrame(records, columns=HISTORY_COLUMNS)
    if checkpoint is not None:
        net.save_checkpoint(model, checkpoint)
    if history is not None:
        save_history(frame, history)
    return frame


def save_history(frame, path):
    frame.to_json(path, orient='records', lines=True)


def load_history(path):
    return pd.read_json(path, orient='records', lines=True)


class _KinkRecorder(object):
    ''' Records which side of every rectifier and which max-pool winner a forward pass took.'''

    def __init__(self, model):
        self.pattern = []
        self._handles = []
        for module in model.modules():
            if isinstance(module, nn.ReLU):
                self._handles.append(module.register_forward_hook(self._relu))
            elif isinstance(module, nn.MaxPool2d):
                self._handles.append(module.register_forward_hook(self._pool))

    def _relu(self, module, inputs, output):
        self.pattern.append(inputs[0].detach() > 0)

    def _pool(self, module, inputs, output):
        _, indices = F.max_pool2d(inputs[0].detach(), module.kernel_size, module.stride,
                                  module.padding, module.dilation, ceil_mode=module.ceil_mode,
                                  return_indices=True)
        self.pattern.append(indices)

    def evaluate(self, loss_fn, model):
        self.pattern = []
        with torch.no_grad():
            value = float(loss_fn(model))
        return value, self.pattern

    def close(self):
        for handle in self._handles:
            handle.remove()


def _same_pattern(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


class GradientCheckReport(object):
    ''' Per parameter group relative errors of a gradient check.

    ``groups`` has one row per parameter tensor with the columns ``name``, ``n_checked``,
    ``n_skipped`` (entries whose finite difference crossed a kink at every step size),
    ``frozen``, ``analytic_norm``, ``numeric_norm`` and ``relative_error``.
    '''

    def __init__(self, groups, tolerance=FD_TOLERANCE):
        self.groups = groups
        self.tolerance = float(tolerance)

    @property
    def max_relative_error(self):
        if len(self.groups) == 0:
            return 0.0
        return float(self.groups['relative_error'].max())

    @property
    def n_skipped(self):
        return int(self.groups['n_skipped'].sum()) if len(self.groups) else 0

    @property
    def passed(self):
        return self.max_relative_error < self.tolerance

    def __repr__(self):
        return (f'GradientCheckReport(max_relative_error={self.max_relative_error:.3e}, '
                f'groups={len(self.groups)}, skipped={self.n_skipped})')


def gradient_check(model, loss_fn, step=FD_STEP, max_entries=FD_ENTRIES, rng_seed=0,
                   tolerance=FD_TOLERANCE):
    ''' Compares autograd gradients with central finite differences.

    Up to ``max_entries`` entries of every parameter tensor are perturbed by +-``step``.
    When the perturbation flips a rectifier or a max-pool winner the step is divided by ten,
    up to ``FD_RETRIES`` times, after which the entry is skipped. Parameters that do not
    require gradients are reported with zero gradients.

    Parameters
    ----------
    model : torch.nn.Module
        Float64 model.
    loss_fn : callable
        ``loss_fn(model)`` returns a scalar tensor.

    Returns
    -------
    report : GradientCheckReport
    '''

    if _dtype(model) != torch.float64:
        raise DomainError('gradient checks need a float64 model')
    rng = np.random.default_rng(rng_seed)
    model.zero_grad()
    loss_fn(model).backward()
    recorder = _KinkRecorder(model)
    rows = []
    try:
        for name, param in model.named_parameters():
            size = param.numel()
            if not param.requires_grad:
                rows.append((name, 0, 0, True, 0.0, 0.0, 0.0))
                continue
            grad = (param.grad if param.grad is not None
                    else torch.zeros_like(param)).detach().reshape(-1)
            entries = np.sort(rng.choice(size, size=min(max_entries, size), replace=False))
            flat = param.data.view(-1)
            analytic, numeric, skipped = [], [], 0
            for entry in entries:
                entry = int(entry)
                original = flat[entry].item()
                h = step
                for _ in range(FD_RETRIES):
                    flat[entry] = original + h
                    plus, pattern_plus = recorder.evaluate(loss_fn, model)
                    flat[entry] = original - h
                    minus, pattern_minus = recorder.evaluate(loss_fn, model)
                    flat[entry] = original
                    if _same_pattern(pattern_plus, pattern_minus):
                        analytic.append(grad[entry].item())
                        numeric.append((plus - minus) / (2 * h))
                        break
                    h /= 10
                else:
                    skipped += 1
                    logger.debug('Skipped %s[%d]: kink within the smallest step', name, entry)
            a, n = np.asarray(analytic), np.asarray(numeric)
            a_norm, n_norm = float(np.linalg.norm(a)), float(np.linalg.norm(n))
            error = float(np.linalg.norm(a - n)) / max(a_norm, n_norm, 1e-12) if len(a) else 0.0
            rows.append((name, len(a), skipped, False, a_norm, n_norm, error))
    finally:
        recorder.close()
    groups = pd.DataFrame(rows, columns=['name', 'n_checked', 'n_skipped', 'frozen',
                                         'analytic_norm', 'numeric_norm', 'relative_error'])
    report = GradientCheckReport(groups, tolerance)
    logger.info('Gradient check: max relative error %.3e over %d groups, %d entries skipped',
                report.max_relative_error, len(groups), report.n_skipped)
    return report


def _randomize_biases(model, seed, std=FD_BIAS_STD):
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d) and module.bias is not None:
                module.bias.copy_(torch.randn(module.bias.shape, generator=generator,
                                              dtype=torch.float64) * std)


def gradient_check_network(config=None, tolerance=FD_TOLERANCE, image_size=(8, 8), rng_seed=0,
                           loss=None):
    ''' Gradient check of :func:`total_loss` on a float64 network and a random scene.

    Parameters
    ----------
    config : NetworkConfig, optional
        Tiny MBTTBF by default.
    tolerance : float
        Largest admissible relative error per parameter group.
    image_size : tuple
        (height, width) of the random input image.

    Returns
    -------
    report : GradientCheckReport
    '''

    if config is None:
        config = net.NetworkConfig(backbone=net.TINY, topology=net.MBTTBF, rng_seed=rng_seed)
    model = net.MBTTBFNet(config).double()
    _randomize_biases(model, rng_seed + 1)
    rng = np.random.default_rng(rng_seed)
    height, width = image_size
    image = torch.from_numpy(rng.random((1, 3, height, width)))
    points = np.column_stack([rng.uniform(0, width - 1, 4), rng.uniform(0, height - 1, 4)])
    annotations = du.AnnotationSet(points, image_size)
    lo, hi = du.sigma_bounds(image_size)
    sigmas = du.SigmaAssignment(np.linspace(lo, hi, len(points)), du.SIGMA_CONSTANT)
    gt, bands = du.render_scale_bands(annotations, sigmas)
    cfg = loss if loss is not None else LossConfig()

    def loss_fn(m):
        return total_loss(m(image), gt, bands, cfg)

    return gradient_check(model, loss_fn, rng_seed=rng_seed, tolerance=tolerance)


def resolve_ablation_configs(names):
    ''' Ladder rows of configuration or bare topology names, in the given order.'''
    resolved = []
    for name in names:
        key = TOPOLOGY_ALIASES.get(name, name)
        if key not in ABLATION_LADDER:
            raise ConfigError(f'unknown ablation configuration {name!r}, expected one of '
                              f'{list(ABLATION_LADDER) + list(TOPOLOGY_ALIASES)}')
        resolved.append(key)
    return resolved


def run_ablation(configs, train_set, test_set, optim=None, loss=None, seeds=(0,), network=None,
                 val_set=None, backbone_weights=None):
    ''' Trains every ablation configuration under every seed and evaluates it.

    Parameters
    ----------
    configs : list of str
        Ladder names (``baseline`` ... ``MBTTB+SCFB``) or bare topology names.
    train_set, test_set : sequence of Sample
    optim : OptimConfig, optional
        Shared budget; its seed is replaced by the row seed.
    loss : LossConfig, optional
    seeds : sequence of int
        Seeds of both the initialisation and the training order.
    network : NetworkConfig, optional
        Backbone and widths shared by all rows.
    backbone_weights : str, optional
        External backbone weights loaded into every row.

    Returns
    -------
    table : pandas.DataFrame
        Columns ``config``, ``seed``, ``mae``, ``mse`` and ``error``, the message of a row
        whose training failed (its metrics are NaN).
    '''

    if optim is None:
        optim = OptimConfig()
    if network is None:
        network = net.NetworkConfig()
    rows = []
    jobs = [(name, seed) for name in resolve_ablation_configs(configs) for seed in seeds]
    for name, seed in tqdm(jobs, desc='Ablation', disable=None):
        topology, use_scfb, supervision = ABLATION_LADDER[name]
        logger.info('Processing %s, seed %d...', name, seed)
        try:
            model = net.MBTTBFNet(network.replace(topology=topology, use_scfb=use_scfb,
                                                  use_scale_supervision=supervision,
                                                  rng_seed=seed))
            if backbone_weights:
                net.load_backbone_weights(model, backbone_weights)
            train(model, train_set, val_set, optim.replace(rng_seed=seed), loss)
            report = evaluate(model, test_set)
            rows.append((name, seed, report.mae, report.mse, ''))
        except (MBTTBFError, FloatingPointError) as e:
            logger.error('%s, seed %d failed: %s', name, seed, e)
            rows.append((name, seed, np.nan, np.nan, str(e)))
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def format_ablation_table(frame):
    ''' Median MAE and MSE per configuration, in ladder order, as a text table.'''
    summary = frame.groupby('config', sort=False)[['mae', 'mse']].median()
    summary.index.name = 'Configuration'
    summary.columns = ['MAE', 'MSE']
    return summary.to_string(float_format=lambda v: f'{v:.2f}')
