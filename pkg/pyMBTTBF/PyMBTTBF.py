# This file is part of pyMBTTBF, consisting of high level pyMBTTBF scripting
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

"""
DESCRIPTION
===========
This package contains the class object for configuring and running the crowd counting
pipeline: head scale estimation, ground truth generation, training, evaluation, the ablation
study and the renderings.

EXAMPLES
========
Parsing a configuration file
----------------------------

>>> from pyMBTTBF.MBTTBFConfigFileInterface import MBTTBFConfigFileInterface
>>> setup = MBTTBFConfigFileInterface()
>>> params = setup.load('Config_Train.txt')  # Read the configuration file, defaults resolved
>>> setup.run('train')  # Train and write the checkpoint and the history

Running stages directly
-----------------------

>>> from pyMBTTBF.PyMBTTBF import PyMBTTBF
>>> model = PyMBTTBF(params)
>>> model.estimate_scales('train_manifest.json')
>>> model.train()
>>> report = model.evaluate('output/checkpoint.npz', 'test_manifest.json')

All outputs go below ``out_dir``; the effective configuration is written there as
``effective_config.json`` by every stage.
"""

from os.path import join, splitext, basename, isfile
import json
import logging
import os

import numpy as np
import torch

from . import MBTTBF as net
from . import data_io
from . import density_utils as du
from . import scale_mrf
from . import training
from .MBTTBFConfigFileInterface import save_config
from .exceptions import ConfigError, MBTTBFError

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = 'effective_config.json'
CHECKPOINT = 'checkpoint.npz'
HISTORY = 'history.jsonl'
METRICS = 'metrics.json'
ABLATION_CSV = 'ablation.csv'
ABLATION_TABLE = 'ablation_table.txt'
# Grey level of the panel separators in the renderings
SEPARATOR = 1.0


class PyMBTTBF(object):
    ''' Pipeline driver.

    Parameters
    ----------
    parameters : dict
        Resolved configuration, see :class:`MBTTBFConfigFileInterface`.
    '''

    def __init__(self, parameters):

        self.p = dict(parameters)
        # Failed entries of the last per-entry stage: (name, message)
        self.failures = []

    # ==========================================================================
    # Configuration objects
    # ==========================================================================
    def network_config(self):
        return net.NetworkConfig(backbone=self.p['backbone'], topology=self.p['topology'],
                                 dr_channels=self.p['dr_channels'], use_scfb=self.p['use_scfb'],
                                 use_scale_supervision=self.p['use_scale_supervision'],
                                 rng_seed=self.p['rng_seed'])

    def optim_config(self):
        return training.OptimConfig(learning_rate=self.p['learning_rate'], beta1=self.p['beta1'],
                                    beta2=self.p['beta2'], epsilon=self.p['epsilon'],
                                    epochs=self.p['epochs'], batch_size=self.p['batch_size'],
                                    rng_seed=self.p['optim_seed'],
                                    noise_amplitude=self.p['noise_amplitude'],
                                    flip_probability=self.p['flip_probability'])

    def loss_config(self):
        return training.LossConfig(self.p['lambda_side'])

    def mrf_config(self):
        ''' MRF parameters; unset colour keys take the preset values under ``mrf_color_aware``.'''
        params = dict(gamma=self.p['mrf_gamma'], color_tau=self.p['mrf_color_tau'],
                      max_sweeps=self.p['mrf_max_sweeps'])
        for key in ('color_weight', 'background_cost'):
            if self.p['mrf_' + key] is not None:
                params[key] = self.p['mrf_' + key]
        if self.p['mrf_color_aware']:
            return scale_mrf.MrfConfig.color_aware(**params)
        return scale_mrf.MrfConfig(**params)

    def out_path(self, *parts):
        ''' Path below ``out_dir``, creating its folder.'''
        path = join(self.p['out_dir'], *parts)
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        return path

    def write_effective_config(self):
        path = self.out_path(EFFECTIVE_CONFIG)
        save_config(self.p, path)
        return path

    def _manifest(self, manifest, key, check=True):
        path = manifest if manifest else self.p[key]
        if not path:
            raise ConfigError(f'no manifest given and {key} is not set')
        return data_io.load_manifest(path, check)

    def _stage_failed(self, name, error):
        logger.error('%s: %s', name, error)
        self.failures.append((name, str(error)))

    # ==========================================================================
    # Scale estimation and ground truth
    # ==========================================================================
    def estimate(self, annotations, image=None, method=None):
        ''' Head scales of one image with the configured estimator.'''
        return scale_mrf.estimate_sigmas(
            annotations, method or self.p['sigma_method'], image=image, sigma0=self.p['sigma0'],
            k=self.p['knn_k'], beta=self.p['knn_beta'], kappa=self.p['mrf_kappa'],
            n_segments=self.p['mrf_n_segments'], compactness=self.p['mrf_compactness'],
            n_iter=self.p['mrf_iterations'], mrf=self.mrf_config())

    def estimate_scales(self, manifest=None, method=None):
        ''' Writes ``<stem>.sigmas.json`` for every manifest entry.

        Files go to ``sigma_dir`` or, when unset, next to the annotation files.

        Returns
        -------
        summary : dict
            ``min``, ``median`` and ``max`` sigma over all heads, and ``n_failed``.
        '''

        self.failures = []
        self.write_effective_config()
        method = method or self.p['sigma_method']
        if self.p['sigma_dir']:
            os.makedirs(self.p['sigma_dir'], exist_ok=True)
        print('Processing...')
        all_sigmas = []
        for entry in self._manifest(manifest, 'train_manifest', check=False):
            name = basename(entry.annotations)
            try:
                annotations = data_io.load_annotations(entry.annotations)
                image = None
                if method == du.SIGMA_MRF:
                    if not isfile(entry.image):
                        raise FileNotFoundError(f'image {entry.image} needed by the mrf method')
                    image = data_io.load_image(entry.image)
                assignment = self.estimate(annotations, image, method)
            except (MBTTBFError, OSError) as e:
                self._stage_failed(name, e)
                continue
            data_io.save_sigmas(data_io.sigma_path(entry.annotations, self.p['sigma_dir']),
                                assignment)
            all_sigmas.append(assignment.sigmas)
        sigmas = np.concatenate(all_sigmas) if all_sigmas else np.zeros(0)
        summary = {'min': np.nan, 'median': np.nan, 'max': np.nan,
                   'n_failed': len(self.failures)}
        if len(sigmas):
            summary.update(min=float(sigmas.min()), median=float(np.median(sigmas)),
                           max=float(sigmas.max()))
        print(f'sigma min {summary["min"]:.4g}, median {summary["median"]:.4g}, '
              f'max {summary["max"]:.4g} over {len(sigmas)} heads')
        print('Finished processing!')
        return summary

    def generate_ground_truth(self, manifest=None, stride=None, bands=False):
        ''' Writes the density map (and the four band maps) of every manifest entry.

        Returns
        -------
        residuals : dict
            Annotation name -> |sum of the map - head count|.
        '''

        self.failures = []
        self.write_effective_config()
        stride = stride or self.p['gt_stride']
        residuals = {}
        print('Processing...')
        for entry in self._manifest(manifest, 'train_manifest', check=False):
            name = basename(entry.annotations)
            stem = splitext(name)[0]
            try:
                annotations = data_io.load_annotations(entry.annotations)
                path = data_io.sigma_path(entry.annotations, self.p['sigma_dir'])
                if not isfile(path):
                    raise FileNotFoundError(f'missing scale file {path}')
                full, partition = du.render_scale_bands(annotations, data_io.load_sigmas(path),
                                                        out_stride=stride)
            except (MBTTBFError, OSError) as e:
                self._stage_failed(name, e)
                continue
            data_io.save_density(self.out_path('density', stem + '.raw'), full)
            if bands:
                for band_id, band_map in zip(du.BAND_IDS, partition.band_maps):
                    data_io.save_density(self.out_path('density', f'{stem}_band{band_id}.raw'),
                                         band_map)
            residuals[name] = abs(du.count(full) - len(annotations))
            print(f'{name}: {len(annotations)} heads, residual {residuals[name]:.3e}')
        print('Saved Files')
        return residuals

    def load_samples(self, manifest=None, key='train_manifest', scales=True):
        ''' Samples of a manifest, estimating the scales that have no file.

        With ``scales`` False the samples are only counted (evaluation) and missing scales
        stay None.
        '''
        samples = data_io.load_samples(self._manifest(manifest, key), self.p['sigma_dir'])
        if not scales:
            return samples
        for i, sample in enumerate(samples):
            if sample.sigmas is None:
                logger.info('Estimating missing scales for %s', sample.name)
                samples[i] = sample._replace(sigmas=self.estimate(sample.annotations,
                                                                  sample.image))
        return samples

    # ==========================================================================
    # Training and evaluation
    # ==========================================================================
    def build_model(self):
        model = net.MBTTBFNet(self.network_config())
        if self.p['backbone_weights']:
            net.load_backbone_weights(model, self.p['backbone_weights'])
        return model

    def train(self):
        ''' Trains on ``train_manifest`` and writes the checkpoint and the history.

        Returns
        -------
        model : MBTTBFNet
        history : pandas.DataFrame
        '''

        self.write_effective_config()
        train_set = self.load_samples(key='train_manifest')
        val_set = (self.load_samples(key='val_manifest', scales=False)
                   if self.p['val_manifest'] else None)
        model = self.build_model()
        checkpoint = self.p['checkpoint'] or self.out_path(CHECKPOINT)
        print('Processing...')
        history = training.train(model, train_set, val_set, self.optim_config(),
                                 self.loss_config(), checkpoint=checkpoint,
                                 history=self.out_path(HISTORY))
        print('Finished processing!')
        print(f'Saved Files {checkpoint} and {self.out_path(HISTORY)}')
        return model, history

    def _checkpoint(self, checkpoint):
        path = checkpoint or self.p['checkpoint'] or join(self.p['out_dir'], CHECKPOINT)
        return net.load_checkpoint(path)

    def evaluate(self, checkpoint=None, manifest=None):
        ''' MAE and MSE of a checkpoint, written to ``metrics.json``.'''

        self.write_effective_config()
        model = self._checkpoint(checkpoint)
        samples = self.load_samples(manifest, key='test_manifest', scales=False)
        report = training.evaluate(model, samples)
        with open(self.out_path(METRICS), 'w') as fid:
            json.dump(report.to_dict(), fid, indent=1)
        print(f'MAE {report.mae:.4f}, MSE {report.mse:.4f} over {report.n_images} images')
        return report

    def ablate(self, configs=None, seeds=None):
        ''' Runs the ablation ladder and writes the CSV and the median table.'''

        self.write_effective_config()
        configs = configs or self.p['ablation_configs']
        seeds = seeds if seeds is not None else self.p['ablation_seeds']
        train_set = self.load_samples(key='train_manifest')
        test_key = 'test_manifest' if self.p['test_manifest'] else 'val_manifest'
        test_set = self.load_samples(key=test_key, scales=False)
        print('Processing...')
        frame = training.run_ablation(configs, train_set, test_set, self.optim_config(),
                                      self.loss_config(), seeds, self.network_config(),
                                      backbone_weights=self.p['backbone_weights'])
        frame.to_csv(self.out_path(ABLATION_CSV), index=False)
        table = training.format_ablation_table(frame)
        with open(self.out_path(ABLATION_TABLE), 'w') as fid:
            fid.write(table + '\n')
        print(table)
        print('Finished processing!')
        self.failures = [(f'{r.config} seed {r.seed}', r.error)
                         for r in frame.itertuples() if r.error]
        return frame

    # ==========================================================================
    # Renderings
    # ==========================================================================
    def render(self, image_path, checkpoint=None, annotation_path=None):
        ''' Writes the input, ground truth and prediction panels side by side.

        The file name carries the predicted and true counts,
        ``render/<stem>_pred<P>_true<T>.png``; T is ``NA`` without annotations.
        '''

        self.write_effective_config()
        model = self._checkpoint(checkpoint)
        image = data_io.load_image(image_path)
        height, width = image.shape[:2]
        dtype = next(model.parameters()).dtype
        model.eval()
        with torch.no_grad():
            state = model(net.image_to_tensor(image, dtype))
        prediction = state.prediction.values[0, 0].numpy().astype(np.float64)
        stride = state.prediction.stride
        predicted = float(prediction.sum())
        pred_panel = np.repeat(np.repeat(prediction, stride, 0), stride, 1)[:height, :width]
        truth, true_label = np.zeros((height, width)), 'NA'
        if annotation_path:
            annotations = data_io.load_annotations(annotation_path)
            path = data_io.sigma_path(annotation_path, self.p['sigma_dir'])
            sigmas = (data_io.load_sigmas(path) if isfile(path)
                      else self.estimate(annotations, image))
            truth = du.render_density(annotations, sigmas).grid
            true_label = f'{len(annotations)}'
        panels = [image, _gray(truth), _gray(pred_panel)]
        separator = np.full((height, 2, 3), SEPARATOR)
        canvas = np.concatenate([panels[0], separator, panels[1], separator, panels[2]], axis=1)
        stem = splitext(basename(image_path))[0]
        out = self.out_path('render', f'{stem}_pred{predicted:.1f}_true{true_label}.png')
        data_io.save_image(out, canvas)
        print(f'Saved Files {out}')
        return out

    def render_scales(self, image_path, annotation_path, method=None):
        ''' Writes the scale circles of one image, with the MRF segment borders for ``mrf``.'''

        self.write_effective_config()
        method = method or self.p['sigma_method']
        image = data_io.load_image(image_path)
        annotations = data_io.load_annotations(annotation_path)
        segmentation = None
        if method == du.SIGMA_MRF and len(annotations):
            segmentation = scale_mrf.segment_heads(
                image, annotations, self.p['mrf_n_segments'], self.p['mrf_compactness'],
                self.p['mrf_iterations'], self.mrf_config())
            sigmas = scale_mrf.estimate_sigmas_mrf(segmentation, self.p['mrf_kappa'])
        else:
            sigmas = self.estimate(annotations, image, method)
        overlay = scale_mrf.render_scales(image, annotations, sigmas, segmentation)
        stem = splitext(basename(image_path))[0]
        out = self.out_path('render', f'{stem}_scales.png')
        data_io.save_image(out, overlay)
        print(f'Saved Files {out}')
        return out

    def synthesize(self, n_scenes, split='train', spec=None, count_range=None):
        ''' Writes a synthetic split below ``out_dir/synthetic``.'''
        self.write_effective_config()
        spec = spec or data_io.SyntheticSceneSpec()
        manifest = data_io.generate_synthetic_dataset(n_scenes, spec,
                                                      join(self.p['out_dir'], 'synthetic'),
                                                      split, count_range)
        print(f'Saved Files {len(manifest)} {split} scenes')
        return manifest


def _gray(density):
    ''' Density map scaled by its maximum as an RGB panel; all-zero maps stay black.'''
    peak = density.max() if density.size else 0.0
    scaled = density / peak if peak > 0 else np.zeros_like(density)
    return np.repeat(scaled[..., None], 3, axis=2)
