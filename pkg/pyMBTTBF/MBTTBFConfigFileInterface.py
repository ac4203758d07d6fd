# This file is part of pyMBTTBF, consisting of the configuration file interface
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
Run configuration files. A configuration is a flat set of keys written either as
``key=value`` lines (``#`` starts a comment) or as a JSON object (``.json`` files). Every key
has a default in :attr:`MBTTBFConfigFileInterface.DEFAULTS`; unknown keys are rejected.
'''

from collections import OrderedDict
from configparser import ConfigParser
import itertools
import json
import os

from . import MBTTBF as net
from . import density_utils as du
from . import scale_mrf
from . import training
from .exceptions import ConfigError

NONE_VALUES = ('', 'none', 'null')
TRUE_VALUES = ('1', 'true', 'yes', 'on')
FALSE_VALUES = ('0', 'false', 'no', 'off')


class ParserError(ConfigError):

    def __init__(self, parameter, expected_type):
        self.param = parameter
        self.type = expected_type
        super().__init__(f'could not parse parameter {parameter} as type {expected_type}')


class MyConfigParser(ConfigParser):

    def __init__(self, top_section, *args, **kwargs):
        super().__init__(*args, inline_comment_prefixes=('#',), **kwargs)
        self.section = top_section

    def myget(self, option, **kwargs):
        return super().get(self.section, option, **kwargs)

    def has_option(self, option):
        return super().has_option(self.section, option)

    def items_top(self):
        return OrderedDict((k, v) for k, v in super().items(self.section))


def _type_name(convert):
    return getattr(convert, 'type_name', convert.__name__.replace('_to_', ''))


def _to_bool(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in TRUE_VALUES + FALSE_VALUES:
        return value.strip().lower() in TRUE_VALUES
    raise ValueError(value)


def _to_int(value):
    if isinstance(value, bool):
        raise ValueError(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(value)
        return int(value)
    return int(value)


def _to_float(value):
    if isinstance(value, bool):
        raise ValueError(value)
    return float(value)


def _optional(convert):
    def wrapped(value):
        if value is None or (isinstance(value, str) and value.strip().lower() in NONE_VALUES):
            return None
        return convert(value)
    wrapped.type_name = 'optional ' + _type_name(convert)
    return wrapped


def _to_str(value):
    if not isinstance(value, str):
        raise ValueError(value)
    return value.strip()


def _list_of(convert):
    def wrapped(value):
        if isinstance(value, str):
            value = [v for v in value.replace(';', ',').split(',') if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ValueError(value)
        return [convert(v.strip() if isinstance(v, str) else v) for v in value]
    wrapped.type_name = 'list of ' + _type_name(convert)
    return wrapped


class MBTTBFConfigFileInterface():

    NETWORK = [
        'backbone',
        'topology',
        'dr_channels',
        'use_scfb',
        'use_scale_supervision',
        'rng_seed',
        'backbone_weights'
    ]

    OPTIMISATION = [
        'learning_rate',
        'beta1',
        'beta2',
        'epsilon',
        'epochs',
        'batch_size',
        'optim_seed',
        'noise_amplitude',
        'flip_probability'
    ]

    LOSS = [
        'lambda_side'
    ]

    SCALE_ESTIMATION = [
        'sigma_method',
        'sigma0',
        'knn_k',
        'knn_beta',
        'mrf_n_segments',
        'mrf_compactness',
        'mrf_iterations',
        'mrf_gamma',
        'mrf_color_tau',
        'mrf_max_sweeps',
        'mrf_kappa',
        'mrf_color_aware',
        'mrf_color_weight',
        'mrf_background_cost'
    ]

    PATHS = [
        'train_manifest',
        'val_manifest',
        'test_manifest',
        'sigma_dir',
        'out_dir',
        'checkpoint',
        'gt_stride'
    ]

    ABLATION = [
        'ablation_configs',
        'ablation_seeds'
    ]

    # key -> (default, converter)
    DEFAULTS = OrderedDict([
        ('backbone', (net.TINY, _to_str)),
        ('topology', (net.MBTTBF, _to_str)),
        ('dr_channels', (net.DR_CHANNELS, _to_int)),
        ('use_scfb', (True, _to_bool)),
        ('use_scale_supervision', (True, _to_bool)),
        ('rng_seed', (0, _to_int)),
        ('backbone_weights', (None, _optional(_to_str))),
        ('learning_rate', (training.LEARNING_RATE, _to_float)),
        ('beta1', (training.BETA1, _to_float)),
        ('beta2', (training.BETA2, _to_float)),
        ('epsilon', (training.EPSILON, _to_float)),
        ('epochs', (training.EPOCHS, _to_int)),
        ('batch_size', (training.BATCH_SIZE, _to_int)),
        ('optim_seed', (0, _to_int)),
        ('noise_amplitude', (training.NOISE_AMPLITUDE, _to_float)),
        ('flip_probability', (training.FLIP_PROBABILITY, _to_float)),
        ('lambda_side', (training.LAMBDA_SIDE, _to_float)),
        ('sigma_method', (du.SIGMA_MRF, _to_str)),
        ('sigma0', (scale_mrf.SIGMA0, _to_float)),
        ('knn_k', (scale_mrf.KNN_K, _to_int)),
        ('knn_beta', (scale_mrf.KNN_BETA, _to_float)),
        ('mrf_n_segments', (None, _optional(_to_int))),
        ('mrf_compactness', (scale_mrf.COMPACTNESS, _to_float)),
        ('mrf_iterations', (scale_mrf.SLIC_ITERATIONS, _to_int)),
        ('mrf_gamma', (scale_mrf.MRF_GAMMA, _to_float)),
        ('mrf_color_tau', (scale_mrf.COLOR_TAU, _to_float)),
        ('mrf_max_sweeps', (scale_mrf.MAX_SWEEPS, _to_int)),
        ('mrf_kappa', (scale_mrf.KAPPA, _to_float)),
        ('mrf_color_aware', (True, _to_bool)),
        ('mrf_color_weight', (None, _optional(_to_float))),
        ('mrf_background_cost', (None, _optional(_to_float))),
        ('train_manifest', (None, _optional(_to_str))),
        ('val_manifest', (None, _optional(_to_str))),
        ('test_manifest', (None, _optional(_to_str))),
        ('sigma_dir', (None, _optional(_to_str))),
        ('out_dir', ('output', _to_str)),
        ('checkpoint', (None, _optional(_to_str))),
        ('gt_stride', (1, _to_int)),
        ('ablation_configs', (list(training.ABLATION_LADDER), _list_of(_to_str))),
        ('ablation_seeds', ([0, 1, 2], _list_of(_to_int))),
    ])

    def __init__(self):

        self.params = {}
        self.ready = False

    @staticmethod
    def parse_input_config(input_file):
        ''' Reads the raw key/value pairs of a ``key=value`` or JSON configuration file.'''

        if os.path.splitext(input_file)[1].lower() == '.json':
            with open(input_file) as conf_file:
                try:
                    raw = json.load(conf_file, object_pairs_hook=OrderedDict)
                except ValueError as e:
                    raise ConfigError(f'{input_file}: {e}')
            if not isinstance(raw, dict):
                raise ConfigError(f'{input_file}: expected a JSON object')
            return raw

        parser = MyConfigParser('top')
        with open(input_file) as conf_file:
            conf_file = itertools.chain(('[top]',), conf_file)  # dummy section to please parser
            parser.read_file(conf_file)

        return parser.items_top()

    @classmethod
    def get_data(cls, raw, overrides=None):
        ''' Converts raw values to typed parameters, with defaults for the missing keys.

        Parameters
        ----------
        raw : dict
            Values read from a configuration file.
        overrides : dict, optional
            Values taking precedence over ``raw`` (command line flags); None values are
            ignored.

        Returns
        -------
        conf : OrderedDict
            Every key of :attr:`DEFAULTS`.

        Raises
        ------
        ConfigError
            On unknown keys.
        ParserError
            On values that cannot be converted.
        '''

        merged = OrderedDict(raw)
        if overrides:
            merged.update((k, v) for k, v in overrides.items() if v is not None)
        unknown = sorted(set(merged) - set(cls.DEFAULTS))
        if unknown:
            raise ConfigError('unknown configuration keys: ' + ', '.join(unknown))
        conf = OrderedDict()
        for key, (default, convert) in cls.DEFAULTS.items():
            if key not in merged:
                conf[key] = list(default) if isinstance(default, list) else default
                continue
            try:
                conf[key] = convert(merged[key])
            except (TypeError, ValueError):
                raise ParserError(key, _type_name(convert))
        return conf

    def load(self, input_file=None, overrides=None):
        ''' Parses a configuration file (optional) and the overrides into :attr:`params`.'''
        raw = self.parse_input_config(input_file) if input_file else {}
        self.params = self.get_data(raw, overrides)
        self.ready = True
        return self.params

    def run(self, command='train'):
        ''' Runs a pipeline stage with the loaded parameters.'''

        from .PyMBTTBF import PyMBTTBF

        if not self.ready:
            print("pyMBTTBF will not be run due to errors in the input data.")
            return None
        model = PyMBTTBF(self.params)
        if command == 'train':
            return model.train()
        if command == 'ablate':
            return model.ablate()
        if command == 'eval':
            return model.evaluate()
        raise ConfigError(f'unknown command {command!r}')


def save_config(params, path):
    ''' Writes the effective configuration as JSON.'''
    with open(path, 'w') as fid:
        json.dump(params, fid, indent=1)
