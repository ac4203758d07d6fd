# This file is part of pyMBTTBF, consisting of the command line interface
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
``mbttbf`` command line front end.

Every configuration key has a flag (``learning_rate`` -> ``--learning-rate``) overriding the
value of the ``--config`` file. Commands::

    mbttbf estimate-scales --manifest M [--method {constant,knn,mrf}] [--out-dir D]
    mbttbf gen-gt --manifest M [--sigmas DIR] [--stride S] [--bands]
    mbttbf train --config C
    mbttbf eval --checkpoint CK --manifest M
    mbttbf ablate --config C [--topologies T1,T2] [--seeds 0,1,2]
    mbttbf render --checkpoint CK --image I [--annotations A]
    mbttbf render-scales --image I --annotations A [--method M]
    mbttbf synthesize --n-scenes N --split train

Exit codes: 0 success, 1 usage or configuration error, 2 data error (including any failed
entry), 3 numeric failure.
'''

import argparse
import logging
import os
import sys

from . import data_io
from .MBTTBFConfigFileInterface import MBTTBFConfigFileInterface
from .PyMBTTBF import PyMBTTBF
from .exceptions import ConfigError, DivergenceError, MBTTBFError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# Short flags kept next to the flags derived from the configuration keys
FLAG_ALIASES = {
    'sigma_method': ['--method'],
    'knn_k': ['--k'],
    'knn_beta': ['--beta'],
    'sigma_dir': ['--sigmas'],
    'gt_stride': ['--stride'],
    'ablation_configs': ['--topologies'],
    'ablation_seeds': ['--seeds'],
}


class ArgumentParser(argparse.ArgumentParser):
    ''' Usage errors exit with status 1.'''

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _config_flags():
    common = ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value or JSON configuration file')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    group = common.add_argument_group('configuration keys')
    for key in MBTTBFConfigFileInterface.DEFAULTS:
        flags = ['--' + key.replace('_', '-')] + FLAG_ALIASES.get(key, [])
        group.add_argument(*flags, dest=key, default=None, metavar=key.upper())
    return common


def build_parser():
    common = _config_flags()
    parser = ArgumentParser(prog='mbttbf', description='Crowd counting with multi-level '
                                                       'bottom-top and top-bottom fusion')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    p = commands.add_parser('estimate-scales', parents=[common], help='head scales per image')
    p.add_argument('--manifest')

    p = commands.add_parser('gen-gt', parents=[common], help='ground truth density maps')
    p.add_argument('--manifest')
    p.add_argument('--bands', action='store_true', help='also write the four band maps')

    commands.add_parser('train', parents=[common], help='train a network')

    p = commands.add_parser('eval', parents=[common], help='MAE and MSE of a checkpoint')
    p.add_argument('--manifest')

    commands.add_parser('ablate', parents=[common], help='ablation study')

    p = commands.add_parser('render', parents=[common], help='prediction panels of an image')
    p.add_argument('--image', required=True)
    p.add_argument('--annotations')

    p = commands.add_parser('render-scales', parents=[common], help='scale circles of an image')
    p.add_argument('--image', required=True)
    p.add_argument('--annotations', required=True)

    p = commands.add_parser('synthesize', parents=[common], help='synthetic crowd scenes')
    p.add_argument('--n-scenes', type=int, default=10)
    p.add_argument('--split', default='train', choices=data_io.SPLITS)
    p.add_argument('--height', type=int, default=64)
    p.add_argument('--width', type=int, default=64)
    p.add_argument('--n-heads', type=int, default=20)
    p.add_argument('--count-range', type=int, nargs=2, metavar=('LO', 'HI'))
    p.add_argument('--size-range', type=float, nargs=2, default=(2.0, 5.0),
                   metavar=('R_MIN', 'R_MAX'))
    p.add_argument('--perspective-gain', type=float, default=0.8)
    p.add_argument('--clutter-level', type=float, default=0.3)
    p.add_argument('--seed', type=int, default=0)
    return parser


def _settings(args):
    interface = MBTTBFConfigFileInterface()
    overrides = {key: getattr(args, key) for key in MBTTBFConfigFileInterface.DEFAULTS}
    return interface.load(args.config, overrides)


def cmd_estimate_scales(args, driver):
    # explicit --out-dir collects the scale files below it
    if args.out_dir is not None and not driver.p['sigma_dir']:
        driver.p['sigma_dir'] = os.path.join(driver.p['out_dir'], 'sigmas')
    driver.estimate_scales(args.manifest)
    return EXIT_DATA if driver.failures else EXIT_OK


def cmd_gen_gt(args, driver):
    driver.generate_ground_truth(args.manifest, bands=args.bands)
    return EXIT_DATA if driver.failures else EXIT_OK


def cmd_train(args, driver):
    driver.train()
    return EXIT_OK


def cmd_eval(args, driver):
    driver.evaluate(manifest=args.manifest)
    return EXIT_OK


def cmd_ablate(args, driver):
    driver.ablate()
    return EXIT_DATA if driver.failures else EXIT_OK


def cmd_render(args, driver):
    driver.render(args.image, annotation_path=args.annotations)
    return EXIT_OK


def cmd_render_scales(args, driver):
    driver.render_scales(args.image, args.annotations)
    return EXIT_OK


def cmd_synthesize(args, driver):
    spec = data_io.SyntheticSceneSpec((args.height, args.width), args.n_heads,
                                      tuple(args.size_range), args.perspective_gain,
                                      args.clutter_level, args.seed)
    driver.synthesize(args.n_scenes, args.split, spec, args.count_range)
    return EXIT_OK


COMMANDS = {
    'estimate-scales': cmd_estimate_scales,
    'gen-gt': cmd_gen_gt,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'render': cmd_render,
    'render-scales': cmd_render_scales,
    'synthesize': cmd_synthesize,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        driver = PyMBTTBF(_settings(args))
        return COMMANDS[args.command](args, driver)
    except ConfigError as e:
        logger.error('%s', e)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as e:
        logger.error('%s', e)
        return EXIT_NUMERIC
    except (MBTTBFError, OSError) as e:
        logger.error('%s', e)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
