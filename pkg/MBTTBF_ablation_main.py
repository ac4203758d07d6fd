#!/usr/bin/python
# -*- coding: utf-8 -*-
"""
Script to run the ablation study from a configuration file

"""

import sys

from pyMBTTBF.MBTTBFConfigFileInterface import MBTTBFConfigFileInterface

config_file = 'Config_Ablation.txt'


def run_ablation_from_config_file(config_file):
    # Create an interface instance
    setup = MBTTBFConfigFileInterface()
    # Get the data from configuration file
    setup.load(config_file)
    # Train and evaluate every configuration
    return setup.run('ablate')


if __name__ == '__main__':
    args = sys.argv
    if len(args) > 1:
        config_file = args[1]
    print('Run pyMBTTBF ablation with configuration file = ' + str(config_file))
    run_ablation_from_config_file(config_file)
