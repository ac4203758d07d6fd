#!/usr/bin/python
# -*- coding: utf-8 -*-
"""
Script to train the MBTTBF network from a configuration file

"""

import sys

from pyMBTTBF.MBTTBFConfigFileInterface import MBTTBFConfigFileInterface

config_file = 'Config_Train.txt'


def run_MBTTBF_from_config_file(config_file):
    # Create an interface instance
    setup = MBTTBFConfigFileInterface()
    # Get the data from configuration file
    setup.load(config_file)
    # Run the training
    return setup.run('train')


if __name__ == '__main__':
    args = sys.argv
    if len(args) > 1:
        config_file = args[1]
    print('Run pyMBTTBF with configuration file = ' + str(config_file))
    run_MBTTBF_from_config_file(config_file)
