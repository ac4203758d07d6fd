#!/usr/bin/env python
#
# This file is part of pyMBTTBF.
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

import os
from setuptools import setup

PROJECT_ROOT = os.path.dirname(__file__)


def read_file(filepath, root=PROJECT_ROOT):
    """
    Return the contents of the specified `filepath`.

    * `root` is the base path and it defaults to the `PROJECT_ROOT` directory.
    * `filepath` should be a relative path, starting from `root`.
    """
    with open(os.path.join(root, filepath), encoding="utf8") as fd:
        text = fd.read()
    return text


LONG_DESCRIPTION = read_file("README.md")
SHORT_DESCRIPTION = ("Crowd counting by density regression with multi-level bottom-top and "
                     "top-bottom feature fusion, and MRF-based head scale estimation")
REQS = ['numpy>=1.17', 'scipy', 'pandas', 'torch>=1.8', 'scikit-image>=0.19', 'tqdm']
TEST_REQS = ['pytest', 'hypothesis']


setup(
    name                  = "pyMBTTBF",
    packages              = ['pyMBTTBF'],
    install_requires      = REQS,
    extras_require        = {'tests': TEST_REQS},
    version               = "1.0",
    description           = SHORT_DESCRIPTION,
    license               = "GPL",
    long_description      = LONG_DESCRIPTION,
    long_description_content_type = "text/markdown",
    entry_points          = {'console_scripts': ['mbttbf = pyMBTTBF.cli:main']},
    classifiers           = [
        "Development Status :: Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Software Development :: Libraries :: Python Modules",
        "License :: OSI Approved :: GNU General Public License (GPL)",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3"],
    keywords             = ['crowd counting', 'density map', 'feature fusion',
        'scale estimation', 'superpixels', 'watershed', 'Markov random field'])
