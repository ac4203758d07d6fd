# This file is part of pyMBTTBF, the error hierarchy shared by all modules
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
Exceptions raised by pyMBTTBF. Everything derives from :class:`MBTTBFError` so that the
command line front end can map a failure to its exit code with a single ``except`` clause.

PACKAGE CONTENTS
================
* :class:`MBTTBFError` Base class.
* :class:`DomainError` Argument outside its domain.
* :class:`AlignmentError` Mismatched lengths, shapes or strides.
* :class:`FormatError` Malformed file, with :class:`AnnotationParseError`,
  :class:`DensityFormatError` and :class:`ManifestError`.
* :class:`ConfigError` Invalid run configuration.
* :class:`GenerationError` Synthetic scene could not be placed.
* :class:`DivergenceError` Non-finite training loss.
* :class:`CheckpointError` Checkpoint key schema mismatch.
'''


class MBTTBFError(Exception):
    pass


class DomainError(MBTTBFError, ValueError):
    pass


class AlignmentError(MBTTBFError, ValueError):
    pass


class FormatError(MBTTBFError, ValueError):
    pass


class AnnotationParseError(FormatError):

    def __init__(self, path, entry, reason):
        self.path = path
        self.entry = entry
        self.reason = reason
        super().__init__(f'{path}: bad entry {entry}: {reason}')


class DensityFormatError(FormatError):
    pass


class ManifestError(FormatError):
    pass


class ConfigError(MBTTBFError):
    pass


class GenerationError(MBTTBFError):
    pass


class DivergenceError(MBTTBFError, ArithmeticError):

    def __init__(self, epoch, step, value):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f'non-finite loss {value} at epoch {epoch}, step {step}')


class CheckpointError(MBTTBFError):

    def __init__(self, path, missing=(), unexpected=(), reason=None):
        self.path = path
        self.missing = sorted(missing)
        self.unexpected = sorted(unexpected)
        msg = f'{path}: checkpoint does not match the network'
        if reason:
            msg += f' ({reason})'
        if self.missing:
            msg += '\n  missing keys: ' + ', '.join(self.missing)
        if self.unexpected:
            msg += '\n  unexpected keys: ' + ', '.join(self.unexpected)
        super().__init__(msg)
