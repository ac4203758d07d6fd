# This file is part of pyMBTTBF for building crowd density ground truth
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
Ground truth density maps for crowd counting. A density map places one isotropic Gaussian of
scale :math:`\\sigma_g` at every annotated head :math:`x_g`

.. math::

    Y(x) = \\sum_{x_g \\in S} \\mathcal{N}(x; x_g, \\sigma_g^2)

so that integrating the map returns the number of people. Kernels are truncated at
``TRUNCATE`` sigmas and, by default, renormalized so each head carries exactly unit mass
inside the image. Heads are further split into four scale bands (per-image sigma quartiles)
whose maps supervise the side outputs of the network.

PACKAGE CONTENTS
================
* :class:`AnnotationSet` Ordered head locations of one image.
* :class:`SigmaAssignment` Per-head Gaussian scale.
* :class:`DensityMap` Density grid with its stride.
* :class:`ScaleBandPartition` Four scale bands and their maps.
* :func:`render_density` Density map of an annotation set.
* :func:`count` Integral of a density map.
* :func:`partition_scale_bands` Scale-band split and band maps.
* :func:`render_scale_bands` Full map and band partition from shared kernels.
* :func:`band_target` Summed band maps at a given stride.
* :func:`downsample_preserving_count` Sum pooling.
* :func:`flip_horizontal` Mirror annotations and map.
* :func:`clip_sigmas` Clip scales to the admissible range of an image.
'''

from collections import namedtuple
import logging
import math

import numpy as np

from .exceptions import AlignmentError, DomainError

logger = logging.getLogger(__name__)

# ==============================================================================
# List of constants used in the density computations
# ==============================================================================
# Kernel support in units of sigma
TRUNCATE = 4.0
# Smallest admissible head scale (pixels)
SIGMA_MIN = 1.0
# Largest admissible head scale as a fraction of the shortest image side
SIGMA_MAX_FRACTION = 0.25
# Number of scale bands and the backbone taps they supervise (band 1 -> conv3)
NUM_BANDS = 4
BAND_IDS = (3, 4, 5, 6)

# Scale estimation methods
SIGMA_CONSTANT = 'constant'
SIGMA_KNN = 'knn'
SIGMA_MRF = 'mrf'
SIGMA_METHODS = (SIGMA_CONSTANT, SIGMA_KNN, SIGMA_MRF)

PointAnnotation = namedtuple('PointAnnotation', ['x', 'y'])


class AnnotationSet(object):
    ''' Ordered list of head locations of one image.

    Parameters
    ----------
    points : array_like
        (n, 2) array of [x, y] pixel coordinates, x horizontal.
    image_size : tuple
        (height, width) of the image in pixels.
    n_clamped : int, optional
        Number of points clamped to the image border when the set was read.
    '''

    def __init__(self, points, image_size, n_clamped=0):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.n_clamped = int(n_clamped)
        height, width = self.image_size
        if height < 1 or width < 1:
            raise DomainError(f'invalid image size {self.image_size}')
        if len(self.points) > 0:
            if not np.all(np.isfinite(self.points)):
                raise DomainError('non-finite head coordinates')
            if (self.points[:, 0].min() < 0 or self.points[:, 0].max() > width - 1
                    or self.points[:, 1].min() < 0 or self.points[:, 1].max() > height - 1):
                raise DomainError('head coordinates outside the image bounds')

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        for x, y in self.points:
            yield PointAnnotation(x, y)

    def __getitem__(self, index):
        x, y = self.points[index]
        return PointAnnotation(x, y)

    @property
    def xs(self):
        return self.points[:, 0]

    @property
    def ys(self):
        return self.points[:, 1]

    def subset(self, indices):
        return AnnotationSet(self.points[np.asarray(indices, dtype=int)], self.image_size)

    def added(self, x, y):
        return AnnotationSet(np.vstack([self.points, [[x, y]]]), self.image_size)

    def flipped(self):
        return flip_horizontal(self)[0]

    def __repr__(self):
        return f'AnnotationSet(n={len(self)}, image_size={self.image_size})'


class SigmaAssignment(object):
    ''' Per-head Gaussian scales aligned by index with an :class:`AnnotationSet`.'''

    def __init__(self, sigmas, method):
        self.sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
        if method not in SIGMA_METHODS:
            raise DomainError(f'unknown scale estimation method {method}')
        self.method = method

    def __len__(self):
        return len(self.sigmas)

    def __repr__(self):
        return f'SigmaAssignment(method={self.method!r}, n={len(self)})'


class DensityMap(object):
    ''' Nonnegative density grid.

    Parameters
    ----------
    grid : array_like
        2-D array of cell masses.
    stride : int
        Source image pixels per cell along each axis.
    '''

    def __init__(self, grid, stride=1):
        self.grid = np.asarray(grid)
        if self.grid.ndim != 2:
            raise AlignmentError(f'density grid must be 2-D, got shape {self.grid.shape}')
        self.stride = int(stride)
        if self.stride < 1:
            raise DomainError(f'stride must be positive, got {stride}')

    @property
    def shape(self):
        return self.grid.shape

    def __repr__(self):
        return f'DensityMap(shape={self.grid.shape}, stride={self.stride})'


class ScaleBandPartition(object):
    ''' Four disjoint scale bands, smallest heads first.

    ``band_indices[k]`` and ``band_maps[k]`` belong to band ``k + 1``, which supervises the
    side outputs tied to backbone tap ``BAND_IDS[k]``.
    '''

    def __init__(self, band_indices, band_maps, thresholds):
        self.band_indices = [np.asarray(idx, dtype=int) for idx in band_indices]
        self.band_maps = list(band_maps)
        self.thresholds = np.asarray(thresholds, dtype=np.float64)

    @property
    def stride(self):
        return self.band_maps[0].stride

    def band_map(self, band_id):
        return self.band_maps[BAND_IDS.index(band_id)]

    def target(self, band_ids, stride):
        ''' Elementwise sum of the maps of ``band_ids`` pooled to ``stride``.'''
        grid = sum(self.band_map(b).grid for b in band_ids)
        summed = DensityMap(grid, self.stride)
        return pool_to_stride(summed, stride)


def band_target(partition, band_ids, stride):
    ''' Supervision target of a side output: summed band maps at the side output stride.'''
    return partition.target(band_ids, stride)


def sigma_bounds(image_size):
    ''' Admissible range of head scales for an image of size (height, width).'''
    sigma_max = max(SIGMA_MAX_FRACTION * min(image_size), SIGMA_MIN)
    return SIGMA_MIN, sigma_max


def clip_sigmas(sigmas, image_size):
    sigma_min, sigma_max = sigma_bounds(image_size)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    n_clipped = int(np.count_nonzero((sigmas < sigma_min) | (sigmas > sigma_max)))
    if n_clipped:
        logger.warning('%d head scales clipped to [%.2f, %.2f]', n_clipped, sigma_min, sigma_max)
    return np.clip(sigmas, sigma_min, sigma_max)


def grid_shape(image_size, stride):
    ''' Cells of a stride-``stride`` grid covering the image, partial cells included.'''
    return -(-image_size[0] // stride), -(-image_size[1] // stride)


def _check_alignment(annotations, sigmas):
    sig = sigmas.sigmas if isinstance(sigmas, SigmaAssignment) else np.asarray(sigmas, float)
    sig = np.asarray(sig, dtype=np.float64).reshape(-1)
    if len(sig) != len(annotations):
        raise AlignmentError(f'{len(sig)} sigmas for {len(annotations)} annotations')
    if np.any(~(sig > 0)):
        raise DomainError('sigma must be strictly positive')
    return sig


def _head_kernels(annotations, sig, out_stride, renormalize):
    ''' Yields the truncated kernel of every head as (row slice, col slice, values).'''

    rows, cols = grid_shape(annotations.image_size, out_stride)
    # cell j covers pixels [j*s, (j+1)*s), its centre sits at j*s + (s-1)/2
    offset = 0.5 * (out_stride - 1)
    for (x, y), sigma in zip(annotations.points, sig):
        s = sigma / out_stride
        cx = (x - offset) / out_stride
        cy = (y - offset) / out_stride
        reach = TRUNCATE * s
        j0, j1 = max(math.ceil(cx - reach), 0), min(math.floor(cx + reach), cols - 1)
        i0, i1 = max(math.ceil(cy - reach), 0), min(math.floor(cy + reach), rows - 1)
        kernel = None
        if j0 <= j1 and i0 <= i1:
            gx = np.exp(-0.5 * ((np.arange(j0, j1 + 1) - cx) / s) ** 2)
            gy = np.exp(-0.5 * ((np.arange(i0, i1 + 1) - cy) / s) ** 2)
            kernel = np.outer(gy, gx) / (2.0 * np.pi * s ** 2)
            if renormalize:
                mass = kernel.sum()
                kernel = kernel / mass if mass > 0 else None
        if kernel is None:
            if not renormalize:
                continue
            # kernel underflowed: all mass on the nearest cell
            i0 = i1 = min(max(int(round(cy)), 0), rows - 1)
            j0 = j1 = min(max(int(round(cx)), 0), cols - 1)
            kernel = np.ones((1, 1))
        yield slice(i0, i1 + 1), slice(j0, j1 + 1), kernel


def render_density(annotations, sigmas, out_stride=1, renormalize=True):
    ''' Renders the density map of an annotation set.

    Parameters
    ----------
    annotations : AnnotationSet
        Head locations.
    sigmas : SigmaAssignment or array_like
        Head scales in source image pixels, aligned with ``annotations``.
    out_stride : int, optional
        Image pixels per output cell; the grid covers the image padded up to a multiple of the
        stride.
    renormalize : bool, optional
        Rescale each truncated in-bounds kernel to unit mass.

    Returns
    -------
    density : DensityMap
        Map of shape ceil(H/out_stride) x ceil(W/out_stride).
    '''

    if out_stride < 1:
        raise DomainError(f'out_stride must be positive, got {out_stride}')
    sig = _check_alignment(annotations, sigmas)
    grid = np.zeros(grid_shape(annotations.image_size, out_stride), dtype=np.float64)
    for rows, cols, kernel in _head_kernels(annotations, sig, out_stride, renormalize):
        grid[rows, cols] += kernel
    return DensityMap(grid, out_stride)


def count(density):
    ''' Number of people represented by a density map.'''
    return float(np.sum(density.grid, dtype=np.float64))


def assign_bands(sigmas, num_bands=NUM_BANDS):
    ''' Band index (0 = smallest heads) of every sigma and the quantile thresholds.

    Thresholds are the per-image quantiles k/num_bands, k = 1..num_bands-1; a sigma equal to a
    threshold falls in the lower band.
    '''
    sig = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    if len(sig) == 0:
        return np.zeros(0, dtype=int), np.zeros(num_bands - 1)
    thresholds = np.quantile(sig, np.arange(1, num_bands) / num_bands)
    return np.searchsorted(thresholds, sig, side='left'), thresholds


def render_scale_bands(annotations, sigmas, out_stride=1, renormalize=True,
                       num_bands=NUM_BANDS):
    ''' Full density map and its scale-band partition rendered from the same kernels.'''

    if out_stride < 1:
        raise DomainError(f'out_stride must be positive, got {out_stride}')
    sig = _check_alignment(annotations, sigmas)
    bands, thresholds = assign_bands(sig, num_bands)
    shape = grid_shape(annotations.image_size, out_stride)
    full = np.zeros(shape)
    band_grids = [np.zeros(shape) for _ in range(num_bands)]
    for band, (rows, cols, kernel) in zip(
            bands, _head_kernels(annotations, sig, out_stride, renormalize)):
        full[rows, cols] += kernel
        band_grids[band][rows, cols] += kernel
    band_indices = [np.flatnonzero(bands == b) for b in range(num_bands)]
    partition = ScaleBandPartition(band_indices,
                                   [DensityMap(g, out_stride) for g in band_grids],
                                   thresholds)
    return DensityMap(full, out_stride), partition


def partition_scale_bands(annotations, sigmas, num_bands=NUM_BANDS, out_stride=1,
                          renormalize=True):
    ''' Splits the heads into scale bands at the per-image sigma quartiles.

    Band 1 holds the smallest heads. Empty bands get all-zero maps.

    Parameters
    ----------
    annotations : AnnotationSet
        Head locations.
    sigmas : SigmaAssignment or array_like
        Head scales aligned with ``annotations``.
    num_bands : int, optional
        Number of bands, 4 by default.
    out_stride : int, optional
        Stride of the band maps.
    renormalize : bool, optional
        Unit-mass kernels, as in :func:`render_density`.

    Returns
    -------
    partition : ScaleBandPartition
    '''
    return render_scale_bands(annotations, sigmas, out_stride, renormalize, num_bands)[1]


def downsample_preserving_count(density, factor):
    ''' Non-overlapping factor x factor sum pooling, zero padding partial blocks.'''

    factor = int(factor)
    if factor <= 0:
        raise DomainError(f'pooling factor must be positive, got {factor}')
    if factor == 1:
        return DensityMap(density.grid.copy(), density.stride)
    rows, cols = density.grid.shape
    pad_r, pad_c = (-rows) % factor, (-cols) % factor
    grid = np.pad(density.grid, ((0, pad_r), (0, pad_c)))
    grid = grid.reshape(grid.shape[0] // factor, factor,
                        grid.shape[1] // factor, factor).sum(axis=(1, 3))
    return DensityMap(grid, density.stride * factor)


def pool_to_stride(density, stride):
    ''' Sum-pools a map to ``stride``, which must be a multiple of the map's stride.'''
    if stride % density.stride != 0:
        raise AlignmentError(f'cannot pool a stride-{density.stride} map to stride {stride}')
    return downsample_preserving_count(density, stride // density.stride)


def flip_horizontal(annotations, density=None):
    ''' Mirrors the annotations (x -> W-1-x) and, when given, the density map.'''

    width = annotations.image_size[1]
    points = annotations.points.copy()
    points[:, 0] = (width - 1) - points[:, 0]
    flipped = AnnotationSet(points, annotations.image_size)
    if density is None:
        return flipped, None
    return flipped, DensityMap(density.grid[:, ::-1].copy(), density.stride)
