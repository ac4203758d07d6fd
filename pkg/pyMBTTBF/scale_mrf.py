# This file is part of pyMBTTBF for estimating the apparent size of annotated heads
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
Head scale (sigma) estimation. Point annotations say where heads are but not how big they
look. The image is over-segmented into superpixels (SLIC) and, independently, partitioned
among the heads by a seeded watershed on the distance transform of the head locations. Both
are fused in a Potts Markov random field over superpixels, solved by iterated conditional
modes, and the area finally owned by every head is turned into a Gaussian scale
:math:`\\sigma = \\kappa \\sqrt{A}`.

Two baselines are provided as well: a constant scale and the mean distance to the k nearest
heads.

PACKAGE CONTENTS
================
* :class:`SuperpixelMap` SLIC label grid.
* :class:`DistanceField` Euclidean distance to the nearest head.
* :class:`WatershedLabels` Head id of every pixel.
* :class:`MrfConfig` Energy and solver parameters.
* :class:`HeadSegmentation` Result of the MRF.
* :func:`slic_segment` SLIC superpixels with connectivity enforcement.
* :func:`distance_transform` Exact Euclidean distance transform of the heads.
* :func:`seeded_watershed` Priority-flood watershed seeded at the heads.
* :func:`mrf_refine` Potts MRF over superpixels solved by ICM.
* :func:`estimate_sigmas_mrf` Scale from segment area.
* :func:`estimate_sigmas_knn` Scale from the k nearest heads.
* :func:`estimate_sigmas_constant` Constant scale.
* :func:`estimate_sigmas` Dispatch over the three estimators.
* :func:`render_scales` Scale circles drawn over the image.

References
----------
.. [Achanta2012] Achanta, R., Shaji, A., Smith, K., Lucchi, A., Fua, P. and Susstrunk, S.
    (2012) SLIC superpixels compared to state-of-the-art superpixel methods,
    IEEE Transactions on Pattern Analysis and Machine Intelligence, 34(11), 2274-2282.
.. [Beucher1992] Beucher, S. (1992) The watershed transformation applied to image
    segmentation, Scanning Microscopy Supplement, 6, 299-314.
.. [Besag1986] Besag, J. (1986) On the statistical analysis of dirty pictures,
    Journal of the Royal Statistical Society B, 48(3), 259-302.
'''

import heapq
import logging
import math

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import color, draw
from skimage.segmentation import find_boundaries

from .density_utils import (SigmaAssignment, clip_sigmas, SIGMA_CONSTANT, SIGMA_KNN,
                            SIGMA_MRF)
from .exceptions import AlignmentError, DomainError

logger = logging.getLogger(__name__)

# ==============================================================================
# List of constants used in the scale estimation
# ==============================================================================
# Image pixels per superpixel for the default segment count K = H*W/400
PIXELS_PER_SEGMENT = 400
# Image pixels per superpixel for the colour-aware MRF
COLOR_AWARE_PIXELS_PER_SEGMENT = 16
COMPACTNESS = 10.0
SLIC_ITERATIONS = 10
# MRF pairwise weight, colour bandwidth and sweep cap
MRF_GAMMA = 1.0
COLOR_TAU = 0.1
MAX_SWEEPS = 20
# Colour cue and background label of the colour-aware MRF
COLOR_WEIGHT = 1.0
BACKGROUND_COST = 0.5
# Area to scale factor, sigma = KAPPA * sqrt(area)
KAPPA = 0.3
# Nearest-neighbour baseline
KNN_K = 3
KNN_BETA = 0.3
# Constant baseline, also the fallback of the nearest-neighbour estimator
SIGMA0 = 4.0

# 8-neighbourhood of the watershed flood
_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class SuperpixelMap(object):

    def __init__(self, labels, mean_colors):
        self.labels = labels
        self.n_segments = int(mean_colors.shape[0])
        self.mean_colors = mean_colors

    @property
    def shape(self):
        return self.labels.shape


class DistanceField(object):

    def __init__(self, dist, seed_rows, seed_cols):
        self.dist = dist
        self.seed_rows = seed_rows
        self.seed_cols = seed_cols


class WatershedLabels(object):

    def __init__(self, labels, seed_rows, seed_cols):
        self.labels = labels
        self.seed_rows = seed_rows
        self.seed_cols = seed_cols

    @property
    def n_heads(self):
        return len(self.seed_rows)


class MrfConfig(object):
    ''' Parameters of the head segmentation MRF.

    Parameters
    ----------
    gamma : float
        Weight of the pairwise Potts term, >= 0.
    color_tau : float
        Bandwidth of the colour similarity, > 0 (RGB in [0, 1]).
    max_sweeps : int
        Maximum number of ICM sweeps.
    color_weight : float, optional
        Weight of the colour dissimilarity between a node and the seed node of a head, added
        to the head unary. 0 disables the colour cue.
    background_cost : float or None, optional
        Constant unary of an extra background label. None disables the background label.
    '''

    def __init__(self, gamma=MRF_GAMMA, color_tau=COLOR_TAU, max_sweeps=MAX_SWEEPS,
                 color_weight=0.0, background_cost=None):
        if gamma < 0:
            raise DomainError(f'gamma must be >= 0, got {gamma}')
        if not color_tau > 0:
            raise DomainError(f'color_tau must be > 0, got {color_tau}')
        if max_sweeps < 1:
            raise DomainError(f'max_sweeps must be positive, got {max_sweeps}')
        if color_weight < 0:
            raise DomainError(f'color_weight must be >= 0, got {color_weight}')
        self.gamma = float(gamma)
        self.color_tau = float(color_tau)
        self.max_sweeps = int(max_sweeps)
        self.color_weight = float(color_weight)
        self.background_cost = None if background_cost is None else float(background_cost)

    @classmethod
    def color_aware(cls, **kwargs):
        params = dict(color_weight=COLOR_WEIGHT, background_cost=BACKGROUND_COST)
        params.update(kwargs)
        return cls(**params)

    @property
    def uses_color(self):
        return self.color_weight > 0 or self.background_cost is not None


class HeadSegmentation(object):
    ''' Result of :func:`mrf_refine`.

    ``superpixel_labels`` holds the head id of every MRF node (-1 for background). Nodes are
    the superpixels, except that a superpixel holding several head seeds is split into its
    watershed parts; ``node_map`` gives the node of every pixel.
    '''

    def __init__(self, superpixel_labels, areas, energy_trace, node_map, node_sizes,
                 n_sweeps):
        self.superpixel_labels = superpixel_labels
        self.areas = areas
        self.energy_trace = energy_trace
        self.node_map = node_map
        self.node_sizes = node_sizes
        self.n_sweeps = n_sweeps

    @property
    def shape(self):
        return self.node_map.shape

    @property
    def label_image(self):
        return self.superpixel_labels[self.node_map]


def default_n_segments(shape, pixels_per_segment=PIXELS_PER_SEGMENT):
    return max(1, int(round(shape[0] * shape[1] / float(pixels_per_segment))))


def _as_rgb(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    if image.ndim != 3 or image.shape[2] < 3:
        raise AlignmentError(f'expected an H x W x 3 image, got shape {image.shape}')
    return image[..., :3]


def _mean_colors(image, labels, n_labels):
    flat = labels.ravel()
    counts = np.maximum(np.bincount(flat, minlength=n_labels), 1)
    return np.stack([np.bincount(flat, weights=image[..., c].ravel(), minlength=n_labels)
                     for c in range(3)], axis=1) / counts[:, None]


def _grid_centers(height, width, n_segments):
    ''' K grid-initialised centres: near-square cells, row counts as even as possible.'''
    n_rows = int(round(math.sqrt(n_segments * height / float(width))))
    n_rows = min(max(n_rows, 1, -(-n_segments // width)), n_segments, height)
    per_row = np.full(n_rows, n_segments // n_rows)
    per_row[:n_segments % n_rows] += 1
    centers, cells = [], []
    step_y = height / float(n_rows)
    for i, n_cols in enumerate(per_row):
        step_x = width / float(n_cols)
        r0, r1 = int(i * step_y), max(int((i + 1) * step_y), int(i * step_y) + 1)
        for j in range(n_cols):
            c0, c1 = int(j * step_x), max(int((j + 1) * step_x), int(j * step_x) + 1)
            centers.append(((i + 0.5) * step_y - 0.5, (j + 0.5) * step_x - 0.5))
            cells.append((slice(r0, r1), slice(c0, c1)))
    return np.array(centers), cells


def _assign(lab, clusters, step, compactness):
    height, width = lab.shape[:2]
    labels = -np.ones((height, width), dtype=np.int64)
    min_dist = np.full((height, width), np.inf)
    reach = int(math.ceil(2 * step))
    weight = (compactness / step) ** 2
    for idx, (cy, cx, L, a, b) in enumerate(clusters):
        r0, r1 = max(int(cy) - reach, 0), min(int(cy) + reach + 1, height)
        c0, c1 = max(int(cx) - reach, 0), min(int(cx) + reach + 1, width)
        if r0 >= r1 or c0 >= c1:
            continue
        sub = lab[r0:r1, c0:c1]
        ys, xs = np.ogrid[r0:r1, c0:c1]
        d2 = ((sub[..., 0] - L) ** 2 + (sub[..., 1] - a) ** 2 + (sub[..., 2] - b) ** 2
              + weight * ((ys - cy) ** 2 + (xs - cx) ** 2))
        update = d2 < min_dist[r0:r1, c0:c1]
        labels[r0:r1, c0:c1][update] = idx
        min_dist[r0:r1, c0:c1][update] = d2[update]

    orphans = np.flatnonzero(labels.ravel() < 0)
    if orphans.size:
        ys, xs = np.unravel_index(orphans, labels.shape)
        feats = np.column_stack([ys, xs, lab.reshape(-1, 3)[orphans]])
        scale = np.array([weight, weight, 1.0, 1.0, 1.0])
        d2 = (((feats[:, None, :] - clusters[None, :, :]) ** 2) * scale).sum(axis=2)
        labels.ravel()[orphans] = np.argmin(d2, axis=1)
    return labels


def _update(lab, labels, clusters):
    n_clusters = len(clusters)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n_clusters)
    ys, xs = np.indices(labels.shape)
    sums = np.stack([np.bincount(flat, weights=v.ravel(), minlength=n_clusters)
                     for v in (ys, xs, lab[..., 0], lab[..., 1], lab[..., 2])], axis=1)
    alive = counts > 0
    clusters = clusters.copy()
    clusters[alive] = sums[alive] / counts[alive, None]
    return clusters


def _enforce_connectivity(labels):
    ''' Keeps the largest 4-connected component of every label and merges every other
    component into the largest neighbouring segment. Returns contiguous labels.'''

    height, width = labels.shape
    comp = np.zeros_like(labels)
    owner, n_comp = [], 0
    for lab_id, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is None:
            continue
        mask = labels[sl] == lab_id
        cc, n = ndimage.label(mask)
        comp[sl][mask] = cc[mask] + n_comp - 1
        owner.extend([lab_id] * n)
        n_comp += n
    owner = np.array(owner)
    sizes = np.bincount(comp.ravel(), minlength=n_comp)

    main = {}
    for c in range(n_comp):
        if owner[c] not in main or sizes[c] > sizes[main[owner[c]]]:
            main[owner[c]] = c
    is_main = np.zeros(n_comp, dtype=bool)
    is_main[list(main.values())] = True
    orphans = [c for c in np.argsort(sizes, kind='stable') if not is_main[c]]
    if not orphans:
        return np.unique(labels, return_inverse=True)[1].reshape(labels.shape)

    parent = np.arange(n_comp)
    group_size = sizes.astype(np.int64)

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    slices = ndimage.find_objects(comp + 1)
    for o in orphans:
        sl = slices[o]
        rows = slice(max(sl[0].start - 1, 0), min(sl[0].stop + 1, height))
        cols = slice(max(sl[1].start - 1, 0), min(sl[1].stop + 1, width))
        sub = comp[rows, cols]
        mask = sub == o
        ring = ndimage.binary_dilation(mask) & ~mask
        roots = {find(c) for c in np.unique(sub[ring])} - {o}
        if not roots:
            members = [c for c in range(n_comp) if find(c) == o]
            mask = np.isin(comp, members)
            ring = ndimage.binary_dilation(mask) & ~mask
            roots = {find(c) for c in np.unique(comp[ring])} - {o}
        if not roots:
            continue
        target = min(roots, key=lambda r: (-group_size[r], r))
        parent[o] = target
        group_size[target] += group_size[o]

    roots = np.array([find(c) for c in range(n_comp)])
    return np.unique(roots[comp], return_inverse=True)[1].reshape(labels.shape)


def slic_segment(image, n_segments=None, compactness=COMPACTNESS, n_iter=SLIC_ITERATIONS):
    ''' SLIC superpixels.

    Cluster centres start on a regular grid and are refined by k-means in the joint CIELAB
    colour and position space, a pixel being compared only with the centres within two grid
    steps. Every segment is made 4-connected at the end.

    Parameters
    ----------
    image : array_like
        H x W x 3 RGB image with values in [0, 1].
    n_segments : int, optional
        Number of grid centres K, H*W/400 by default.
    compactness : float, optional
        Weight of the spatial distance against the Lab colour distance.
    n_iter : int, optional
        Number of assignment/update iterations.

    Returns
    -------
    superpixels : SuperpixelMap
        Contiguous labels with per-segment mean RGB colours.
    '''

    image = _as_rgb(image)
    height, width = image.shape[:2]
    if n_segments is None:
        n_segments = default_n_segments((height, width))
    n_segments = int(n_segments)
    if n_segments < 1 or n_segments > height * width:
        raise DomainError(f'number of superpixels must be in [1, {height * width}], '
                          f'got {n_segments}')

    if n_segments == 1:
        labels = np.zeros((height, width), dtype=np.int64)
        return SuperpixelMap(labels, _mean_colors(image, labels, 1))

    lab = color.rgb2lab(np.clip(image, 0.0, 1.0))
    centers, cells = _grid_centers(height, width, n_segments)
    clusters = np.column_stack([centers, [lab[cell].reshape(-1, 3).mean(axis=0)
                                          for cell in cells]])
    step = math.sqrt(height * width / float(n_segments))
    labels = None
    for _ in range(max(int(n_iter), 1)):
        labels = _assign(lab, clusters, step, compactness)
        clusters = _update(lab, labels, clusters)

    labels = _enforce_connectivity(labels)
    return SuperpixelMap(labels, _mean_colors(image, labels, labels.max() + 1))


def head_seeds(annotations):
    ''' Rounded head locations as (rows, cols), duplicates shifted +1 px in x with wrap.'''

    height, width = annotations.image_size
    if len(annotations) > height * width:
        raise DomainError('more heads than pixels')
    cols = np.clip(np.floor(annotations.xs + 0.5), 0, width - 1).astype(np.int64)
    rows = np.clip(np.floor(annotations.ys + 0.5), 0, height - 1).astype(np.int64)
    taken = set()
    n_moved = 0
    for k in range(len(cols)):
        if (rows[k], cols[k]) in taken:
            n_moved += 1
            while (rows[k], cols[k]) in taken:
                cols[k] = (cols[k] + 1) % width
        taken.add((rows[k], cols[k]))
    if n_moved:
        logger.warning('%d duplicate head seeds shifted in x', n_moved)
    return rows, cols


def distance_transform(annotations):
    ''' Exact Euclidean distance of every pixel to the nearest rounded head location.

    Parameters
    ----------
    annotations : AnnotationSet
        At least one head.

    Returns
    -------
    field : DistanceField
    '''

    if len(annotations) == 0:
        raise DomainError('distance transform of an empty annotation set')
    rows, cols = head_seeds(annotations)
    background = np.ones(annotations.image_size, dtype=bool)
    background[rows, cols] = False
    dist = ndimage.distance_transform_edt(background)
    return DistanceField(np.asarray(dist, dtype=np.float64), rows, cols)


def _closest_flooded_seed(r, c, labels, seed_rows, seed_cols, key, reach=2):
    ''' Nearest seed (then lowest id) among the pixels already flooded within ``reach``.'''
    window = labels[max(r - reach, 0):r + reach + 1, max(c - reach, 0):c + reach + 1]
    for k in np.unique(window[window >= 0]):
        key = min(key, (math.sqrt((r - seed_rows[k]) ** 2 + (c - seed_cols[k]) ** 2), int(k)))
    return key[1]


def seeded_watershed(field, annotations):
    ''' Seeded watershed of the head distance transform.

    A priority flood starts from the head seeds and visits pixels in increasing order of
    ``field``, ties broken by (row, column). A pixel reached by several fronts takes the seed
    nearest to it, ties going to the lower seed id. When the field shows that a closer seed
    exists, the seeds already flooded within two pixels compete as well. On an exact
    Euclidean field the result is the nearest-seed partition.

    Parameters
    ----------
    field : DistanceField
        Output of :func:`distance_transform` for the same annotations.
    annotations : AnnotationSet
        Head locations.

    Returns
    -------
    labels : WatershedLabels
    '''

    dist = field.dist
    height, width = dist.shape
    if (height, width) != tuple(annotations.image_size):
        raise AlignmentError('distance field and annotations cover different grids')
    seed_rows, seed_cols = head_seeds(annotations)
    labels = -np.ones((height, width), dtype=np.int64)
    # best (seed distance, seed id) pushed so far for every pixel
    best = {}
    heap = [(float(dist[r, c]), int(r), int(c), 0.0, k)
            for k, (r, c) in enumerate(zip(seed_rows, seed_cols))]
    heapq.heapify(heap)
    while heap:
        _, r, c, d, k = heapq.heappop(heap)
        if labels[r, c] >= 0:
            continue
        if d > dist[r, c] + 1e-9:
            # the nearest seed reaches this pixel through a gap in its region
            k = _closest_flooded_seed(r, c, labels, seed_rows, seed_cols, (d, k))
        labels[r, c] = k
        sr, sc = seed_rows[k], seed_cols[k]
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < height and 0 <= cc < width and labels[rr, cc] < 0:
                key = (math.sqrt((rr - sr) ** 2 + (cc - sc) ** 2), k)
                if key < best.get((rr, cc), (math.inf, 0)):
                    best[(rr, cc)] = key
                    heapq.heappush(heap, (float(dist[rr, cc]), rr, cc) + key)
    return WatershedLabels(labels, seed_rows, seed_cols)


def _build_nodes(sp, ws):
    n_heads = ws.n_heads
    seed_sp = sp.labels[ws.seed_rows, ws.seed_cols]
    crowded = np.flatnonzero(np.bincount(seed_sp, minlength=sp.n_segments) > 1)
    split = np.isin(sp.labels, crowded)
    key = sp.labels * (n_heads + 1) + np.where(split, ws.labels + 1, 0)
    node_map = np.unique(key, return_inverse=True)[1].reshape(key.shape)
    return node_map


def _adjacency(node_map):
    pairs = np.concatenate([
        np.column_stack([node_map[:, :-1].ravel(), node_map[:, 1:].ravel()]),
        np.column_stack([node_map[:-1, :].ravel(), node_map[1:, :].ravel()])])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    return pairs


def mrf_energy(labels, unary, pairs, weights, gamma):
    ''' Potts energy sum_p U_p(L_p) + gamma sum_(p,q) w_pq [L_p != L_q].'''
    energy = unary[np.arange(len(labels)), labels].sum()
    if len(pairs):
        energy += gamma * weights[labels[pairs[:, 0]] != labels[pairs[:, 1]]].sum()
    return float(energy)


def mrf_refine(sp, ws, image, cfg=None):
    ''' Fuses superpixels and watershed regions in a Potts MRF solved by ICM.

    The unary of head l at node p is one minus the fraction of p's pixels the watershed gives
    to l; neighbouring nodes are coupled with weight exp(-|c_p - c_q|^2 / color_tau^2) of
    their mean colours. Nodes holding a head seed are frozen to that head. ICM visits nodes
    in index order, starting from the unary minimum, until a sweep changes nothing or
    ``max_sweeps`` is reached.

    Parameters
    ----------
    sp : SuperpixelMap
        Superpixels of ``image``.
    ws : WatershedLabels
        Watershed of the head distance transform.
    image : array_like
        H x W x 3 RGB image in [0, 1].
    cfg : MrfConfig, optional
        Energy parameters, defaults otherwise.

    Returns
    -------
    segmentation : HeadSegmentation
    '''

    if cfg is None:
        cfg = MrfConfig()
    n_heads = ws.n_heads
    if n_heads == 0:
        raise DomainError('MRF head segmentation needs at least one head')
    image = _as_rgb(image)
    if sp.labels.shape != ws.labels.shape or image.shape[:2] != sp.labels.shape:
        raise AlignmentError('superpixels, watershed and image cover different grids')

    node_map = _build_nodes(sp, ws)
    n_nodes = int(node_map.max()) + 1
    flat = node_map.ravel()
    sizes = np.bincount(flat, minlength=n_nodes)
    overlap = np.bincount(flat * n_heads + ws.labels.ravel(),
                          minlength=n_nodes * n_heads).reshape(n_nodes, n_heads)
    unary = 1.0 - overlap / sizes[:, None].astype(np.float64)
    colors = _mean_colors(image, node_map, n_nodes)

    frozen = -np.ones(n_nodes, dtype=np.int64)
    seed_nodes = node_map[ws.seed_rows, ws.seed_cols]
    frozen[seed_nodes] = np.arange(n_heads)

    tau2 = cfg.color_tau ** 2
    if cfg.color_weight > 0:
        d2 = ((colors[:, None, :] - colors[seed_nodes][None, :, :]) ** 2).sum(axis=2)
        unary = unary + cfg.color_weight * (1.0 - np.exp(-d2 / tau2))
    if cfg.background_cost is not None:
        unary = np.column_stack([unary, np.full(n_nodes, cfg.background_cost)])
    n_labels = unary.shape[1]

    pairs = _adjacency(node_map)
    weights = np.exp(-((colors[pairs[:, 0]] - colors[pairs[:, 1]]) ** 2).sum(axis=1) / tau2)
    # directed edge lists grouped by source node
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    wgt = np.concatenate([weights, weights])
    order = np.argsort(src, kind='stable')
    src, dst, wgt = src[order], dst[order], wgt[order]
    bounds = np.searchsorted(src, np.arange(n_nodes + 1))

    labels = np.argmin(unary, axis=1)
    labels[seed_nodes] = np.arange(n_heads)
    trace = [mrf_energy(labels, unary, pairs, weights, cfg.gamma)]
    n_sweeps = 0
    for n_sweeps in range(1, cfg.max_sweeps + 1):
        changed = 0
        for p in range(n_nodes):
            if frozen[p] >= 0:
                continue
            cost = unary[p]
            lo, hi = bounds[p], bounds[p + 1]
            if cfg.gamma > 0 and hi > lo:
                w = wgt[lo:hi]
                agree = np.bincount(labels[dst[lo:hi]], weights=w, minlength=n_labels)
                cost = cost + cfg.gamma * (w.sum() - agree)
            best = int(np.argmin(cost))
            if cost[best] < cost[labels[p]] - 1e-12:
                labels[p] = best
                changed += 1
        trace.append(mrf_energy(labels, unary, pairs, weights, cfg.gamma))
        if changed == 0:
            break

    head_of_node = np.where(labels < n_heads, labels, -1)
    areas = np.bincount(head_of_node[head_of_node >= 0],
                        weights=sizes[head_of_node >= 0], minlength=n_heads)
    logger.debug('MRF converged after %d sweeps, energy %.4f', n_sweeps, trace[-1])
    return HeadSegmentation(head_of_node, areas, trace, node_map, sizes, n_sweeps)


def estimate_sigmas_mrf(seg, kappa=KAPPA):
    ''' sigma_h = clip(kappa * sqrt(area_h), sigma_min, sigma_max).'''
    sigmas = clip_sigmas(kappa * np.sqrt(seg.areas), seg.shape)
    return SigmaAssignment(sigmas, SIGMA_MRF)


def estimate_sigmas_knn(annotations, k=KNN_K, beta=KNN_BETA, sigma0=SIGMA0):
    ''' Scale proportional to the mean distance to the k nearest other heads.

    Parameters
    ----------
    annotations : AnnotationSet
        Head locations.
    k : int, optional
        Number of neighbours, truncated to n - 1.
    beta : float, optional
        Proportionality factor.
    sigma0 : float, optional
        Constant scale used when fewer than two heads are annotated.

    Returns
    -------
    sigmas : SigmaAssignment
    '''

    if k < 1:
        raise DomainError(f'k must be positive, got {k}')
    n = len(annotations)
    if n < 2:
        return estimate_sigmas_constant(annotations, sigma0)
    k = min(int(k), n - 1)
    dist, _ = cKDTree(annotations.points).query(annotations.points, k=k + 1)
    sigmas = beta * dist.reshape(n, k + 1)[:, 1:].mean(axis=1)
    return SigmaAssignment(clip_sigmas(sigmas, annotations.image_size), SIGMA_KNN)


def estimate_sigmas_constant(annotations, sigma0=SIGMA0):
    if not sigma0 > 0:
        raise DomainError(f'sigma0 must be > 0, got {sigma0}')
    return SigmaAssignment(np.full(len(annotations), float(sigma0)), SIGMA_CONSTANT)


def segment_heads(image, annotations, n_segments=None, compactness=COMPACTNESS,
                  n_iter=SLIC_ITERATIONS, cfg=None):
    ''' SLIC, distance transform, watershed and MRF in one call.'''
    if cfg is None:
        cfg = MrfConfig()
    image = _as_rgb(image)
    if image.shape[:2] != tuple(annotations.image_size):
        raise AlignmentError(f'image of shape {image.shape[:2]} for annotations of size '
                             f'{annotations.image_size}')
    if n_segments is None:
        per_segment = COLOR_AWARE_PIXELS_PER_SEGMENT if cfg.uses_color else PIXELS_PER_SEGMENT
        n_segments = default_n_segments(image.shape[:2], per_segment)
    sp = slic_segment(image, n_segments, compactness, n_iter)
    field = distance_transform(annotations)
    ws = seeded_watershed(field, annotations)
    return mrf_refine(sp, ws, image, cfg)


def estimate_sigmas(annotations, method, image=None, sigma0=SIGMA0, k=KNN_K,
                    beta=KNN_BETA, kappa=KAPPA, n_segments=None, compactness=COMPACTNESS,
                    n_iter=SLIC_ITERATIONS, mrf=None):
    ''' Estimates head scales with one of ``constant``, ``knn`` or ``mrf``.'''

    if method == SIGMA_CONSTANT:
        return estimate_sigmas_constant(annotations, sigma0)
    if method == SIGMA_KNN:
        return estimate_sigmas_knn(annotations, k, beta, sigma0)
    if method == SIGMA_MRF:
        if image is None:
            raise DomainError('the mrf method needs the image')
        if len(annotations) == 0:
            return SigmaAssignment([], SIGMA_MRF)
        seg = segment_heads(image, annotations, n_segments, compactness, n_iter, mrf)
        return estimate_sigmas_mrf(seg, kappa)
    raise DomainError(f'unknown scale estimation method {method}')


def render_scales(image, annotations, sigmas, segmentation=None,
                  circle_color=(1.0, 0.1, 0.1)):
    ''' Draws a circle of radius 2 sigma around every head (and the MRF segment borders).

    Returns
    -------
    overlay : array
        H x W x 3 float RGB image.
    '''

    overlay = _as_rgb(image).copy()
    height, width = overlay.shape[:2]
    sig = sigmas.sigmas if isinstance(sigmas, SigmaAssignment) else np.asarray(sigmas)
    if len(sig) != len(annotations):
        raise AlignmentError(f'{len(sig)} sigmas for {len(annotations)} annotations')
    if segmentation is not None:
        borders = find_boundaries(segmentation.label_image, mode='inner')
        overlay[borders] = (1.0, 1.0, 0.0)
    for (x, y), s in zip(annotations.points, sig):
        rr, cc = draw.circle_perimeter(int(round(y)), int(round(x)), max(int(round(2 * s)), 1),
                                       shape=(height, width))
        overlay[rr, cc] = circle_color
    return overlay
