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
Reading and writing of the pyMBTTBF files and the synthetic crowd scene generator.

File formats
------------
* Annotations: JSON ``{"image_size": [H, W], "points": [[x, y], ...]}``.
* Head scales: JSON ``{"method": "knn", "sigmas": [...]}``, named ``<stem>.sigmas.json``.
* Density maps: raw little-endian float32 row-major payload plus a JSON sidecar
  ``<payload>.json`` holding ``height``, ``width`` and ``stride``.
* Manifests: JSON ``{"split": "train", "entries": [{"image": ..., "annotations": ...}]}``
  with paths relative to the manifest.
* Images: 8-bit RGB PNG.

Synthetic scenes are dark soft-edged discs on a textured background. Head radii grow
linearly with the image row under a perspective gain and heads crowd where they are small.

PACKAGE CONTENTS
================
* :class:`Sample` Image, annotations and scales of one scene.
* :class:`DatasetManifest` Ordered image/annotation pairs of one split.
* :class:`SyntheticSceneSpec` Parameters of a synthetic scene.
* :func:`load_annotations` / :func:`save_annotations`
* :func:`load_image` / :func:`save_image`
* :func:`load_density` / :func:`save_density`
* :func:`load_sigmas` / :func:`save_sigmas`
* :func:`load_manifest` / :func:`save_manifest`
* :func:`load_samples` Samples of a manifest.
* :func:`generate_synthetic_scene` One synthetic scene with its true radii.
* :func:`generate_synthetic_dataset` A synthetic split written to disk.
'''

from collections import OrderedDict, namedtuple
import json
import logging
import math
import os

import numpy as np
from scipy import ndimage
from skimage import color, io, util

from . import density_utils as du
from .exceptions import (AnnotationParseError, DensityFormatError, DomainError, FormatError,
                         GenerationError, ManifestError)

logger = logging.getLogger(__name__)

# ==============================================================================
# List of constants used in the file formats and the scene generator
# ==============================================================================
SPLITS = ('train', 'val', 'test')
SIGMA_SUFFIX = '.sigmas.json'
SIDECAR_SUFFIX = '.json'
DENSITY_DTYPE = '<f4'

# Head centres stay this many pixels inside the image border
BORDER_MARGIN = 2
# Placement attempts per head before giving up
PLACEMENT_RETRIES = 500
MIN_RADIUS = 2.0
# Radius jitter, as a fraction of the perspective slope
RADIUS_JITTER = 0.05
# Background and head colours (RGB in [0, 1])
BACKGROUND_COLOR = (0.72, 0.68, 0.58)
HEAD_COLOR = (0.16, 0.12, 0.10)
HEAD_COLOR_SPREAD = 0.08
# Texture contrast at clutter_level 1 and its correlation length in pixels
CLUTTER_CONTRAST = 0.2
CLUTTER_SCALE = 1.5

Sample = namedtuple('Sample', ['image', 'annotations', 'sigmas', 'name'])
Sample.__new__.__defaults__ = (None, '')

ManifestEntry = namedtuple('ManifestEntry', ['image', 'annotations'])


class DatasetManifest(object):
    ''' Image/annotation pairs of one split, sorted by image path.

    Parameters
    ----------
    entries : list
        ManifestEntry (or (image, annotations)) pairs with absolute paths.
    split : str
        ``train``, ``val`` or ``test``.
    '''

    def __init__(self, entries, split='train'):
        if split not in SPLITS:
            raise ManifestError(f'unknown split {split!r}, expected one of {SPLITS}')
        self.split = split
        self.entries = sorted(ManifestEntry(*e) for e in entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def __repr__(self):
        return f'DatasetManifest(split={self.split!r}, n={len(self)})'


class SyntheticSceneSpec(object):
    ''' Synthetic crowd scene parameters.

    Parameters
    ----------
    image_size : tuple
        (height, width) in pixels.
    n_heads : int
        Number of heads.
    size_range : tuple
        (r_min, r_max) head radius range in pixels, r_min >= 2.
    perspective_gain : float
        Slope in [0, 1] of the radius against the image row. The radius grows linearly from
        r_mid - g (r_max - r_min) / 2 at the top row to r_mid + g (r_max - r_min) / 2 at the
        bottom row, r_mid the middle of ``size_range``. At 0 every head has radius r_mid.
    clutter_level : float
        Background texture contrast in [0, 1].
    rng_seed : int
        Seed of every random draw.
    '''

    def __init__(self, image_size=(64, 64), n_heads=20, size_range=(2.0, 5.0),
                 perspective_gain=0.8, clutter_level=0.3, rng_seed=0):
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.n_heads = int(n_heads)
        self.size_range = (float(size_range[0]), float(size_range[1]))
        self.perspective_gain = float(perspective_gain)
        self.clutter_level = float(clutter_level)
        self.rng_seed = int(rng_seed)
        if min(self.image_size) <= 2 * BORDER_MARGIN:
            raise DomainError(f'image size {self.image_size} leaves no room inside the border')
        if self.n_heads < 0:
            raise DomainError(f'n_heads must be non-negative, got {n_heads}')
        r_min, r_max = self.size_range
        if r_min < MIN_RADIUS or r_max < r_min:
            raise DomainError(f'invalid size range {self.size_range}, need {MIN_RADIUS} <= '
                              'r_min <= r_max')
        if not 0 <= self.perspective_gain <= 1:
            raise DomainError(f'perspective_gain must lie in [0, 1], got {perspective_gain}')
        if not 0 <= self.clutter_level <= 1:
            raise DomainError(f'clutter_level must lie in [0, 1], got {clutter_level}')

    def to_dict(self):
        return OrderedDict([('image_size', list(self.image_size)), ('n_heads', self.n_heads),
                            ('size_range', list(self.size_range)),
                            ('perspective_gain', self.perspective_gain),
                            ('clutter_level', self.clutter_level), ('rng_seed', self.rng_seed)])

    def replace(self, **kwargs):
        params = self.to_dict()
        params.update(kwargs)
        return SyntheticSceneSpec(**params)

    def expected_radius(self, y):
        ''' Radius of the perspective model at image row ``y``.'''
        r_min, r_max = self.size_range
        t = np.asarray(y, dtype=np.float64) / (self.image_size[0] - 1) - 0.5
        return 0.5 * (r_min + r_max) + self.perspective_gain * (r_max - r_min) * t

    def __repr__(self):
        return 'SyntheticSceneSpec(' + ', '.join(f'{k}={v!r}' for k, v in self.to_dict().items()) + ')'


def _read_json(path, error):
    with open(path, 'r') as fid:
        try:
            return json.load(fid)
        except ValueError as e:
            raise error(e)


def _write_json(path, document):
    with open(path, 'w') as fid:
        json.dump(document, fid, indent=1)


def load_annotations(path):
    ''' Reads the head points of one image.

    Points outside the image are clamped to the border and counted in ``n_clamped``.

    Parameters
    ----------
    path : str
        Annotation JSON file.

    Returns
    -------
    annotations : AnnotationSet
        Points in file order.

    Raises
    ------
    AnnotationParseError
        Naming the offending entry, e.g. ``points[3]``.
    '''

    document = _read_json(path, lambda e: AnnotationParseError(path, 'document', str(e)))
    if not isinstance(document, dict):
        raise AnnotationParseError(path, 'document', 'expected a JSON object')
    size = document.get('image_size')
    if (not isinstance(size, list) or len(size) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in size)):
        raise AnnotationParseError(path, 'image_size', 'expected [height, width] positive ints')
    points = document.get('points')
    if not isinstance(points, list):
        raise AnnotationParseError(path, 'points', 'expected a list of [x, y] pairs')
    xy = np.zeros((len(points), 2))
    for i, point in enumerate(points):
        if (not isinstance(point, list) or len(point) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           and math.isfinite(v) for v in point)):
            raise AnnotationParseError(path, f'points[{i}]', f'expected [x, y], got {point!r}')
        xy[i] = point
    height, width = size
    clamped = np.clip(xy, 0, [width - 1, height - 1])
    n_clamped = int(np.count_nonzero(np.any(clamped != xy, axis=1)))
    if n_clamped:
        logger.warning('%s: %d points clamped to the image border', path, n_clamped)
    return du.AnnotationSet(clamped, (height, width), n_clamped)


def save_annotations(annotations, path, **extra):
    ''' Writes an annotation file; ``extra`` keys are stored alongside.'''
    document = OrderedDict([('image_size', list(annotations.image_size)),
                            ('points', annotations.points.tolist())])
    document.update(extra)
    _write_json(path, document)


def load_image(path):
    ''' RGB image as a float array in [0, 1].'''
    image = io.imread(path)
    if image.ndim == 2:
        image = color.gray2rgb(image)
    elif image.shape[-1] == 4:
        image = image[..., :3]
    return util.img_as_float(image)


def save_image(path, image):
    image = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    io.imsave(path, util.img_as_ubyte(image), check_contrast=False)


def save_density(path, density):
    ''' Writes the float32 payload to ``path`` and its sidecar to ``path + '.json'``.'''
    grid = np.ascontiguousarray(density.grid, dtype=DENSITY_DTYPE)
    with open(path, 'wb') as fid:
        fid.write(grid.tobytes(order='C'))
    height, width = grid.shape
    _write_json(path + SIDECAR_SUFFIX, OrderedDict([('height', height), ('width', width),
                                                    ('stride', density.stride)]))


def load_density(path):
    ''' Reads a density map written by :func:`save_density`.

    Raises
    ------
    DensityFormatError
        When the sidecar is malformed or disagrees with the payload size.
    '''

    sidecar = _read_json(path + SIDECAR_SUFFIX,
                         lambda e: DensityFormatError(f'{path}: bad sidecar: {e}'))
    try:
        height, width, stride = (int(sidecar[k]) for k in ('height', 'width', 'stride'))
    except (KeyError, TypeError, ValueError) as e:
        raise DensityFormatError(f'{path}: sidecar needs integer height, width and stride ({e})')
    with open(path, 'rb') as fid:
        payload = fid.read()
    expected = height * width * np.dtype(DENSITY_DTYPE).itemsize
    if len(payload) != expected:
        raise DensityFormatError(f'{path}: payload holds {len(payload)} bytes, sidecar '
                                 f'{height}x{width} needs {expected}')
    grid = np.frombuffer(payload, dtype=DENSITY_DTYPE).reshape(height, width).copy()
    return du.DensityMap(grid, stride)


def sigma_path(annotation_path, sigma_dir=None):
    ''' ``<stem>.sigmas.json`` in ``sigma_dir``, or next to the annotation file.'''
    stem = os.path.splitext(os.path.basename(annotation_path))[0]
    folder = sigma_dir if sigma_dir else os.path.dirname(annotation_path)
    return os.path.join(folder, stem + SIGMA_SUFFIX)


def save_sigmas(path, assignment):
    _write_json(path, OrderedDict([('method', assignment.method),
                                   ('sigmas', assignment.sigmas.tolist())]))


def load_sigmas(path):
    document = _read_json(path, lambda e: FormatError(f'{path}: {e}'))
    try:
        return du.SigmaAssignment(document['sigmas'], document['method'])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f'{path}: expected {{"method", "sigmas"}} ({e})')


def load_manifest(path, check=True):
    ''' Reads a manifest and resolves its paths against the manifest folder.

    Raises
    ------
    ManifestError
        On a malformed document or, with ``check``, files that do not exist.
    '''

    document = _read_json(path, lambda e: ManifestError(f'{path}: {e}'))
    try:
        split = document['split']
        pairs = [(e['image'], e['annotations']) for e in document['entries']]
    except (KeyError, TypeError) as e:
        raise ManifestError(f'{path}: expected {{"split", "entries": [{{"image", '
                            f'"annotations"}}]}} ({e})')
    root = os.path.dirname(os.path.abspath(path))
    entries = [ManifestEntry(os.path.normpath(os.path.join(root, image)),
                             os.path.normpath(os.path.join(root, annotations)))
               for image, annotations in pairs]
    if check:
        missing = [f for entry in entries for f in entry if not os.path.isfile(f)]
        if missing:
            raise ManifestError(f'{path}: missing files: ' + ', '.join(missing))
    return DatasetManifest(entries, split)


def save_manifest(manifest, path):
    root = os.path.dirname(os.path.abspath(path))
    entries = [OrderedDict([('image', os.path.relpath(e.image, root)),
                            ('annotations', os.path.relpath(e.annotations, root))])
               for e in manifest]
    _write_json(path, OrderedDict([('split', manifest.split), ('entries', entries)]))


def load_samples(manifest, sigma_dir=None, require_sigmas=False):
    ''' Loads the images, annotations and, when present, the scale files of a manifest.'''
    samples = []
    for entry in manifest:
        annotations = load_annotations(entry.annotations)
        sigmas = None
        path = sigma_path(entry.annotations, sigma_dir)
        if os.path.isfile(path):
            sigmas = load_sigmas(path)
        elif require_sigmas:
            raise FileNotFoundError(f'no scale file {path}')
        name = os.path.splitext(os.path.basename(entry.image))[0]
        samples.append(Sample(load_image(entry.image), annotations, sigmas, name))
    return samples


def _background(spec, rng):
    height, width = spec.image_size
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width, 3)),
                                      sigma=(CLUTTER_SCALE, CLUTTER_SCALE, 0))
    texture /= max(texture.std(), 1e-12)
    return (np.asarray(BACKGROUND_COLOR)
            + spec.clutter_level * CLUTTER_CONTRAST * texture)


def _place_heads(spec, rng):
    ''' Centres and radii without overlap; rows drawn with density 1 / expected radius^2.'''

    height, width = spec.image_size
    r_min, r_max = spec.size_range
    rows = np.arange(BORDER_MARGIN, height - BORDER_MARGIN)
    weights = 1.0 / spec.expected_radius(rows) ** 2
    weights /= weights.sum()
    centres = np.zeros((0, 2))
    radii = np.zeros(0)
    for i in range(spec.n_heads):
        for _ in range(PLACEMENT_RETRIES):
            y = np.clip(rng.choice(rows, p=weights) + rng.uniform(-0.5, 0.5),
                        BORDER_MARGIN, height - 1 - BORDER_MARGIN)
            x = rng.uniform(BORDER_MARGIN, width - 1 - BORDER_MARGIN)
            jitter = RADIUS_JITTER * rng.uniform(-1, 1)
            r = spec.expected_radius(y) + spec.perspective_gain * (r_max - r_min) * jitter
            r = min(max(r, r_min), r_max)
            gaps = np.hypot(centres[:, 0] - x, centres[:, 1] - y) - radii
            if np.all(gaps >= r):
                centres = np.vstack([centres, [x, y]])
                radii = np.append(radii, r)
                break
        else:
            raise GenerationError(f'placed {i} of {spec.n_heads} heads, no room for the next '
                                  f'after {PLACEMENT_RETRIES} attempts')
    return centres, radii


def generate_synthetic_scene(spec):
    ''' Renders a synthetic crowd scene.

    Parameters
    ----------
    spec : SyntheticSceneSpec

    Returns
    -------
    image : array
        H x W x 3 float image in [0, 1].
    annotations : AnnotationSet
        Head centres.
    radii : array
        True head radii in pixels, aligned with ``annotations``.

    Raises
    ------
    GenerationError
        When the heads cannot be placed without overlap.
    '''

    rng = np.random.default_rng(spec.rng_seed)
    image = _background(spec, rng)
    centres, radii = _place_heads(spec, rng)
    rows, cols = np.mgrid[0:spec.image_size[0], 0:spec.image_size[1]]
    for (x, y), r in zip(centres, radii):
        tone = np.asarray(HEAD_COLOR) + HEAD_COLOR_SPREAD * rng.random(3)
        # one pixel wide soft edge
        alpha = np.clip(r + 0.5 - np.hypot(cols - x, rows - y), 0, 1)[..., None]
        image = image * (1 - alpha) + tone * alpha
    return np.clip(image, 0, 1), du.AnnotationSet(centres, spec.image_size), radii


def generate_synthetic_dataset(n_scenes, spec, out_dir, split='train', count_range=None):
    ''' Writes ``n_scenes`` scenes and their manifest.

    Scene ``i`` is rendered from ``spec`` with a seed derived from (spec.rng_seed, i). With
    ``count_range`` = (lo, hi) every scene draws its head count uniformly in [lo, hi].
    Images and annotations (true radii included under ``radii``) go to ``out_dir/<split>/``,
    the manifest to ``out_dir/<split>_manifest.json``.

    Returns
    -------
    manifest : DatasetManifest
    '''

    folder = os.path.join(out_dir, split)
    os.makedirs(folder, exist_ok=True)
    entries = []
    for i in range(int(n_scenes)):
        seed = int(np.random.SeedSequence([spec.rng_seed, i]).generate_state(1)[0])
        scene = spec.replace(rng_seed=seed)
        if count_range is not None:
            lo, hi = count_range
            scene = scene.replace(n_heads=int(np.random.default_rng(seed).integers(lo, hi + 1)))
        image, annotations, radii = generate_synthetic_scene(scene)
        stem = os.path.join(folder, f'scene_{i:04d}')
        save_image(stem + '.png', image)
        save_annotations(annotations, stem + '.json', radii=radii.tolist())
        entries.append(ManifestEntry(os.path.abspath(stem + '.png'),
                                     os.path.abspath(stem + '.json')))
    manifest = DatasetManifest(entries, split)
    save_manifest(manifest, os.path.join(out_dir, f'{split}_manifest.json'))
    logger.info('Saved %d %s scenes in %s', len(entries), split, folder)
    return manifest
