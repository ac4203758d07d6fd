import json
import os

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from pyMBTTBF import data_io
from pyMBTTBF import density_utils as du
from pyMBTTBF.exceptions import (AnnotationParseError, DensityFormatError, DomainError,
                                 GenerationError, ManifestError)


def write_json(path, document):
    with open(path, 'w') as fid:
        json.dump(document, fid)
    return str(path)


def test_load_annotations(tmp_path):
    path = write_json(tmp_path / 'a.json', {'image_size': [4, 10],
                                            'points': [[1.5, 2.0], [0, 0], [9, 3]]})
    annotations = data_io.load_annotations(path)
    npt.assert_array_equal(annotations.points, [[1.5, 2.0], [0, 0], [9, 3]])
    assert annotations.image_size == (4, 10)
    assert annotations.n_clamped == 0


def test_load_annotations_clamps(tmp_path):
    path = write_json(tmp_path / 'a.json', {'image_size': [5, 10],
                                            'points': [[12, 3], [-1, 7], [2, 2]]})
    annotations = data_io.load_annotations(path)
    npt.assert_array_equal(annotations.points, [[9, 3], [0, 4], [2, 2]])
    assert annotations.n_clamped == 2


def test_load_annotations_empty(tmp_path):
    path = write_json(tmp_path / 'a.json', {'image_size': [8, 8], 'points': []})
    assert len(data_io.load_annotations(path)) == 0


@pytest.mark.parametrize('document, entry', [
    ({'image_size': [8, 8], 'points': [[1, 1], [2, 2], [3, 3], ['x', 4]]}, 'points[3]'),
    ({'image_size': [8, 8], 'points': [[1, 1], [2]]}, 'points[1]'),
    ({'image_size': [8, 8], 'points': [[1, True]]}, 'points[0]'),
    ({'image_size': [8], 'points': []}, 'image_size'),
    ({'image_size': [8, 8]}, 'points'),
    ([1, 2], 'document'),
])
def test_load_annotations_errors(tmp_path, document, entry):
    path = write_json(tmp_path / 'a.json', document)
    with pytest.raises(AnnotationParseError) as info:
        data_io.load_annotations(path)
    assert info.value.entry == entry
    assert entry in str(info.value)


def test_load_annotations_not_json(tmp_path):
    path = tmp_path / 'a.json'
    path.write_text('{"image_size": [8, 8], "points": [')
    with pytest.raises(AnnotationParseError):
        data_io.load_annotations(str(path))


def test_save_annotations_extra_keys(tmp_path):
    annotations = du.AnnotationSet([[1, 2], [3, 4]], (6, 6))
    path = str(tmp_path / 'a.json')
    data_io.save_annotations(annotations, path, radii=[2.0, 3.0])
    with open(path) as fid:
        assert json.load(fid)['radii'] == [2.0, 3.0]
    npt.assert_array_equal(data_io.load_annotations(path).points, annotations.points)


def test_density_file(tmp_path):
    grid = np.arange(12, dtype=np.float64).reshape(3, 4) / 7
    path = str(tmp_path / 'd.raw')
    data_io.save_density(path, du.DensityMap(grid, stride=4))
    assert os.path.getsize(path) == 12 * 4
    with open(path + '.json') as fid:
        assert json.load(fid) == {'height': 3, 'width': 4, 'stride': 4}
    density = data_io.load_density(path)
    assert density.stride == 4
    assert density.grid.dtype == np.float32
    npt.assert_array_equal(density.grid, grid.astype(np.float32))


def test_density_file_tampered(tmp_path):
    path = str(tmp_path / 'd.raw')
    data_io.save_density(path, du.DensityMap(np.ones((3, 4))))
    with open(path, 'ab') as fid:
        fid.write(b'\0\0\0\0')
    with pytest.raises(DensityFormatError):
        data_io.load_density(path)
    write_json(path + '.json', {'height': 3, 'width': 'four', 'stride': 1})
    with pytest.raises(DensityFormatError):
        data_io.load_density(path)


def test_sigma_files(tmp_path):
    assert data_io.sigma_path('/data/a/img_01.json') == '/data/a/img_01.sigmas.json'
    assert data_io.sigma_path('/data/a/img_01.json', '/s') == '/s/img_01.sigmas.json'
    path = str(tmp_path / 'img.sigmas.json')
    data_io.save_sigmas(path, du.SigmaAssignment([1.5, 2.0], du.SIGMA_KNN))
    sigmas = data_io.load_sigmas(path)
    assert sigmas.method == du.SIGMA_KNN
    npt.assert_array_equal(sigmas.sigmas, [1.5, 2.0])


def make_files(folder, stems):
    for stem in stems:
        data_io.save_image(str(folder / f'{stem}.png'), np.full((8, 8, 3), 0.5))
        write_json(folder / f'{stem}.json', {'image_size': [8, 8], 'points': [[1, 1]]})


def test_manifest_sorted_and_relative(tmp_path):
    make_files(tmp_path, ['b', 'a'])
    path = write_json(tmp_path / 'm.json', {'split': 'val', 'entries': [
        {'image': 'b.png', 'annotations': 'b.json'},
        {'image': 'a.png', 'annotations': 'a.json'}]})
    manifest = data_io.load_manifest(path)
    assert manifest.split == 'val'
    assert [os.path.basename(e.image) for e in manifest] == ['a.png', 'b.png']
    assert all(os.path.isabs(e.image) for e in manifest)
    copy = str(tmp_path / 'copy.json')
    data_io.save_manifest(manifest, copy)
    with open(copy) as fid:
        assert json.load(fid)['entries'][0] == {'image': 'a.png', 'annotations': 'a.json'}
    samples = data_io.load_samples(manifest)
    assert [s.name for s in samples] == ['a', 'b']
    assert samples[0].image.shape == (8, 8, 3)
    assert samples[0].sigmas is None


def test_manifest_errors(tmp_path):
    path = write_json(tmp_path / 'm.json', {'split': 'train', 'entries': [
        {'image': 'gone.png', 'annotations': 'gone.json'}]})
    with pytest.raises(ManifestError):
        data_io.load_manifest(path)
    assert len(data_io.load_manifest(path, check=False)) == 1
    with pytest.raises(ManifestError):
        data_io.load_manifest(write_json(tmp_path / 'n.json', {'split': 'holdout',
                                                               'entries': []}))
    with pytest.raises(ManifestError):
        data_io.load_manifest(write_json(tmp_path / 'o.json', {'entries': []}))


def test_load_samples_requires_sigmas(tmp_path):
    make_files(tmp_path, ['a'])
    manifest = data_io.DatasetManifest([(str(tmp_path / 'a.png'), str(tmp_path / 'a.json'))])
    with pytest.raises(FileNotFoundError):
        data_io.load_samples(manifest, require_sigmas=True)
    data_io.save_sigmas(str(tmp_path / 'a.sigmas.json'),
                        du.SigmaAssignment([2.0], du.SIGMA_CONSTANT))
    npt.assert_array_equal(data_io.load_samples(manifest)[0].sigmas.sigmas, [2.0])


def test_synthetic_scene_is_deterministic():
    spec = data_io.SyntheticSceneSpec((48, 40), n_heads=12, rng_seed=3)
    a = data_io.generate_synthetic_scene(spec)
    b = data_io.generate_synthetic_scene(spec)
    npt.assert_array_equal(a[0], b[0])
    npt.assert_array_equal(a[1].points, b[1].points)
    npt.assert_array_equal(a[2], b[2])
    c = data_io.generate_synthetic_scene(spec.replace(rng_seed=4))
    assert not np.array_equal(a[1].points, c[1].points)


def test_synthetic_scene_geometry():
    spec = data_io.SyntheticSceneSpec((64, 64), n_heads=20, size_range=(2.0, 5.0), rng_seed=1)
    image, annotations, radii = data_io.generate_synthetic_scene(spec)
    assert image.shape == (64, 64, 3)
    assert image.min() >= 0 and image.max() <= 1
    assert len(annotations) == 20
    assert np.all((radii >= 2.0) & (radii <= 5.0))
    lo, hi = data_io.BORDER_MARGIN, 64 - 1 - data_io.BORDER_MARGIN
    assert np.all((annotations.points >= lo) & (annotations.points <= hi))
    gaps = np.hypot(*(annotations.points[:, None] - annotations.points[None]).T)
    gaps += np.eye(20) * 1e9
    assert np.all(gaps >= radii[:, None] + radii[None] - 1e-9)


def test_synthetic_scene_without_heads():
    spec = data_io.SyntheticSceneSpec((32, 32), n_heads=0, clutter_level=0.0)
    image, annotations, radii = data_io.generate_synthetic_scene(spec)
    assert len(annotations) == 0 and len(radii) == 0
    npt.assert_allclose(image, np.broadcast_to(data_io.BACKGROUND_COLOR, (32, 32, 3)))


@pytest.mark.parametrize('gain', [0.2, 0.5, 1.0])
def test_synthetic_radius_follows_row(gain):
    spec = data_io.SyntheticSceneSpec((96, 96), n_heads=60, size_range=(2.0, 5.0),
                                      perspective_gain=gain, rng_seed=3)
    _, annotations, radii = data_io.generate_synthetic_scene(spec)
    assert stats.pearsonr(annotations.ys, radii)[0] >= 0.9


def test_synthetic_radius_without_perspective():
    spec = data_io.SyntheticSceneSpec((48, 48), n_heads=10, size_range=(2.0, 4.0),
                                      perspective_gain=0.0)
    _, _, radii = data_io.generate_synthetic_scene(spec)
    npt.assert_allclose(radii, 3.0)


def test_synthetic_scene_overcrowded():
    spec = data_io.SyntheticSceneSpec((16, 16), n_heads=200, size_range=(4.0, 5.0))
    with pytest.raises(GenerationError):
        data_io.generate_synthetic_scene(spec)


def test_synthetic_spec_domain():
    for bad in (dict(size_range=(1.0, 3.0)), dict(size_range=(4.0, 3.0)), dict(n_heads=-1),
                dict(perspective_gain=1.5), dict(clutter_level=-0.1), dict(image_size=(4, 4))):
        with pytest.raises(DomainError):
            data_io.SyntheticSceneSpec(**bad)


def test_synthetic_dataset(tmp_path):
    spec = data_io.SyntheticSceneSpec((32, 32), n_heads=5)
    manifest = data_io.generate_synthetic_dataset(3, spec, str(tmp_path), split='test',
                                                  count_range=(2, 4))
    assert len(manifest) == 3
    reloaded = data_io.load_manifest(str(tmp_path / 'test_manifest.json'))
    assert reloaded.split == 'test'
    assert [e.image for e in reloaded] == [e.image for e in manifest]
    for entry in reloaded:
        annotations = data_io.load_annotations(entry.annotations)
        assert 2 <= len(annotations) <= 4
        with open(entry.annotations) as fid:
            assert len(json.load(fid)['radii']) == len(annotations)
        assert data_io.load_image(entry.image).shape == (32, 32, 3)
