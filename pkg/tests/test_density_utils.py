import math

from hypothesis import given, settings, strategies as st
import numpy as np
import numpy.testing as npt
import pytest

from pyMBTTBF import density_utils as du
from pyMBTTBF.exceptions import AlignmentError, DomainError


def random_scene(seed, n_heads, size=(48, 64)):
    rng = np.random.default_rng(seed)
    height, width = size
    points = np.column_stack([rng.uniform(0, width - 1, n_heads),
                              rng.uniform(0, height - 1, n_heads)])
    sigmas = rng.uniform(du.SIGMA_MIN, 8.0, n_heads)
    return du.AnnotationSet(points, size), du.SigmaAssignment(sigmas, du.SIGMA_KNN)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n_heads=st.integers(0, 200),
       stride=st.sampled_from([1, 2, 4]))
def test_mass_conservation(seed, n_heads, stride):
    annotations, sigmas = random_scene(seed, n_heads)
    density = du.render_density(annotations, sigmas, out_stride=stride)
    assert abs(du.count(density) - n_heads) < 1e-6
    assert np.all(density.grid >= 0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n_heads=st.integers(0, 200))
def test_band_partition(seed, n_heads):
    annotations, sigmas = random_scene(seed, n_heads)
    full = du.render_density(annotations, sigmas)
    partition = du.partition_scale_bands(annotations, sigmas)
    npt.assert_allclose(sum(m.grid for m in partition.band_maps), full.grid, atol=1e-6)
    indices = np.sort(np.concatenate(partition.band_indices))
    npt.assert_array_equal(indices, np.arange(n_heads))
    for idx, band_map in zip(partition.band_indices, partition.band_maps):
        assert abs(du.count(band_map) - len(idx)) < 1e-6


def test_render_unit_mass():
    annotations = du.AnnotationSet([[8, 8]], (16, 16))
    density = du.render_density(annotations, [1.5])
    npt.assert_allclose(du.count(density), 1.0, atol=1e-12)
    assert density.grid.shape == (16, 16)
    assert np.unravel_index(np.argmax(density.grid), density.shape) == (8, 8)


def test_render_peak_without_renormalization():
    annotations = du.AnnotationSet([[20, 20]], (41, 41))
    density = du.render_density(annotations, [1.0], renormalize=False)
    npt.assert_allclose(density.grid[20, 20], 1 / (2 * math.pi), rtol=1e-12)


def test_render_empty():
    annotations = du.AnnotationSet(np.zeros((0, 2)), (10, 12))
    density = du.render_density(annotations, [])
    npt.assert_array_equal(density.grid, np.zeros((10, 12)))
    assert du.count(density) == 0.0


def test_render_border_head_keeps_unit_mass():
    annotations = du.AnnotationSet([[0, 0]], (16, 16))
    assert abs(du.count(du.render_density(annotations, [3.0])) - 1.0) < 1e-12
    assert du.count(du.render_density(annotations, [3.0], renormalize=False)) < 0.5


def test_render_stride_grid_shape():
    annotations = du.AnnotationSet([[3, 4], [20, 9]], (18, 22))
    density = du.render_density(annotations, [1.0, 2.0], out_stride=4)
    assert density.grid.shape == (5, 6)
    assert density.stride == 4
    npt.assert_allclose(du.count(density), 2.0, atol=1e-12)


def test_render_errors():
    annotations = du.AnnotationSet([[1, 1], [2, 2]], (8, 8))
    with pytest.raises(AlignmentError):
        du.render_density(annotations, [1.0])
    with pytest.raises(DomainError):
        du.render_density(annotations, [1.0, 0.0])
    with pytest.raises(DomainError):
        du.render_density(annotations, [1.0, 1.0], out_stride=0)


def test_annotations_out_of_bounds():
    with pytest.raises(DomainError):
        du.AnnotationSet([[10, 3]], (10, 10))


def test_count_three_heads():
    annotations = du.AnnotationSet([[5, 5], [10, 12], [30, 2]], (32, 40))
    npt.assert_allclose(du.count(du.render_density(annotations, [1.0, 2.0, 3.0])), 3.0,
                        atol=1e-12)
    assert du.count(du.DensityMap(np.zeros((4, 4)))) == 0.0


def test_adding_a_head_adds_one():
    annotations, sigmas = random_scene(3, 25)
    before = du.count(du.render_density(annotations, sigmas))
    after = du.count(du.render_density(annotations.added(12.5, 7.25),
                                       np.append(sigmas.sigmas, 2.0)))
    npt.assert_allclose(after - before, 1.0, atol=1e-9)


def test_quartile_bands():
    bands, thresholds = du.assign_bands(np.arange(1, 9, dtype=float))
    npt.assert_array_equal(np.bincount(bands, minlength=4), [2, 2, 2, 2])
    npt.assert_array_equal(bands, [0, 0, 1, 1, 2, 2, 3, 3])


def test_equal_sigmas_fall_in_lowest_band():
    annotations = du.AnnotationSet([[2, 2], [5, 5], [8, 2], [2, 8]], (12, 12))
    partition = du.partition_scale_bands(annotations, [2.0] * 4)
    assert [len(idx) for idx in partition.band_indices] == [4, 0, 0, 0]
    for band_map in partition.band_maps[1:]:
        npt.assert_array_equal(band_map.grid, 0)


def test_band_target_sums_bands():
    annotations, sigmas = random_scene(11, 40, size=(32, 32))
    full, partition = du.render_scale_bands(annotations, sigmas)
    target = du.band_target(partition, (3, 4, 5, 6), 4)
    pooled = du.pool_to_stride(full, 4)
    npt.assert_allclose(target.grid, pooled.grid, atol=1e-9)
    assert target.stride == 4
    pair = du.band_target(partition, (3, 4), 2)
    npt.assert_allclose(du.count(pair), len(partition.band_indices[0])
                        + len(partition.band_indices[1]), atol=1e-9)


def test_downsample_ones():
    pooled = du.downsample_preserving_count(du.DensityMap(np.ones((4, 4))), 2)
    npt.assert_array_equal(pooled.grid, np.full((2, 2), 4.0))
    assert pooled.stride == 2


def test_downsample_identity_and_exact_sum():
    rng = np.random.default_rng(0)
    grid = rng.integers(0, 100, size=(13, 18)).astype(np.float64)
    density = du.DensityMap(grid)
    npt.assert_array_equal(du.downsample_preserving_count(density, 1).grid, grid)
    for factor in (2, 3, 4, 7):
        assert du.count(du.downsample_preserving_count(density, factor)) == grid.sum()


def test_downsample_errors():
    density = du.DensityMap(np.ones((4, 4)), stride=2)
    with pytest.raises(DomainError):
        du.downsample_preserving_count(density, 0)
    with pytest.raises(AlignmentError):
        du.pool_to_stride(density, 3)
    assert du.pool_to_stride(density, 8).grid.shape == (1, 1)


def test_flip_point():
    annotations = du.AnnotationSet([[2, 5]], (8, 10))
    flipped, _ = du.flip_horizontal(annotations)
    npt.assert_array_equal(flipped.points, [[7, 5]])
    npt.assert_array_equal(annotations.flipped().flipped().points, annotations.points)


def test_flip_commutes_with_render():
    annotations, sigmas = random_scene(5, 30, size=(32, 40))
    density = du.render_density(annotations, sigmas)
    flipped, flipped_density = du.flip_horizontal(annotations, density)
    npt.assert_allclose(du.render_density(flipped, sigmas).grid, flipped_density.grid,
                        atol=1e-9)
    _, twice = du.flip_horizontal(flipped, flipped_density)
    npt.assert_array_equal(twice.grid, density.grid)


def test_clip_sigmas():
    npt.assert_array_equal(du.clip_sigmas([0.2, 3.0, 50.0], (40, 60)), [1.0, 3.0, 10.0])


def test_clip_sigmas_warns_with_count(caplog):
    with caplog.at_level('WARNING', logger='pyMBTTBF.density_utils'):
        du.clip_sigmas([0.2, 3.0, 50.0, 60.0], (40, 60))
    assert '3 head scales clipped' in caplog.text
