import numpy as np
import pytest

from poisson_cs.exceptions import InvalidParam, LengthMismatch
from poisson_cs.utils.transform_helpers import BasisKind, OrthonormalBasis, PatchGrid, extract_patches, reassemble


class TestOrthonormalBasis:

    def test_identity(self, rng):
        basis = OrthonormalBasis.identity(5)
        theta = rng.standard_normal(5)

        assert basis.kind is BasisKind.IDENTITY
        assert np.array_equal(basis.synthesize(theta), theta)
        assert np.array_equal(basis.matrix, np.eye(5))

    def test_dct_is_orthonormal(self):
        psi = OrthonormalBasis.dct2(7).matrix
        assert psi.shape == (49, 49)
        assert np.allclose(psi.T @ psi, np.eye(49), atol=1e-12)

    def test_matrix_columns_are_synthesized_units(self):
        basis = OrthonormalBasis.dct2(3, 4)
        unit = np.zeros(12)
        unit[5] = 1.0
        assert np.allclose(basis.matrix[:, 5], basis.synthesize(unit))

    def test_analyze_inverts_synthesize(self, rng):
        basis = OrthonormalBasis.dct2(7)
        theta = rng.standard_normal(49)
        assert np.allclose(basis.analyze(basis.synthesize(theta)), theta, atol=1e-12)

    def test_constant_patch_is_one_sparse(self):
        coefficients = OrthonormalBasis.dct2(7).analyze(np.ones(49))
        assert coefficients[0] == pytest.approx(7.0)
        assert np.allclose(coefficients[1:], 0, atol=1e-12)

    def test_shape_must_match_dimension(self):
        with pytest.raises(InvalidParam, match="patch shape"):
            OrthonormalBasis(BasisKind.DCT2, 10)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            OrthonormalBasis.dct2(3).synthesize(np.ones(8))


class TestPatchGrid:

    def test_offsets_reach_the_border(self):
        grid = PatchGrid(12, 10, patch=7, stride=3)
        assert grid.row_offsets == [0, 3, 5]
        assert grid.col_offsets == [0, 3]
        assert len(grid) == 6

    def test_every_pixel_is_covered(self):
        grid = PatchGrid(20, 17, patch=7, stride=4)
        assert grid.coverage().min() >= 1

    def test_stride_one_coverage(self):
        coverage = PatchGrid(9, 9, patch=7, stride=1).coverage()
        assert coverage[4, 4] == 9
        assert coverage[0, 0] == 1

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParam, match="stride"):
            PatchGrid(10, 10, stride=0)

        with pytest.raises(InvalidParam, match="does not fit"):
            PatchGrid(5, 10, patch=7)


class TestPatches:

    def test_reassemble_recovers_the_image(self, rng):
        image = rng.integers(0, 256, size=(15, 13)).astype(float)
        grid = PatchGrid(15, 13, patch=7, stride=3)

        patches = extract_patches(image, grid)

        assert len(patches) == len(grid)
        assert patches[0].shape == (49,)
        assert np.allclose(reassemble(patches, grid), image)

    def test_patches_are_row_major(self):
        image = np.arange(64.0).reshape(8, 8)
        first = extract_patches(image, PatchGrid(8, 8, patch=7))[0]
        assert np.array_equal(first[:7], np.arange(7.0))
        assert first[7] == 8.0

    def test_overlaps_are_averaged(self):
        grid = PatchGrid(7, 8, patch=7, stride=1)
        image = reassemble([np.zeros(49), np.full(49, 2.0)], grid)
        assert np.all(image[:, 0] == 0)
        assert np.all(image[:, 1:7] == 1.0)
        assert np.all(image[:, 7] == 2.0)

    def test_shape_mismatch(self):
        with pytest.raises(LengthMismatch):
            extract_patches(np.zeros((9, 9)), PatchGrid(10, 10))

        with pytest.raises(LengthMismatch):
            reassemble([np.zeros(49)], PatchGrid(10, 10, stride=3))
