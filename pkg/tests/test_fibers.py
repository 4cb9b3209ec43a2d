"""
Tests for range functions, inner factors, chi_E recovery and operator fields.
"""

import numpy as np
import pytest

from orbitframe.errors import (
    ConfigurationError,
    PreconditionError,
    StructuralError,
    UniverseMismatchError,
)
from orbitframe.fibers import (
    Coverage,
    OperatorField,
    RangeFunction,
    apply_operator_field,
    chi_E_detect,
    complement,
    compute_range_function,
    extract_inner_factor,
    fiberwise_compression,
    helson_projection_check,
    orbit_subspace,
    project,
    projector_distance,
    range_function_from_mask,
    range_function_of_subspace,
    reducing_defect,
    restriction_isomorphism,
    resynthesize,
    subspace_basis,
)
from orbitframe.lattice import (
    BasisIndex,
    CoefField,
    Mode,
    basis_element,
    field_to_coords,
    make_universe,
    operator_matrix,
    random_field,
)
from orbitframe.model import build_basic_tuple, grid_mask, monomial_mask


def random_fibers(rng, u, dims):
    """Orthonormal random blocks of the requested dimensions, one per fiber."""
    bases = []
    for d in dims:
        Z = rng.standard_normal((u.fiber_dim, d)) + 1j * rng.standard_normal((u.fiber_dim, d))
        bases.append(np.linalg.qr(Z)[0] if d else np.zeros((u.fiber_dim, 0)))
    return RangeFunction(u, tuple(bases))


def single_fiber(M, columns):
    """Range function on a one-point grid spanned by the given fiber vectors."""
    u = make_universe(Mode.UNILATERAL, 1, M, 1)
    V = np.linalg.qr(np.column_stack(columns).astype(complex))[0]
    return u, RangeFunction(u, (V,))


class TestRangeFunctions:
    """Fiber dimensions and orthonormal bases."""

    def test_mask_dimensions(self, unilateral_universe):
        u = unilateral_universe
        rf = range_function_from_mask(u, monomial_mask(u, [1, 0, 3, 2]))
        assert rf.dims.tolist() == [2, 0, 6, 4]
        assert rf.sigma_support == [0, 2, 3]
        assert rf.total_dim == 12
        assert rf.dims_rows()[1] == [1, 0, 0]

    def test_subspace_basis_is_orthonormal(self, unilateral_universe, rng):
        rf = random_fibers(rng, unilateral_universe, [3, 0, 1, 6])
        Q = subspace_basis(rf)
        assert Q.shape == (24, 10)
        assert np.abs(Q.conj().T @ Q - np.eye(10)).max() <= 1e-12

    def test_generators_span_fibers(self, unilateral_universe):
        """Constant and lambda-multiplied copies of e_0 share a fiber direction."""
        u = unilateral_universe
        gens = [basis_element(u, BasisIndex(0, 0, 0)), basis_element(u, BasisIndex(1, 0, 0))]
        assert compute_range_function(gens).dims.tolist() == [1, 1, 1, 1]
        gens.append(basis_element(u, BasisIndex(0, 1, 1)))
        rf = compute_range_function(gens)
        assert rf.dims.tolist() == [2, 2, 2, 2]
        defects = reducing_defect(subspace_basis(rf), u)
        assert defects.reducing
        assert defects.s_star_invariant is False

    def test_generators_must_share_universe(self, unilateral_universe, bilateral_universe):
        with pytest.raises(ConfigurationError):
            compute_range_function([])
        with pytest.raises(UniverseMismatchError):
            compute_range_function([basis_element(unilateral_universe, BasisIndex(0, 0, 0)),
                                    basis_element(bilateral_universe, BasisIndex(0, 0, 0))])

    def test_subspace_round_trip(self, unilateral_universe, rng):
        """Fibers recomputed from the coordinate basis span the same subspace."""
        rf = random_fibers(rng, unilateral_universe, [2, 5, 0, 1])
        Q = subspace_basis(rf)
        again = range_function_of_subspace(Q, unilateral_universe)
        assert again.dims.tolist() == [2, 5, 0, 1]
        assert projector_distance(subspace_basis(again), Q) <= 1e-10

    def test_complement_dimensions(self, unilateral_universe):
        u = unilateral_universe
        rf = range_function_from_mask(u, monomial_mask(u, [1, 0, 3, 2]))
        assert complement(rf).dims.tolist() == [4, 6, 0, 2]

    def test_projector_distance(self, rng):
        Z = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        Q = np.linalg.qr(Z)[0]
        R = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        assert projector_distance(Q, Q @ R) <= 1e-12
        assert projector_distance(Q, Q[:, :2]) == 1.0
        E = np.eye(6)
        assert projector_distance(E[:, :2], E[:, 2:4]) == pytest.approx(1.0)
        assert projector_distance(E[:, :0], E[:, :0]) == 0.0


class TestHelsonProjection:
    """Global projection onto the generated subspace agrees with pointwise projection onto J(t)."""

    @pytest.mark.parametrize("n_generators", [1, 2, 5])
    def test_projections_agree(self, unilateral_universe, rng, n_generators):
        u = unilateral_universe
        gens = [random_field(u, rng) for _ in range(n_generators)]
        assert helson_projection_check(gens, random_field(u, rng)) <= 1e-10

    def test_orbit_span_has_the_generator_fibers(self, unilateral_universe, rng):
        """The orbit span is computed in coordinates and still lands on the fibers."""
        u = unilateral_universe
        gens = [random_field(u, rng), random_field(u, rng)]
        Q = orbit_subspace(gens)
        rf = compute_range_function(gens)
        assert Q.shape == (24, 8)
        assert rf.dims.tolist() == [2, 2, 2, 2]
        assert projector_distance(Q, subspace_basis(rf)) <= 1e-10

    def test_masked_generator_on_bilateral_grid(self, rng):
        u = make_universe(Mode.BILATERAL, 3, 4, 2)
        mask = rng.random((3, 4, 1)) < 0.5
        mask[0, 0, 0], mask[0, 1, 0] = True, False
        gens = [CoefField(u, random_field(u, rng).data * mask), random_field(u, rng)]
        assert compute_range_function(gens).dims.tolist() == (1 + mask.ravel().astype(int)).tolist()
        assert helson_projection_check(gens, random_field(u, rng)) <= 1e-10

    def test_foreign_range_function_is_detected(self, unilateral_universe, rng):
        """Fibers of a different subspace do not reproduce the global projection."""
        u = unilateral_universe
        gens = [random_field(u, rng)]
        other = compute_range_function([random_field(u, rng)])
        assert helson_projection_check(gens, random_field(u, rng), rf=other) > 1e-3

    def test_non_orthonormal_fibers_are_refused(self, unilateral_universe):
        u = unilateral_universe
        e0 = np.eye(u.fiber_dim)[:, :1]
        with pytest.raises(PreconditionError) as exc:
            RangeFunction(u, tuple(3 * e0 for _ in range(u.n_fibers)))
        assert exc.value.invariant == "orthonormal_fibers"

    def test_projection_is_idempotent(self, bilateral_universe, rng):
        rf = random_fibers(rng, bilateral_universe, [1, 0] * 6)
        f = project(rf, random_field(bilateral_universe, rng))
        assert (project(rf, f) - f).norm() <= 1e-12

    def test_project_checks_universe(self, unilateral_universe, bilateral_universe, rng):
        rf = random_fibers(rng, unilateral_universe, [1, 1, 1, 1])
        with pytest.raises(UniverseMismatchError):
            project(rf, random_field(bilateral_universe, rng))


class TestReducingDefect:
    """Invariance defects of coordinate subspaces."""

    def test_monomial_subspace_is_reducing_and_s_star_invariant(self, monomial_base):
        t, Q = monomial_base
        u = make_universe(Mode.UNILATERAL, 4, 3, 1)
        report = reducing_defect(Q, u)
        assert report.reducing and report.s_star_invariant
        assert max(report.defects.values()) <= 1e-12

    def test_bilateral_names(self, bilateral_universe, rng):
        Q = subspace_basis(random_fibers(rng, bilateral_universe, [1, 0, 0] * 4))
        report = reducing_defect(Q, bilateral_universe)
        assert set(report.defects) == {"U1", "U1*", "U2", "U2*"}
        assert report.s_star_invariant is None
        assert report.reducing

    def test_random_line_is_not_reducing(self, unilateral_universe, rng):
        v = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        report = reducing_defect(v / np.linalg.norm(v), unilateral_universe)
        assert not report.reducing

    def test_non_orthonormal_basis(self, unilateral_universe, rng):
        Q = subspace_basis(random_fibers(rng, unilateral_universe, [1, 1, 1, 1]))
        with pytest.raises(PreconditionError) as exc:
            reducing_defect(2 * Q, unilateral_universe)
        assert exc.value.invariant == "orthonormal_basis"


class TestInnerFactor:
    """Per-fiber generators of S-invariant range functions."""

    def test_monomial_complement(self):
        """Fibers span{z^m, ..., z^(M-1)} are generated by phi = z^m."""
        u = make_universe(Mode.UNILATERAL, 4, 4, 1)
        n_perp = complement(range_function_from_mask(u, monomial_mask(u, [1, 2, 0, 3])))
        inner = extract_inner_factor(n_perp)
        assert inner.support == (0, 1, 2, 3)
        assert inner.degrees == (1, 2, 0, 3)
        assert all(c is Coverage.EXACT for c in inner.coverage)
        for p, m in enumerate([1, 2, 0, 3]):
            assert np.abs(inner.generator(p) - np.eye(4)[m]).max() <= 1e-12

    def test_full_fibers_are_skipped(self):
        u = make_universe(Mode.UNILATERAL, 2, 3, 1)
        n_perp = complement(range_function_from_mask(u, monomial_mask(u, [3, 1])))
        inner = extract_inner_factor(n_perp)
        assert inner.support == (1,)
        assert inner.generator(0) is None

    def test_resynthesis_reproduces_fibers(self, monomial_base):
        """Shifted copies of phi span the kernel of the synthesis operator's model."""
        t, _ = monomial_base
        b = build_basic_tuple(t)
        u = b.universe
        n_perp = complement(range_function_of_subspace(b.N_basis, u))
        inner = extract_inner_factor(n_perp)
        assert inner.degrees == (1, 2, 1)
        back = subspace_basis(resynthesize(inner))
        assert projector_distance(back, subspace_basis(n_perp)) <= 1e-10

    def test_non_inner_generator_is_truncated(self):
        """(1 + z) / sqrt(2) generates a fiber but is not inner."""
        u, rf = single_fiber(3, [[1, 1, 0], [0, 1, 1]])
        inner = extract_inner_factor(rf)
        assert inner.degrees == (1,)
        assert inner.coverage == (Coverage.TRUNCATED,)
        assert np.abs(inner.generator(0) - np.array([1, 1, 0]) / np.sqrt(2)).max() <= 1e-10

    def test_gap_in_degrees(self):
        """span{1, z^2} is not phi * H^2."""
        _, rf = single_fiber(3, [[1, 0, 0], [0, 0, 1]])
        with pytest.raises(StructuralError) as exc:
            extract_inner_factor(rf)
        assert exc.value.invariant == "shift_copies_span"

    def test_needs_single_generator(self):
        u = make_universe(Mode.UNILATERAL, 2, 3, 2)
        rf = range_function_from_mask(u, monomial_mask(u, [1, 1]))
        with pytest.raises(PreconditionError):
            extract_inner_factor(rf)


class TestChiE:
    """Recovery of E from M = chi_E L^2."""

    def test_random_mask_is_recovered(self, rng):
        u = make_universe(Mode.BILATERAL, 8, 8, 1)
        mask = rng.random((8, 8)) < 0.5
        mask[0, 0] = True
        Q = subspace_basis(range_function_from_mask(u, grid_mask(u, mask)))
        result = chi_E_detect(Q, u)
        assert np.array_equal(result.mask, mask)
        assert result.exact
        assert result.to_dict()["mask"] == mask.astype(int).tolist()

    def test_needs_bilateral_universe(self, unilateral_universe, rng):
        Q = subspace_basis(random_fibers(rng, unilateral_universe, [1, 1, 1, 1]))
        with pytest.raises(PreconditionError) as exc:
            chi_E_detect(Q, unilateral_universe)
        assert exc.value.invariant == "single_generator_bilateral"

    def test_non_reducing_subspace(self, bilateral_universe, rng):
        v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        with pytest.raises(PreconditionError) as exc:
            chi_E_detect(v / np.linalg.norm(v), bilateral_universe)
        assert exc.value.invariant == "u1_u2_reducing"


class TestOperatorFields:
    """Pointwise operator fields and their multiplication operators."""

    def test_identity(self, unilateral_universe, rng):
        u = unilateral_universe
        f = random_field(u, rng)
        identity = OperatorField.identity(u)
        assert (identity.apply(f) - f).norm() <= 1e-12
        assert np.abs(identity.as_coordinate_matrix() - np.eye(u.dim)).max() <= 1e-12
        assert identity.norm_inf == pytest.approx(1.0)

    def test_adjoint_reverses_composition(self, unilateral_universe, rng):
        u = unilateral_universe
        shape = (u.n_fibers, u.fiber_dim, u.fiber_dim)
        F = OperatorField(u, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        G = OperatorField(u, rng.standard_normal(shape))
        left = F.compose(G).adjoint().ops
        right = G.adjoint().compose(F.adjoint()).ops
        assert np.abs(left - right).max() <= 1e-12

    def test_bad_shape(self, unilateral_universe):
        with pytest.raises(ConfigurationError):
            OperatorField(unilateral_universe, np.zeros((4, 6, 5)))

    def test_compression_is_PSP(self, monomial_base):
        """The fiberwise compression of S is P S P in coordinates."""
        _, Q = monomial_base
        u = make_universe(Mode.UNILATERAL, 4, 3, 1)
        rf = range_function_of_subspace(Q, u)
        P = Q @ Q.conj().T
        expected = P @ operator_matrix(u, "S").toarray() @ P
        assert np.abs(fiberwise_compression(rf).as_coordinate_matrix() - expected).max() <= 1e-10

    def test_compression_needs_unilateral(self, bilateral_universe, rng):
        with pytest.raises(UniverseMismatchError):
            fiberwise_compression(random_fibers(rng, bilateral_universe, [1] * 12))

    def test_restriction_isomorphism(self, unilateral_universe):
        u = unilateral_universe
        rf = range_function_from_mask(u, monomial_mask(u, [1, 0, 3, 2]))
        identity = OperatorField.identity(u)
        same = restriction_isomorphism(identity, rf, rf)
        assert same.isomorphism
        assert same.sigma_min[1] is None
        assert same.sigma_min[0] == pytest.approx(1.0)
        other = restriction_isomorphism(identity, rf, complement(rf))
        assert not other.isomorphism


def random_operator_field(rng, u):
    shape = (u.n_fibers, u.fiber_dim, u.fiber_dim)
    return OperatorField(u, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


class TestMultiplicationOperators:
    """Coordinate matrices of random block fields."""

    @pytest.mark.parametrize("mode,shape,names", [
        (Mode.UNILATERAL, (4, 3, 2), ["U", "U*"]),
        (Mode.BILATERAL, (3, 4, 2), ["U1", "U1*", "U2", "U2*"]),
    ])
    def test_commutes_with_grid_shifts(self, rng, mode, shape, names):
        u = make_universe(mode, *shape)
        F = random_operator_field(rng, u)
        F_hat = F.as_coordinate_matrix()
        for name in names:
            X = operator_matrix(u, name).toarray()
            assert np.abs(F_hat @ X - X @ F_hat).max() <= 1e-10 * F.norm_inf

    def test_does_not_commute_with_S_in_general(self, unilateral_universe, rng):
        u = unilateral_universe
        F_hat = random_operator_field(rng, u).as_coordinate_matrix()
        S = operator_matrix(u, "S").toarray()
        assert np.abs(F_hat @ S - S @ F_hat).max() > 1e-3

    def test_norm_is_sup_of_fiber_norms(self, unilateral_universe, bilateral_universe, rng):
        for u in (unilateral_universe, bilateral_universe):
            F = random_operator_field(rng, u)
            assert np.linalg.norm(F.as_coordinate_matrix(), 2) == pytest.approx(F.norm_inf, rel=1e-10)

    def test_adjoint_is_pointwise(self, unilateral_universe, rng):
        F = random_operator_field(rng, unilateral_universe)
        F_hat = F.as_coordinate_matrix()
        assert np.abs(F.adjoint().as_coordinate_matrix() - F_hat.conj().T).max() <= 1e-10 * F.norm_inf

    def test_apply_matches_coordinate_matrix(self, bilateral_universe, rng):
        F = random_operator_field(rng, bilateral_universe)
        f = random_field(bilateral_universe, rng)
        g = apply_operator_field(F, f)
        expected = F.as_coordinate_matrix() @ field_to_coords(f)
        assert np.abs(field_to_coords(g) - expected).max() <= 1e-10 * F.norm_inf * max(f.norm(), 1.0)

    def test_apply_checks_universe(self, unilateral_universe, bilateral_universe, rng):
        F = random_operator_field(rng, unilateral_universe)
        with pytest.raises(UniverseMismatchError):
            apply_operator_field(F, random_field(bilateral_universe, rng))

    def test_compression_of_random_fibers_is_PSP(self, unilateral_universe, rng):
        u = unilateral_universe
        rf = random_fibers(rng, u, [2, 0, 3, 6])
        Q = subspace_basis(rf)
        P = Q @ Q.conj().T
        expected = P @ operator_matrix(u, "S").toarray() @ P
        assert np.abs(fiberwise_compression(rf).as_coordinate_matrix() - expected).max() <= 1e-10

    def test_unitary_block_field_restricts_to_an_isomorphism(self, unilateral_universe, rng):
        """F(t) sends J_from(t) onto J_to(t) and the complements onto each other."""
        u = unilateral_universe
        dims = [2, 1, 0, 3]
        rf_from, rf_to = random_fibers(rng, u, dims), random_fibers(rng, u, dims)
        perp_from, perp_to = complement(rf_from), complement(rf_to)
        ops = np.stack([np.hstack([Vt, Wt]) @ np.hstack([Vf, Wf]).conj().T
                        for Vf, Wf, Vt, Wt in zip(rf_from.bases, perp_from.bases, rf_to.bases, perp_to.bases)])
        report = restriction_isomorphism(OperatorField(u, ops), rf_from, rf_to)
        assert report.isomorphism
        assert report.sigma_min[2] is None
        for p in (0, 1, 3):
            assert report.sigma_min[p] == pytest.approx(1.0, abs=1e-10)

    def test_leaking_block_field_is_not_an_isomorphism(self, unilateral_universe, rng):
        """F(t) maps J_from(t) into the complement of J_to(t)."""
        u = unilateral_universe
        dims = [2, 1, 0, 3]
        rf_from, rf_to = random_fibers(rng, u, dims), random_fibers(rng, u, dims)
        perp_to = complement(rf_to)
        ops = np.stack([Wt[:, :Vf.shape[1]] @ Vf.conj().T for Vf, Wt in zip(rf_from.bases, perp_to.bases)])
        report = restriction_isomorphism(OperatorField(u, ops), rf_from, rf_to)
        assert not report.isomorphism
        assert report.sigma_min[0] == pytest.approx(0.0, abs=1e-10)
