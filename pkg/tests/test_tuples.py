"""
Tests for tuples, synthesis operators and frame bounds.
"""

import json

import numpy as np
import pytest
from conftest import well_conditioned

from orbitframe.errors import (
    ConfigurationError,
    PreconditionError,
    TupleInvariantError,
    UniverseMismatchError,
)
from orbitframe.lattice import BasisIndex, Mode, basis_element, make_universe
from orbitframe.presets import geometric_diag, geometric_diag_oracle
from orbitframe.tuples import (
    Iteration,
    OrbitTuple,
    Variant,
    frame_bounds,
    frame_bounds_of_similar,
    frame_operator,
    load_tuple,
    orbit_system,
    pushforward,
    save_tuple,
    synthesis,
    tuple_digest,
    universe_for,
    validate_tuple,
)


class TestOrbitTuple:
    """Construction and validation of tuples."""

    def test_vector_generator_becomes_column(self):
        t = OrbitTuple(T=np.eye(3), L=np.zeros((3, 3)), generators=np.ones(3))
        assert t.generators.shape == (3, 1)
        assert t.n_gen == 1 and t.dim_H == 3

    @pytest.mark.parametrize("T,L,W", [
        (np.ones((2, 3)), np.ones((2, 3)), np.ones(2)),
        (np.eye(2), np.eye(3), np.ones(2)),
        (np.eye(2), np.eye(2), np.ones(3)),
    ])
    def test_bad_shapes(self, T, L, W):
        """Shapes of T, L and generators must agree."""
        with pytest.raises(ConfigurationError):
            OrbitTuple(T=T, L=L, generators=W)

    def test_iteration_bounds(self):
        """Cyclic iteration needs positive sizes; truncated needs non-negative."""
        with pytest.raises(ConfigurationError):
            Iteration.cyclic(0, 3)
        with pytest.raises(ConfigurationError):
            Iteration.truncated(-1, 3)

    def test_universe_for_truncated_bilateral(self):
        """Signed ranges give grids of size 2K+1 and 2J+1."""
        t = OrbitTuple(T=np.eye(2), L=np.eye(2), generators=np.eye(2), variant=Variant.BILATERAL,
                       iteration=Iteration.truncated(2, 1))
        assert universe_for(t).shape == (5, 3, 2)

    def test_validate_passes_for_riesz(self, riesz_tuple):
        assert validate_tuple(riesz_tuple).passed

    def test_noncommuting_operators(self):
        """Commutation failures are reported, and raised when strict."""
        T = np.diag([1.0, -1.0])
        L = np.array([[0.0, 1.0], [0.0, 0.0]])
        t = OrbitTuple(T=T, L=L, generators=np.ones(2), iteration=Iteration.cyclic(2, 2))
        assert "commutation" in validate_tuple(t).violations
        with pytest.raises(TupleInvariantError) as exc:
            validate_tuple(t, strict=True)
        assert exc.value.invariant == "commutation"

    def test_cyclicity_violation(self):
        """T^N must be the identity in cyclic mode."""
        t = OrbitTuple(T=2 * np.eye(2), L=np.zeros((2, 2)), generators=np.ones(2),
                       iteration=Iteration.cyclic(1, 1))
        assert validate_tuple(t).violations == ["cyclic_T"]

    def test_singular_T_with_negative_powers(self):
        """Truncated iteration needs T^-1."""
        t = OrbitTuple(T=np.zeros((1, 1)), L=np.eye(1), generators=np.ones(1),
                       iteration=Iteration.truncated(1, 1))
        with pytest.raises(TupleInvariantError):
            synthesis(t)


class TestSynthesis:
    """Synthesis operator and orbit system."""

    def test_riesz_synthesis_is_identity(self, riesz_tuple):
        """T^k S^j e_00i lands on the canonical coordinate e_kji."""
        syn = synthesis(riesz_tuple)
        assert np.abs(syn.coordinate_matrix - np.eye(syn.universe.dim)).max() <= 1e-12

    def test_apply_field_matches_column(self, riesz_tuple):
        """C applied to a basis element returns the matching orbit vector."""
        syn = synthesis(riesz_tuple)
        idx = BasisIndex(1, 2, 0)
        f = basis_element(syn.universe, idx)
        assert np.abs(syn.apply_field(f) - syn.column(idx)).max() <= 1e-12

    def test_orbit_system_order(self, geometric_tuple):
        """Orbit vectors are L^j w in increasing j."""
        system = orbit_system(geometric_tuple)
        assert len(system) == 50
        idx, vec = system[3]
        assert idx == BasisIndex(0, 3, 0)
        assert np.allclose(vec, [0.5 ** 3, (1 / 3) ** 3])

    def test_truncated_columns_map_to_signed_indices(self):
        """k = -1 is stored at grid position 2K."""
        t = OrbitTuple(T=np.diag([1j, -1j]), L=np.eye(2), generators=np.ones(2),
                       variant=Variant.UNILATERAL, iteration=Iteration.truncated(1, 1))
        syn = synthesis(t)
        assert syn.indices[0] == BasisIndex(-1, 0, 0)
        assert syn.column_order[0] == syn.universe.flat_index(2, 0, 0)

    def test_universe_mismatch(self, riesz_tuple):
        """A universe that does not match the iteration policy is refused."""
        with pytest.raises(UniverseMismatchError):
            synthesis(riesz_tuple, make_universe(Mode.UNILATERAL, 4, 4, 1))


class TestFrameBounds:
    """Frame bounds, Parseval and Riesz verdicts."""

    def test_riesz_basis(self, riesz_tuple):
        report = frame_bounds(riesz_tuple)
        assert report.is_frame and report.is_parseval and report.is_riesz
        assert report.lower_bound == pytest.approx(1.0)
        assert report.kernel_dim == 0

    def test_geometric_diagonal_oracle(self, geometric_tuple):
        """Bounds equal the eigenvalues of the summed 2x2 frame operator."""
        report = frame_bounds(geometric_tuple)
        lower, upper = np.linalg.eigvalsh(geometric_diag_oracle(50))
        assert report.lower_bound == pytest.approx(lower, rel=1e-10)
        assert report.upper_bound == pytest.approx(upper, rel=1e-10)
        assert report.lower_bound == pytest.approx(0.02466, abs=1e-4)
        assert report.upper_bound == pytest.approx(2.43368, abs=1e-4)
        assert report.is_frame and not report.is_riesz

    def test_frame_operator(self, geometric_tuple):
        assert np.abs(frame_operator(geometric_tuple) - geometric_diag_oracle(50)).max() <= 1e-12

    def test_rank_deficient_generator_is_not_a_frame(self):
        """A generator inside one eigenspace of L spans only that line."""
        t = OrbitTuple(T=np.eye(2), L=np.diag([0.5, 1 / 3]), generators=np.array([1.0, 0.0]),
                       iteration=Iteration.cyclic(1, 20))
        report = frame_bounds(t)
        assert not report.is_frame
        assert report.lower_bound == pytest.approx(0.0, abs=1e-20)

    def test_truncated_convergence(self):
        """Geometric decay: monotone upper bounds, no divergence."""
        t = geometric_diag(50).with_iteration(Iteration.truncated(0, 50))
        report = frame_bounds(t)
        assert report.upper_monotone is True
        assert report.divergence_suspected is False
        assert [level.J for level in report.convergence] == [10, 20, 30, 40, 50]

    def test_truncated_divergence_flag(self):
        """Linear growth of B is flagged."""
        t = OrbitTuple(T=np.eye(1), L=np.eye(1), generators=np.ones(1),
                       iteration=Iteration.truncated(0, 10))
        report = frame_bounds(t)
        assert report.upper_bound == pytest.approx(10.0)
        assert report.divergence_suspected is True

    def test_similar_bounds_sandwich(self, monomial_base, rng):
        """Bounds of B-pushforwards stay within [A / ||B^-1||^2, B ||B||^2]."""
        t, _ = monomial_base
        for _ in range(20):
            B = well_conditioned(rng, t.dim_H, 100.0)
            report = frame_bounds_of_similar(t, B)
            s = np.linalg.svd(B, compute_uv=False)
            assert report.is_frame
            assert report.similarity_sandwich["frame_preserved"]
            assert report.similarity_sandwich["lower_ok"]
            assert report.similarity_sandwich["upper_ok"]
            assert report.lower_bound >= s[-1] ** 2 * (1 - 1e-9)
            assert report.upper_bound <= s[0] ** 2 * (1 + 1e-9)

    def test_similarity_preserves_non_frames(self, rng):
        """A generator inside one eigenspace of L stays rank deficient after any pushforward."""
        t = OrbitTuple(T=np.eye(2), L=np.diag([0.5, 1 / 3]), generators=np.array([1.0, 0.0]),
                       iteration=Iteration.cyclic(1, 20))
        for _ in range(20):
            B = well_conditioned(rng, 2, 100.0)
            report = frame_bounds_of_similar(t, B)
            assert not report.is_frame
            assert report.similarity_sandwich["frame_preserved"]
            assert not frame_bounds(pushforward(pushforward(t, B), np.linalg.inv(B))).is_frame

    def test_singular_pushforward(self, riesz_tuple):
        with pytest.raises(PreconditionError):
            pushforward(riesz_tuple, np.zeros((12, 12)))


class TestTupleFiles:
    """JSON codec for tuples."""

    def test_save_and_load(self, tmp_path, monomial_base):
        t, _ = monomial_base
        path = save_tuple(tmp_path / "base.json", t)
        loaded = load_tuple(path)
        assert np.array_equal(loaded.T, t.T)
        assert np.array_equal(loaded.generators, t.generators)
        assert loaded.iteration == t.iteration
        assert tuple_digest(loaded) == tuple_digest(t)

    def test_deterministic_bytes(self, tmp_path, riesz_tuple):
        a = save_tuple(tmp_path / "a.json", riesz_tuple).read_bytes()
        b = save_tuple(tmp_path / "b.json", riesz_tuple).read_bytes()
        assert a == b

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"variant": "unilateral"}))
        with pytest.raises(ConfigurationError):
            load_tuple(path)

    @pytest.mark.parametrize("bad", ["x", 2.5, [3], None, -1, 0])
    def test_malformed_iteration(self, tmp_path, riesz_tuple, bad):
        path = save_tuple(tmp_path / "t.json", riesz_tuple)
        payload = json.loads(path.read_text())
        payload["iteration"]["N_or_K"] = bad
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigurationError):
            load_tuple(path)

    def test_iteration_mode_survives_reload(self, tmp_path):
        t = geometric_diag(10).with_iteration(Iteration.truncated(5, 3))
        loaded = load_tuple(save_tuple(tmp_path / "t.json", t))
        assert loaded.iteration == Iteration.truncated(5, 3)
