import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcryst import crystal
from flowcryst.crystal import (
    AtomTypes,
    Crystal,
    LatticeParams,
    SymmetryOp,
    angles_from_unconstrained,
    angles_to_unconstrained,
    apply_symmetry,
    cell_volume,
    decode_atoms,
    encode_atoms,
    matrix_from_params,
    params_from_matrix,
)
from flowcryst.errors import (
    DegenerateCellError,
    DomainError,
    NiggliViolationError,
    ShapeError,
)


def test_lattice_rejects_nonpositive_length():
    with pytest.raises(DegenerateCellError):
        LatticeParams(0.0, 1.0, 1.0, 90, 90, 90)


def test_lattice_rejects_unreduced_angle():
    with pytest.raises(NiggliViolationError):
        LatticeParams(4, 4, 4, 45, 90, 90)
    with pytest.raises(NiggliViolationError):
        LatticeParams(4, 4, 4, 90, 121, 90)


def test_cubic_matrix():
    M = matrix_from_params(LatticeParams(2, 2, 2, 90, 90, 90))
    assert np.allclose(M, 2 * np.eye(3))


def test_hexagonal_volume():
    lat = LatticeParams(1, 1, 1, 90, 90, 120)
    assert np.isclose(cell_volume(lat), np.sqrt(3) / 2)


@given(
    st.floats(1.0, 10.0), st.floats(1.0, 10.0), st.floats(1.0, 10.0),
    st.floats(65, 115), st.floats(65, 115), st.floats(65, 115),
)
@settings(max_examples=60)
def test_params_matrix_round_trip(a, b, c, alpha, beta, gamma):
    try:
        lat = LatticeParams(a, b, c, alpha, beta, gamma)
    except DegenerateCellError:
        return  # angle combination with no valid cell
    back = params_from_matrix(matrix_from_params(lat))
    assert np.allclose(back.lengths, lat.lengths, atol=1e-9)
    assert np.allclose(back.angles, lat.angles, atol=1e-9)


def test_params_from_matrix_rejects_singular():
    with pytest.raises(DegenerateCellError):
        params_from_matrix(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        params_from_matrix(np.eye(2))


def test_angle_transform_fixed_points():
    # midpoint 90 deg maps to 0; logit(1/4) and logit(3/4) land at 75/105
    assert np.isclose(angles_to_unconstrained(90.0), 0.0)
    assert np.isclose(angles_to_unconstrained(75.0), -np.log(3))
    assert np.isclose(angles_from_unconstrained(np.log(3)), 105.0)


def test_angle_transform_boundary_clamp():
    y = angles_to_unconstrained(np.array([60.0, 120.0]))
    assert np.all(np.isfinite(y))
    back = angles_from_unconstrained(y)
    assert np.all((back > 60.0) & (back < 120.0))


def test_angle_transform_rejects_outside():
    with pytest.raises(DomainError):
        angles_to_unconstrained(59.0)
    with pytest.raises(DomainError):
        angles_from_unconstrained(np.inf)


@given(st.floats(60.01, 119.99))
@settings(max_examples=60)
def test_angle_round_trip(angle):
    back = angles_from_unconstrained(angles_to_unconstrained(angle))
    assert np.isclose(back, angle, atol=1e-10)


def test_bit_codec_exhaustive():
    kinds = np.arange(100)
    decoded, unused = decode_atoms(encode_atoms(kinds))
    assert np.array_equal(decoded, kinds)
    assert not unused.any()


def test_bit_codec_lsb_first_and_sign_zero():
    bits = encode_atoms(np.array([1]))
    assert bits[0, 0] == 1.0 and np.all(bits[0, 1:] == -1.0)
    # sign(0) counts as +1: all-zero row decodes to 127 -> unused
    kinds, unused = decode_atoms(np.zeros((1, 7)))
    assert kinds[0] == 127 and unused[0]


def test_encode_rejects_out_of_range():
    with pytest.raises(DomainError):
        encode_atoms(np.array([100]))
    with pytest.raises(DomainError):
        encode_atoms(np.array([-1]))


def test_atom_types_bits_must_decode():
    with pytest.raises(DomainError):
        AtomTypes(kinds=np.array([3]), bits=encode_atoms(np.array([4])))


def test_crystal_wraps_and_checks_shapes():
    lat = LatticeParams(4, 4, 4, 90, 90, 90)
    c = Crystal(AtomTypes.from_kinds([1, 2]), np.array([[1.25, 0, 0], [0.5, 0.5, 0.5]]), lat)
    assert np.isclose(c.frac[0, 0], 0.25)
    with pytest.raises(ShapeError):
        Crystal(AtomTypes.from_kinds([1]), np.zeros((2, 3)), lat)


def test_symmetry_permutation_and_translation():
    lat = LatticeParams(4, 5, 6, 90, 90, 90)
    c = Crystal(AtomTypes.from_kinds([1, 2, 3]), np.random.default_rng(0).random((3, 3)), lat)
    p = apply_symmetry(c, SymmetryOp.permutation([2, 0, 1]))
    assert np.array_equal(p.atoms.kinds, c.atoms.kinds[[2, 0, 1]])
    tr = apply_symmetry(c, SymmetryOp.translation([0.5, 0.5, 0.5]))
    assert np.all((tr.frac >= 0) & (tr.frac < 1))
    rot = apply_symmetry(c, SymmetryOp.rotation(np.eye(3)))
    assert np.array_equal(rot.frac, c.frac)


def test_symmetry_op_validation():
    with pytest.raises(DomainError):
        SymmetryOp.permutation([0, 0, 1])
    with pytest.raises(DomainError):
        SymmetryOp.rotation(2 * np.eye(3))
    with pytest.raises(DomainError):
        SymmetryOp.rotation(np.diag([1.0, 1.0, -1.0]))  # det -1 reflection
