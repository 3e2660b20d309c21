import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import extended_reeb, fd_jacobian
from reebtop import contact as C
from reebtop.errors import DegeneratePointError, PreconditionError
from reebtop.fixtures import shipped_bodies
from reebtop.geometry import Body, PNormCube, Quadric, RadialGraph, TrigPolynomial, radial_function

BODIES = shipped_bodies()
unit4 = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1
).map(lambda v: np.array(v) / np.linalg.norm(v))


def random_points(n, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 4))


def boundary(body, n, seed=0):
    return C.random_boundary_points(body, n, np.random.default_rng(seed))


# --- standard structures -------------------------------------------------


def test_d_liouville_is_omega():
    np.testing.assert_array_equal(C.exterior_derivative_matrix(C.LIOUVILLE), C.OMEGA)


def test_liouville_vector_contracts_to_liouville_form():
    x = random_points(1000)
    np.testing.assert_allclose(C.interior_product(C.liouville_vector(x)), C.liouville_form(x), atol=1e-15)


# --- Hamiltonian field -----------------------------------------------------


def test_hamiltonian_field_round_sphere_example():
    x = np.array([1.0, 0, 0, 0])
    X = C.hamiltonian_field(PNormCube(2), x)
    np.testing.assert_array_equal(X, [0.0, 2.0, 0.0, 0.0])
    assert C.lambda0(x, X) == 1.0


@pytest.mark.parametrize("name", sorted(BODIES))
def test_hamiltonian_field_preserves_g(name):
    body = BODIES[name]
    x = random_points(10_000, seed=1) * 0.7
    grads = body.evaluate(x)[1]
    X = C.hamiltonian_field(body, x)
    scale = np.sum(grads**2, axis=1)
    assert np.max(np.abs(np.sum(grads * X, axis=1)) / scale) <= 1e-12


@pytest.mark.parametrize("p", [2, 4, 8])
def test_hamiltonian_field_vanishes_at_origin(p):
    np.testing.assert_array_equal(C.hamiltonian_field(PNormCube(p), np.zeros(4)), np.zeros(4))


@given(unit4)
def test_hamiltonian_sign_contract(u):
    for body in (PNormCube(4), BODIES["chaotic_demo"], BODIES["lse_cube"]):
        x = radial_function(body, u) * u
        g = body.evaluate(x)[1]
        assert C.lambda0(x, C.hamiltonian_field(body, x)) == pytest.approx(0.5 * g @ x, rel=1e-12)


# --- Reeb field --------------------------------------------------------------


def test_reeb_round_sphere_closed_form():
    x = boundary(PNormCube(2), 50)
    R = C.reeb_field(PNormCube(2), x)
    expected = 2 * np.column_stack([-x[:, 1], x[:, 0], -x[:, 3], x[:, 2]])
    np.testing.assert_allclose(R, expected, atol=1e-14)


@pytest.mark.parametrize("p", [2, 4, 8, 16])
def test_reeb_speed_ratio_on_cubes(p):
    body = PNormCube(p)
    x = boundary(body, 200, seed=p)
    R = C.reeb_field(body, x)
    X = C.hamiltonian_field(body, x)
    np.testing.assert_allclose(np.linalg.norm(R, axis=1), (2 / p) * np.linalg.norm(X, axis=1), rtol=1e-12)


@pytest.mark.parametrize("name", sorted(BODIES))
def test_reeb_contracts(name):
    body = BODIES[name]
    res = C.contract_residuals(body, 10_000, seed=2)
    assert res["alpha_of_R"] <= 1e-10
    assert res["dG_of_R"] <= 1e-10
    assert res["min_transversality"] > 0


@pytest.mark.parametrize("name", sorted(BODIES))
def test_reparametrization_identity(name):
    body = BODIES[name]
    x = C.project_to_level(body, boundary(body, 500, seed=3))
    grads = body.evaluate(x)[1]
    half = 0.5 * np.sum(grads * x, axis=1)
    X = C.hamiltonian_field(body, x)
    np.testing.assert_allclose(C.reeb_field(body, x) * half[:, None], X, rtol=1e-14, atol=1e-14 * np.abs(X).max())


@pytest.mark.parametrize("name", sorted(BODIES))
def test_reeb_jacobian_matches_finite_differences(name):
    body = BODIES[name]
    field = extended_reeb(body)
    for x in C.project_to_level(body, boundary(body, 20, seed=4)):
        J = C.reeb_jacobian(body, x)
        fd = fd_jacobian(field, x, 1e-6)
        assert np.max(np.abs(J - fd)) <= 1e-6 * max(1.0, np.max(np.abs(J)))


def test_reeb_preconditions():
    with pytest.raises(PreconditionError):
        C.reeb_field(PNormCube(2), np.array([2.0, 0, 0, 0]))

    class Tangential(Body):
        """A fake level set through e1 whose gradient is orthogonal to the position."""

        kind_name = "fake"
        degree = 0.0

        def evaluate(self, x):
            x = np.atleast_2d(x)
            n = len(x)
            return np.ones(n), np.tile([0.0, 1.0, 0.0, 0.0], (n, 1)), np.zeros((n, 4, 4))

    with pytest.raises(DegeneratePointError):
        C.reeb_field(Tangential(), np.array([1.0, 0, 0, 0]))
    with pytest.raises(DegeneratePointError):
        C.reeb_jacobian(Tangential(), np.array([1.0, 0, 0, 0]))


def test_project_to_level():
    for body in (PNormCube(4), BODIES["lse_cube"]):
        x = 1.0001 * boundary(body, 100, seed=5)
        y = C.project_to_level(body, x)
        assert np.max(np.abs(body.evaluate(y)[0] - 1.0)) <= 1e-7


# --- graph forms ---------------------------------------------------------------


def test_pushforward_examples():
    base = Quadric.diagonal(1, 1, 2, 2)
    m = boundary(base, 20)
    np.testing.assert_array_equal(C.graph_pushforward(base, TrigPolynomial(), m), m)
    np.testing.assert_allclose(C.graph_pushforward(base, TrigPolynomial.constant(2 * math.log(2)), m), 2 * m,
                               rtol=1e-15)


def test_pushforward_lands_on_radial_graph():
    rng = np.random.default_rng(6)
    base = Quadric.diagonal(1, 1, 2, 2)
    for _ in range(5):
        freq = tuple(int(k) for k in rng.integers(-3, 4, size=4))
        f = TrigPolynomial(((float(rng.uniform(-0.2, 0.2)), freq, float(rng.uniform(0, 6))),))
        m = boundary(base, 200, seed=int(rng.integers(1000)))
        img = C.graph_pushforward(base, f, m)
        np.testing.assert_allclose(RadialGraph(base, f).evaluate(img)[0], 1.0, atol=1e-10)


def test_pushforward_requires_base_points():
    with pytest.raises(PreconditionError):
        C.graph_pushforward(PNormCube(2), TrigPolynomial(), np.array([[2.0, 0, 0, 0]]))


@pytest.mark.parametrize(
    "f, bound",
    [
        (TrigPolynomial(), 1e-15),
        (TrigPolynomial.constant(0.7), 1e-10),
        (TrigPolynomial(((0.1, (1, 0, 0, 1), 0.0),)), 1e-8),
    ],
)
def test_graph_form_relation(f, bound):
    for base in (PNormCube(2), Quadric.diagonal(1, 1, 2, 2), PNormCube(4)):
        assert C.verify_graph_form_relation(base, f, samples=1000) <= bound


def test_graph_form_relation_finite_difference_route():
    f = TrigPolynomial(((0.1, (1, 0, 0, 1), 0.0),))
    assert C.verify_graph_form_relation(PNormCube(2), f, samples=1000, fd_step=1e-6) <= 1e-8
    # the check has teeth: a wrong conformal factor is caught
    m = boundary(PNormCube(2), 10)
    v = C.random_tangent_vectors(PNormCube(2), m, np.random.default_rng(1))
    lhs = C.lambda0(C.graph_pushforward(PNormCube(2), f, m), C.pushforward_differential(f, m, v))
    assert np.max(np.abs(lhs - np.exp(0.5 * f(m)) * C.lambda0(m, v))) > 1e-3


def test_tangent_vectors_are_unit_and_tangent():
    body = BODIES["chaotic_demo"]
    m = boundary(body, 500, seed=8)
    v = C.random_tangent_vectors(body, m, np.random.default_rng(9))
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, rtol=1e-14)
    g = body.evaluate(m)[1]
    assert np.max(np.abs(np.sum(g * v, axis=1)) / np.linalg.norm(g, axis=1)) <= 1e-14
