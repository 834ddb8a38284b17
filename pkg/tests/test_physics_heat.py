import numpy as np
import pytest

from topt.material import KappaParams
from topt.mesh import GAMMA0, BoundarySegment, BoundarySpec, build_rect_mesh, tag_boundary
from topt.physics_heat import HeatProblem, dirichlet_energy, sensitivity_heat, solve_state_heat
from topt.smoothing import heat_smooth

# Degree-5 rule on the reference triangle: barycentric points and weights.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def strip_problem(n):
    """-u'' = 1 on the unit square, u = 0 on the left edge, exact u = x - x^2 / 2."""
    spec = BoundarySpec((BoundarySegment("left", 0.0, 1.0, GAMMA0),))
    mesh = tag_boundary(build_rect_mesh(1.0, 1.0, n, n), spec)
    return HeatProblem(mesh=mesh, kappa=KappaParams(override=1.0), f=1.0, g=0.0, solver="direct")


def l2_error(mesh, u):
    p = mesh.nodes[mesh.triangles]       # (T, 3, 2)
    x = np.einsum("qi,tik->tqk", QUAD_POINTS, p)[..., 0]
    uh = np.einsum("qi,ti->tq", QUAD_POINTS, u[mesh.triangles])
    exact = x - 0.5 * x ** 2
    err2 = np.einsum("q,tq->t", QUAD_WEIGHTS, (uh - exact) ** 2) * mesh.triangle_areas()
    return np.sqrt(err2.sum())


def test_manufactured_strip_converges():
    errors = []
    for n in (8, 16, 32, 64):
        prob = strip_problem(n)
        state = solve_state_heat(prob, np.ones(prob.mesh.num_nodes))
        errors.append(l2_error(prob.mesh, state.u))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all((ratios >= 3.5) & (ratios <= 4.5))
    assert state.objective == pytest.approx(1.0 / 6.0, abs=1e-3)


def test_state_properties(small_heat):
    rho = np.ones(small_heat.mesh.num_nodes)
    state = solve_state_heat(small_heat, rho)
    assert np.all(state.u[small_heat.dirichlet_dofs()] == 0.0)
    assert state.objective > 0
    assert state.objective == pytest.approx(dirichlet_energy(small_heat, state), rel=1e-10)


def test_zero_load_gives_zero_state(make_heat_mesh):
    prob = HeatProblem(mesh=make_heat_mesh(4, 0.25, 0.75), kappa=KappaParams(), f=0.0, g=0.0)
    state = solve_state_heat(prob, np.ones(prob.mesh.num_nodes))
    assert not np.any(state.u)
    assert state.objective == 0.0
    assert not np.any(sensitivity_heat(prob, np.ones(prob.mesh.num_nodes), state))


def test_empty_dirichlet_rejected():
    with pytest.raises(ValueError):
        HeatProblem(mesh=build_rect_mesh(1.0, 1.0, 4, 4), kappa=KappaParams(), f=1.0)


def test_smoothed_sensitivity_matches_finite_differences(small_heat, rng):
    mesh = small_heat.mesh
    delta = 1e-2
    rho = 1.0 + 0.3 * rng.uniform(size=mesh.num_nodes)

    def objective(r):
        smoothed, _ = heat_smooth(mesh, r, delta)
        return solve_state_heat(small_heat, smoothed).objective

    rho_tilde, _ = heat_smooth(mesh, rho, delta)
    state = solve_state_heat(small_heat, rho_tilde)
    s_delta, _ = heat_smooth(mesh, sensitivity_heat(small_heat, rho_tilde, state), delta)
    lumped = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.triangle_areas() / 3, 3))

    h = 1e-4
    for _ in range(5):
        psi = rng.uniform(size=mesh.num_nodes)
        fd = (objective(rho + h * psi) - objective(rho - h * psi)) / (2 * h)
        assembled = np.sum(lumped * s_delta * psi)
        assert abs(fd - assembled) < 1e-3 * abs(assembled)


def test_literal_scale_is_negative_two_times_gradient(small_heat):
    rho = np.ones(small_heat.mesh.num_nodes)
    state = solve_state_heat(small_heat, rho)
    literal = HeatProblem(mesh=small_heat.mesh, kappa=KappaParams(a=1.3, p=3.0, sensitivity_scale=1.0),
                          f=0.5, g=0.0)
    np.testing.assert_allclose(sensitivity_heat(literal, rho, state),
                               -2.0 * sensitivity_heat(small_heat, rho, state), rtol=1e-12)
