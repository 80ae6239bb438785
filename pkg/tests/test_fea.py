import numpy as np
import pytest
import sympy

from wheelgen import fea
from wheelgen.geometry import WheelDomain, build_surface_loads, build_wheel_domain

# local node coordinates in the element order lower-left, lower-right, upper-right, upper-left
NODES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def plane_stress(nu, E=1.0):
    return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def quadrature_stiffness(nu):
    """Unit square bilinear element integrated with 2x2 Gauss points."""
    g = 1 / np.sqrt(3)
    K = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dN = 0.25 * np.array([[-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                                  [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)]])
            J = dN @ NODES
            dNx = np.linalg.solve(J, dN)
            B = np.zeros((3, 8))
            B[0, 0::2] = dNx[0]
            B[1, 1::2] = dNx[1]
            B[2, 0::2] = dNx[1]
            B[2, 1::2] = dNx[0]
            K += B.T @ plane_stress(nu) @ B * np.linalg.det(J)
    return K


def symbolic_stiffness_nu0():
    x, y = sympy.symbols("x y")
    N = [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y]
    B = sympy.zeros(3, 8)
    for i, n in enumerate(N):
        B[0, 2 * i] = sympy.diff(n, x)
        B[1, 2 * i + 1] = sympy.diff(n, y)
        B[2, 2 * i] = sympy.diff(n, y)
        B[2, 2 * i + 1] = sympy.diff(n, x)
    D = sympy.Matrix([[1, 0, 0], [0, 1, 0], [0, 0, sympy.Rational(1, 2)]])
    integrand = B.T * D * B
    K = integrand.applyfunc(lambda e: sympy.integrate(e, (x, 0, 1), (y, 0, 1)))
    return np.array(K.tolist(), dtype=float)


def patch_domain(nelx, nely, fixed_dofs):
    shape = (nely, nelx)
    return WheelDomain(nelx=nelx, nely=nely, passive_solid=np.zeros(shape, bool),
                       passive_void=np.zeros(shape, bool), design_mask=np.ones(shape, bool),
                       fixed_dofs=np.asarray(fixed_dofs))


def cantilever(nelx, nely):
    left = np.arange(nely + 1)  # nodes with ix = 0
    return patch_domain(nelx, nely, np.concatenate([2 * left, 2 * left + 1]))


def dense_assembly(d, x, material):
    """Independent loop assembly from the node numbering rule."""
    K = np.zeros((d.n_dofs, d.n_dofs))
    k0 = quadrature_stiffness(material.nu)
    for ex in range(d.nelx):
        for ey in range(d.nely):
            # element (ex, ey) spans node columns ex..ex+1 and node rows ey..ey+1 (row ey+1 is lower)
            ll, lr = (d.nely + 1) * ex + ey + 1, (d.nely + 1) * (ex + 1) + ey + 1
            ur, ul = (d.nely + 1) * (ex + 1) + ey, (d.nely + 1) * ex + ey
            dofs = np.array([[2 * n, 2 * n + 1] for n in (ll, lr, ur, ul)]).ravel()
            E = material.E_min + x[ey, ex] ** material.p * (material.E0 - material.E_min)
            K[np.ix_(dofs, dofs)] += E * k0
    return K


@pytest.mark.parametrize("nu", [0.3, 0.0, 0.25, 0.45])
def test_element_stiffness_matches_quadrature(nu):
    np.testing.assert_allclose(fea.element_stiffness(nu), quadrature_stiffness(nu), rtol=0, atol=1e-12)


def test_element_stiffness_nu0_matches_symbolic_integration():
    np.testing.assert_allclose(fea.element_stiffness(0.0), symbolic_stiffness_nu0(), rtol=0, atol=1e-14)


@pytest.mark.parametrize("nu", [0.0, 0.3, 0.49])
def test_element_stiffness_symmetric_with_rigid_body_nullspace(nu):
    k0 = fea.element_stiffness(nu)
    np.testing.assert_allclose(k0, k0.T, atol=0)
    tx = np.tile([1.0, 0.0], 4)
    ty = np.tile([0.0, 1.0], 4)
    rot = np.array([[-y, x] for x, y in NODES]).ravel()
    for mode in (tx, ty, rot):
        np.testing.assert_allclose(k0 @ mode, 0.0, atol=1e-14)
    assert np.sum(np.linalg.eigvalsh(k0) > 1e-10) == 5


def test_element_stiffness_is_read_only():
    with pytest.raises(ValueError):
        fea.element_stiffness(0.3)[0, 0] = 1.0


def test_edof_matrix_first_element():
    d = cantilever(3, 2)
    # element 0: upper-left node 0, lower-left node 1, upper-right node 3, lower-right node 4
    assert fea.edof_matrix(d)[0].tolist() == [2, 3, 8, 9, 6, 7, 0, 1]


def test_patch_solve_matches_dense_oracle():
    d = cantilever(3, 3)
    x = np.ones(d.shape)
    F = np.zeros(d.n_dofs)
    tip = (d.nely + 1) * 3 + 1
    F[2 * tip + 1] = -1.0
    F[2 * tip] = 0.3
    mat = fea.SimpMaterial()
    U = fea.assemble_and_solve(d, x, F, mat)
    K = dense_assembly(d, x, mat)
    free = d.free_dofs
    Uo = np.zeros(d.n_dofs)
    Uo[free] = np.linalg.solve(K[np.ix_(free, free)], F[free])
    np.testing.assert_allclose(U, Uo, rtol=0, atol=1e-10 * np.abs(Uo).max())


def test_sparse_assembly_matches_dense_loop():
    d = cantilever(4, 3)
    x = np.random.default_rng(0).uniform(0, 1, d.shape)
    mat = fea.SimpMaterial()
    np.testing.assert_allclose(fea.assemble(d, x, mat).toarray(), dense_assembly(d, x, mat), atol=1e-14)


def test_zero_load_gives_zero_displacement():
    d = build_wheel_domain(16)
    U = fea.assemble_and_solve(d, np.ones(d.shape), np.zeros(d.n_dofs))
    assert not U.any()


def test_linearity_and_quadratic_compliance():
    d = build_wheel_domain(24)
    x = np.random.default_rng(1).uniform(0.2, 1.0, d.shape)
    load = build_surface_loads(d, 0.2)
    U1 = fea.assemble_and_solve(d, x, load)
    U2 = fea.assemble_and_solve(d, x, 2 * load.nodal_forces)
    np.testing.assert_allclose(U2, 2 * U1, rtol=1e-12, atol=1e-12 * np.abs(U1).max())
    c1 = fea.compliance(U1, x, d)
    c2 = fea.compliance(U2, x, d)
    assert c2 == pytest.approx(4 * c1, rel=1e-10)


def test_element_sum_equals_work_form():
    d = build_wheel_domain(16)
    x = np.random.default_rng(2).uniform(0.1, 1.0, d.shape)
    load = build_surface_loads(d, 0.3)
    U = fea.assemble_and_solve(d, x, load)
    assert fea.compliance(U, x, d) == pytest.approx(float(load.nodal_forces @ U), rel=1e-9)


def test_iterative_solver_matches_direct():
    d = build_wheel_domain(24)
    x = np.random.default_rng(4).uniform(0.3, 1.0, d.shape)
    load = build_surface_loads(d, 0.1)
    Ud = fea.assemble_and_solve(d, x, load)
    Ui = fea.assemble_and_solve(d, x, load, iterative=True, tol=1e-10)
    np.testing.assert_allclose(Ui, Ud, atol=1e-8 * np.abs(Ud).max())


def test_sensitivity_matches_finite_differences():
    d = cantilever(8, 8)
    rng = np.random.default_rng(5)
    x = rng.uniform(0.3, 1.0, d.shape)
    F = np.zeros(d.n_dofs)
    F[2 * ((d.nely + 1) * 8 + 4) + 1] = -1.0
    mat = fea.SimpMaterial()

    def c(field):
        return fea.compliance(fea.assemble_and_solve(d, field, F, mat), field, d, mat)

    dc = fea.compliance_sensitivity(fea.assemble_and_solve(d, x, F, mat), x, d, mat)
    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(8):
        for j in range(8):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd[i, j] = (c(xp) - c(xm)) / (2 * h)
    rel = np.abs(dc - fd) / np.maximum(np.abs(fd), 1e-12)
    assert rel.max() < 1e-4


def test_sensitivity_sign_and_zero_density():
    d = build_wheel_domain(16)
    x = np.random.default_rng(6).uniform(0.0, 1.0, d.shape)
    x[3, 4] = 0.0
    U = fea.assemble_and_solve(d, x, build_surface_loads(d, 0.2))
    dc = fea.compliance_sensitivity(U, x, d)
    assert np.all(dc <= 0)
    assert dc[3, 4] == 0.0


def test_unconstrained_system_is_reported_singular():
    d = patch_domain(2, 2, [0])
    F = np.zeros(d.n_dofs)
    F[-1] = 1.0
    with pytest.raises(fea.SingularSystemError):
        fea.assemble_and_solve(d, np.ones(d.shape), F)


def test_shape_validation():
    d = build_wheel_domain(16)
    with pytest.raises(ValueError):
        fea.assemble_and_solve(d, np.ones(d.shape), np.zeros(3))
    with pytest.raises(ValueError):
        fea.SimpMaterial(p=0.5)
