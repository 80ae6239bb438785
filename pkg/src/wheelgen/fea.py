"""Plane-stress finite elements on the regular grid of unit square elements."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import LoadCase, WheelDomain

DIRECT_SOLVE_MAX_RESOLUTION = 128


class SingularSystemError(RuntimeError):
    """The stiffness system could not be solved (no load path or bad data)."""


@dataclass(frozen=True)
class SimpMaterial:
    E0: float = 1.0
    E_min: float = 1e-9
    p: float = 3.0
    nu: float = 0.3

    def __post_init__(self):
        if not self.E_min > 0:
            raise ValueError("E_min must be positive")
        if self.E0 <= self.E_min:
            raise ValueError("E0 must exceed E_min")
        if self.p < 1:
            raise ValueError("penalization p must be >= 1")

    def modulus(self, density: np.ndarray) -> np.ndarray:
        return self.E_min + density ** self.p * (self.E0 - self.E_min)


@lru_cache(maxsize=16)
def _element_stiffness(nu: float) -> np.ndarray:
    a11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]])
    a12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]])
    b11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]])
    b12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]])
    a = np.block([[a11, a12], [a12.T, a11]])
    b = np.block([[b11, b12], [b12.T, b11]])
    k0 = (a + nu * b) / (24.0 * (1.0 - nu * nu))
    k0.setflags(write=False)
    return k0


def element_stiffness(poisson_ratio: float = 0.3) -> np.ndarray:
    """8x8 stiffness of a unit square bilinear element at E = 1.

    Local node order is lower-left, lower-right, upper-right, upper-left
    (counterclockwise in the physical frame), two dofs per node.
    """
    if not -1.0 < poisson_ratio < 0.5:
        raise ValueError("Poisson ratio must lie in (-1, 0.5)")
    return _element_stiffness(float(poisson_ratio))


@lru_cache(maxsize=16)
def _edof_matrix(nelx: int, nely: int) -> np.ndarray:
    ex, ey = np.divmod(np.arange(nelx * nely), nely)
    n_ul = (nely + 1) * ex + ey
    n_ll = n_ul + 1
    n_ur = n_ul + (nely + 1)
    n_lr = n_ur + 1
    edof = np.stack([2 * n_ll, 2 * n_ll + 1, 2 * n_lr, 2 * n_lr + 1,
                     2 * n_ur, 2 * n_ur + 1, 2 * n_ul, 2 * n_ul + 1], axis=1)
    edof.setflags(write=False)
    return edof


def edof_matrix(domain: WheelDomain) -> np.ndarray:
    """Global dof indices of each element, shape ``(n_elements, 8)``."""
    return _edof_matrix(domain.nelx, domain.nely)


def _column(field: np.ndarray, domain: WheelDomain) -> np.ndarray:
    arr = np.asarray(field, dtype=float)
    if arr.shape != domain.shape:
        raise ValueError(f"density field shape {arr.shape} != domain shape {domain.shape}")
    return arr.ravel(order="F")


def assemble(domain: WheelDomain, physical_density: np.ndarray,
             material: SimpMaterial = SimpMaterial()) -> sp.csc_matrix:
    """Global stiffness matrix over all dofs (no boundary conditions applied)."""
    x = _column(physical_density, domain)
    if not np.all(np.isfinite(x)):
        raise ValueError("densities must be finite")
    if x.min() < 0 or x.max() > 1:
        raise ValueError("densities must lie in [0, 1]")
    k0 = element_stiffness(material.nu)
    edof = edof_matrix(domain)
    E = material.modulus(x)
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    vals = (E[:, None] * k0.ravel()[None, :]).ravel()
    n = domain.n_dofs
    # coo -> csc sums duplicates in a fixed order, so the result is deterministic
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


def assemble_and_solve(domain: WheelDomain, physical_density: np.ndarray,
                       loads: LoadCase | np.ndarray,
                       material: SimpMaterial = SimpMaterial(),
                       tol: float | None = None,
                       iterative: bool | None = None) -> np.ndarray:
    """Solve ``K U = F`` with the fixed dofs eliminated; returns the full ``U``.

    Dofs of nodes enclosed by passive void are held at zero (see
    ``WheelDomain.solve_dofs``).

    Uses a sparse direct factorization up to ``DIRECT_SOLVE_MAX_RESOLUTION``
    and Jacobi-preconditioned CG above it (or when ``iterative`` is set).
    ``tol`` bounds the relative residual (default 1e-8); direct solves refine
    towards a hundredth of it.
    """
    F = np.asarray(loads.nodal_forces if isinstance(loads, LoadCase) else loads, dtype=float)
    if F.shape != (domain.n_dofs,):
        raise ValueError("force vector does not match the domain dofs")
    K = assemble(domain, physical_density, material)
    free = domain.solve_dofs
    held = np.ones(domain.n_dofs, bool)
    held[free] = False
    held[domain.fixed_dofs] = False
    if np.any(F[held]):
        raise ValueError("load applied to a node enclosed by passive void")
    U = np.zeros(domain.n_dofs)
    Ff = F[free]
    if not np.any(Ff):
        return U
    if iterative is None:
        iterative = max(domain.nelx, domain.nely) > DIRECT_SOLVE_MAX_RESOLUTION
    if tol is None:
        tol = 1e-8
    Kff = K[free][:, free]
    if iterative:
        d = Kff.diagonal()
        if np.any(d <= 0):
            raise SingularSystemError("non-positive diagonal in stiffness matrix")
        precond = spla.LinearOperator(Kff.shape, matvec=lambda v: v / d)
        Uf, info = spla.cg(Kff, Ff, rtol=tol, atol=0.0, M=precond,
                           maxiter=20 * Kff.shape[0])
        if info != 0:
            raise SingularSystemError(f"conjugate gradient did not converge (info={info})")
    else:
        try:
            lu = spla.splu(Kff, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        Uf = lu.solve(Ff)
        # a few refinement sweeps recover accuracy lost to the E0/E_min contrast
        for _ in range(3):
            r = Ff - Kff @ Uf
            if not np.all(np.isfinite(r)) or np.linalg.norm(r) <= 1e-2 * tol * np.linalg.norm(Ff):
                break
            Uf = Uf + lu.solve(r)
    if not np.all(np.isfinite(Uf)):
        raise SingularSystemError("non-finite displacements")
    resid = np.linalg.norm(Kff @ Uf - Ff) / max(np.linalg.norm(Ff), 1e-300)
    if resid > tol:
        raise SingularSystemError(f"solve residual {resid:.3e} exceeds tolerance {tol:.1e}")
    U[free] = Uf
    return U


def element_energies(U: np.ndarray, domain: WheelDomain,
                     material: SimpMaterial = SimpMaterial()) -> np.ndarray:
    """``u_e^T k0 u_e`` per element (unit modulus), column-major element order."""
    U = np.asarray(U, dtype=float)
    if U.shape != (domain.n_dofs,):
        raise ValueError("displacement vector does not match the domain dofs")
    ue = U[edof_matrix(domain)]
    return np.einsum("ij,jk,ik->i", ue, element_stiffness(material.nu), ue)


def compliance(U: np.ndarray, physical_density: np.ndarray, domain: WheelDomain,
               material: SimpMaterial = SimpMaterial()) -> float:
    """Compliance as the element sum ``sum_e E_e u_e^T k0 u_e``."""
    x = _column(physical_density, domain)
    ce = element_energies(U, domain, material)
    return float(np.sum(material.modulus(x) * ce))


def compliance_sensitivity(U: np.ndarray, physical_density: np.ndarray,
                           domain: WheelDomain,
                           material: SimpMaterial = SimpMaterial()) -> np.ndarray:
    """Derivative of compliance w.r.t. each physical density, shape ``(nely, nelx)``."""
    x = _column(physical_density, domain)
    ce = element_energies(U, domain, material)
    dc = -material.p * x ** (material.p - 1) * (material.E0 - material.E_min) * np.maximum(ce, 0.0)
    return dc.reshape(domain.shape, order="F")
