"""P1 finite-element assembly on structured triangle meshes.

Scalar fields are nodal vectors of length N. Displacements are interleaved,
dof 2*i is the x component at node i and 2*i + 1 the y component.
Coefficients live per element.
"""

from typing import Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from topt.linsys import as_sparse
from topt.mesh import GAMMA1, Mesh

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0],
                        [1.0, 2.0, 1.0],
                        [1.0, 1.0, 2.0]]) / 12.0


class AssemblyError(ValueError):
    """Invalid coefficients or field shapes for assembly."""


def shape_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the three barycentric basis functions, shape (T, 3, 2)."""
    if "grads" not in mesh._cache:
        p = mesh.nodes[mesh.triangles]
        x, y = p[:, :, 0], p[:, :, 1]
        two_area = 2.0 * mesh.triangle_areas()
        bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        grads = np.stack([bx, by], axis=2) / two_area[:, None, None]
        grads.setflags(write=False)
        mesh._cache["grads"] = grads
    return mesh._cache["grads"]


def _scatter(rows_per_elem: np.ndarray, local: np.ndarray, size: int) -> sp.csr_matrix:
    k = rows_per_elem.shape[1]
    rows = np.repeat(rows_per_elem, k, axis=1).ravel()
    cols = np.tile(rows_per_elem, (1, k)).ravel()
    return as_sparse(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)))


def _check_coeff(mesh: Mesh, coeff, signed: bool) -> np.ndarray:
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.num_triangles,))
    if not np.all(np.isfinite(coeff)):
        raise AssemblyError("Coefficient field has non-finite entries")
    if not signed and np.any(coeff < 0):
        raise AssemblyError(f"Negative coefficient (min {coeff.min():.3e}) rejected")
    return coeff


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix. Cached on the mesh; treat as read-only."""
    if "mass" not in mesh._cache:
        areas = mesh.triangle_areas()
        local = areas[:, None, None] * _LOCAL_MASS[None, :, :]
        mesh._cache["mass"] = _scatter(mesh.triangles, local, mesh.num_nodes)
    return mesh._cache["mass"]


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Row sums of the consistent mass matrix: one third of each adjacent triangle area."""
    if "lumped" not in mesh._cache:
        w = np.repeat(mesh.triangle_areas() / 3.0, 3)
        lumped = np.bincount(mesh.triangles.ravel(), weights=w, minlength=mesh.num_nodes)
        lumped.setflags(write=False)
        mesh._cache["lumped"] = lumped
    return mesh._cache["lumped"]


def _unit_stiffness(mesh: Mesh) -> np.ndarray:
    if "unit_k" not in mesh._cache:
        g = shape_gradients(mesh)
        local = mesh.triangle_areas()[:, None, None] * np.einsum("tik,tjk->tij", g, g)
        local.setflags(write=False)
        mesh._cache["unit_k"] = local
    return mesh._cache["unit_k"]


def assemble_stiffness(mesh: Mesh, coeff, signed: bool = False) -> sp.csr_matrix:
    """K[i, j] = sum_T coeff(T) * int_T grad(phi_i) . grad(phi_j).

    signed=True admits negative coefficients (transport operators with
    non-positive densities); the result is then only symmetric.
    """
    coeff = _check_coeff(mesh, coeff, signed)
    local = coeff[:, None, None] * _unit_stiffness(mesh)
    return _scatter(mesh.triangles, local, mesh.num_nodes)


def strain_matrices(mesh: Mesh) -> np.ndarray:
    """Voigt strain-displacement matrices B (T, 3, 6) for [exx, eyy, 2 exy]."""
    if "bmat" not in mesh._cache:
        g = shape_gradients(mesh)
        B = np.zeros((mesh.num_triangles, 3, 6))
        B[:, 0, 0::2] = g[:, :, 0]
        B[:, 1, 1::2] = g[:, :, 1]
        B[:, 2, 0::2] = g[:, :, 1]
        B[:, 2, 1::2] = g[:, :, 0]
        B.setflags(write=False)
        mesh._cache["bmat"] = B
    return mesh._cache["bmat"]


def elasticity_tensor(lambda1: float, lambda2: float) -> np.ndarray:
    """Voigt form of sigma = 2 lambda1 eps + lambda2 tr(eps) I."""
    return np.array([[2.0 * lambda1 + lambda2, lambda2, 0.0],
                     [lambda2, 2.0 * lambda1 + lambda2, 0.0],
                     [0.0, 0.0, lambda1]])


def element_dofs(mesh: Mesh) -> np.ndarray:
    tri = mesh.triangles
    dofs = np.empty((mesh.num_triangles, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * tri
    dofs[:, 1::2] = 2 * tri + 1
    return dofs


def assemble_elastic_stiffness(mesh: Mesh, coeff, lambda1: float, lambda2: float) -> sp.csr_matrix:
    """2N x 2N matrix of sum_T coeff(T) * int_T eps(phi_i) : sigma(phi_j)."""
    if not (lambda1 > 0 and lambda2 > 0):
        raise AssemblyError(f"Lame constants must be positive, got {lambda1}, {lambda2}")
    coeff = _check_coeff(mesh, coeff, signed=False)
    key = ("unit_ke", float(lambda1), float(lambda2))
    if key not in mesh._cache:
        B = strain_matrices(mesh)
        D = elasticity_tensor(lambda1, lambda2)
        local = mesh.triangle_areas()[:, None, None] * np.einsum("tki,kl,tlj->tij", B, D, B)
        local.setflags(write=False)
        mesh._cache[key] = local
    local = coeff[:, None, None] * mesh._cache[key]
    return _scatter(element_dofs(mesh), local, 2 * mesh.num_nodes)


Load = Union[float, Sequence[float]]


def assemble_load(mesh: Mesh, f: Load, g: Load) -> np.ndarray:
    """F_i = int_D f phi_i + int_Gamma1 g phi_i for constant f, g.

    Scalar f, g give an N-vector; 2-vectors give an interleaved 2N-vector.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if f.shape != g.shape or f.shape[0] not in (1, 2):
        raise AssemblyError(f"f and g must both be scalars or both 2-vectors, got {f.shape} and {g.shape}")
    m = f.shape[0]
    n = mesh.num_nodes

    node_area = lumped_mass(mesh)
    F = np.zeros((n, m))
    F += node_area[:, None] * f[None, :]

    edges = mesh.edges_with_tag(GAMMA1)
    if len(edges) and np.any(g):
        lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
        half = np.repeat(lengths / 2.0, 2)
        edge_share = np.bincount(edges.ravel(), weights=half, minlength=n)
        F += edge_share[:, None] * g[None, :]
    return F.ravel()


def apply_dirichlet(A: sp.csr_matrix, b: np.ndarray, fixed) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric elimination of homogeneous Dirichlet dofs.

    Fixed rows and columns are zeroed, the diagonal set to one and the rhs
    entry to zero.
    """
    fixed = np.unique(np.asarray(fixed, dtype=np.int64))
    if fixed.size == 0:
        raise AssemblyError("Empty Dirichlet set: the state problem is not coercive")
    n = A.shape[0]
    if fixed.min() < 0 or fixed.max() >= n:
        raise AssemblyError("Dirichlet dof index out of range")
    keep = np.ones(n)
    keep[fixed] = 0.0
    D = sp.diags(keep)
    A_bc = as_sparse(D @ A @ D + sp.diags(1.0 - keep))
    b_bc = np.asarray(b, dtype=float) * keep
    return A_bc, b_bc


def element_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Per-element gradient (T, 2) of a scalar field, or symmetric strain (T, 2, 2) of a displacement."""
    u = np.asarray(u, dtype=float)
    g = shape_gradients(mesh)
    n = mesh.num_nodes
    if u.shape == (n,):
        return np.einsum("ti,tik->tk", u[mesh.triangles], g)
    if u.shape == (2 * n,):
        U = u.reshape(n, 2)[mesh.triangles]  # (T, 3, 2)
        grad = np.einsum("tic,tik->tck", U, g)  # grad[t, c, k] = d u_c / d x_k
        return 0.5 * (grad + np.transpose(grad, (0, 2, 1)))
    raise AssemblyError(f"Field of shape {u.shape} does not match a mesh with {n} nodes")


def element_average(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Vertex mean of a nodal field on every triangle."""
    return np.asarray(nodal, dtype=float)[mesh.triangles].mean(axis=1)


def project_to_nodes(mesh: Mesh, e: np.ndarray) -> np.ndarray:
    """Lumped L2 projection of a scalar element field onto the nodes."""
    e = np.asarray(e, dtype=float)
    if e.shape != (mesh.num_triangles,):
        raise AssemblyError(f"Element field of shape {e.shape} does not match {mesh.num_triangles} triangles")
    w = np.repeat(mesh.triangle_areas() / 3.0 * e, 3)
    num = np.bincount(mesh.triangles.ravel(), weights=w, minlength=mesh.num_nodes)
    return num / lumped_mass(mesh)
