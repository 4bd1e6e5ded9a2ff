"""Lagrange finite element spaces (P1, P2) and Galerkin assembly.

Coefficient vectors are always full-length (one entry per dof, including
constrained ones); the assembled matrices are restricted to free dofs when
``apply_dirichlet`` is set, which keeps them symmetric positive definite for
the Cholesky-based eigensolver.  Assembly accumulates per-element blocks into
COO triplets and lets the CSR conversion sum duplicates, which is
deterministic for a fixed mesh.
"""

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError
from .quadrature import triangle_rule

AField = Union[float, Callable, dict]
CField = Union[float, Callable]


@dataclass(frozen=True)
class Coefficients:
    """Operator data for a(u, v) = (A grad u, grad v) + (c u, v).

    ``a`` is a positive scalar (A = a*I), a callable a(points)->(m,) scalar
    field, or a dict mapping region tags to symmetric 2x2 arrays (piecewise
    constant per region).  ``c`` is a nonnegative scalar or callable.
    """

    a: AField = 1.0
    c: CField = 0.0

    @property
    def constant(self):
        return not callable(self.a) and not callable(self.c) and not isinstance(self.a, dict)

    def a_scalar_at(self, points):
        """Scalar multiplier field at physical points, or None in matrix mode."""
        if isinstance(self.a, dict):
            return None
        if callable(self.a):
            vals = np.asarray(self.a(points.reshape(-1, 2)), float).reshape(points.shape[:-1])
            if not np.all(np.isfinite(vals)):
                raise MeshError("coefficient a evaluated to a non-finite value")
            return vals
        return float(self.a)

    def a_matrix_for(self, region):
        """(ne, 2, 2) matrices in region-table mode, or None."""
        if not isinstance(self.a, dict):
            return None
        missing = set(np.unique(region).tolist()) - set(self.a)
        if missing:
            raise MeshError(f"no coefficient matrix for region tags {sorted(missing)}")
        out = np.empty((region.size, 2, 2))
        for tag, mat in self.a.items():
            m = np.asarray(mat, float)
            if m.shape != (2, 2) or not np.allclose(m, m.T):
                raise MeshError(f"region {tag}: A must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(m)[0] <= 0:
                raise MeshError(f"region {tag}: A is not positive definite")
            out[region == tag] = m
        return out

    def c_at(self, points):
        if callable(self.c):
            vals = np.asarray(self.c(points.reshape(-1, 2)), float).reshape(points.shape[:-1])
            if not np.all(np.isfinite(vals)):
                raise MeshError("coefficient c evaluated to a non-finite value")
            if np.any(vals < -1e-14):
                raise MeshError("coefficient c is negative")
            return vals
        if self.c < 0:
            raise MeshError("coefficient c is negative")
        return float(self.c)


# ---------------------------------------------------------------------------
# reference shape functions


def shape_values(degree, pts):
    """Basis values at reference points; returns (nb, ...) array."""
    pts = np.asarray(pts, float)
    x, y = pts[..., 0], pts[..., 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    if degree == 1:
        return np.stack([l0, l1, l2])
    if degree == 2:
        return np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ])
    raise ValueError(f"unsupported degree {degree}")


def shape_gradients(degree, pts):
    """Reference-coordinate gradients; returns (nb, ..., 2)."""
    pts = np.asarray(pts, float)
    x, y = pts[..., 0], pts[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    if degree == 1:
        g = [(-one, -one), (one, zero), (zero, one)]
    elif degree == 2:
        l0 = 1.0 - x - y
        g = [
            ((1 - 4 * l0), (1 - 4 * l0)),
            (4 * x - 1, zero),
            (zero, 4 * y - 1),
            (4 * y, 4 * x),
            (-4 * y, 4 * (l0 - y)),
            (4 * (l0 - x), -4 * x),
        ]
    else:
        raise ValueError(f"unsupported degree {degree}")
    return np.stack([np.stack(pair, axis=-1) for pair in g])


def shape_hessians(degree):
    """Constant reference Hessians, (nb, 2, 2). P1 basis has none."""
    if degree == 1:
        return np.zeros((3, 2, 2))
    if degree == 2:
        return np.array([
            [[4, 4], [4, 4]],
            [[4, 0], [0, 0]],
            [[0, 0], [0, 4]],
            [[0, 4], [4, 0]],
            [[0, -4], [-4, -8]],
            [[-8, -4], [-4, 0]],
        ], dtype=float)
    raise ValueError(f"unsupported degree {degree}")


# ---------------------------------------------------------------------------
# spaces


class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 with Dirichlet bookkeeping."""

    def __init__(self, mesh, degree):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.n_vertices
        if degree == 1:
            self.element_dofs = mesh.elements.copy()
            self.dof_coords = mesh.vertices.copy()
            dirichlet = np.unique(mesh.boundary_edges)
        else:
            edges, elem_edges, _, _ = mesh.edge_table()
            self.element_dofs = np.hstack([mesh.elements, nv + elem_edges])
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.dof_coords = np.vstack([mesh.vertices, mids])
            key = edges[:, 0] * np.int64(nv) + edges[:, 1]
            bnd = np.sort(mesh.boundary_edges, axis=1)
            bkey = bnd[:, 0] * np.int64(nv) + bnd[:, 1]
            bedge_ids = np.searchsorted(key, np.sort(bkey))
            dirichlet = np.unique(np.concatenate([
                np.unique(mesh.boundary_edges), nv + bedge_ids]))
        self.ndofs = self.dof_coords.shape[0]
        self.dirichlet_dofs = dirichlet
        free_mask = np.ones(self.ndofs, dtype=bool)
        free_mask[dirichlet] = False
        self.free_dofs = np.nonzero(free_mask)[0]
        self.n_free = self.free_dofs.size
        self._geom = None

    # geometry used by every quadrature loop
    def geometry(self):
        if self._geom is None:
            v = self.mesh.vertices[self.mesh.elements]
            B = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
            det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
            inv = np.empty_like(B)
            inv[:, 0, 0] = B[:, 1, 1] / det
            inv[:, 0, 1] = -B[:, 0, 1] / det
            inv[:, 1, 0] = -B[:, 1, 0] / det
            inv[:, 1, 1] = B[:, 0, 0] / det
            self._geom = (v[:, 0], B, det, inv)
        return self._geom

    def physical_points(self, ref_pts):
        """Map reference points to every element: (ne, nq, 2)."""
        v0, B, _, _ = self.geometry()
        return v0[:, None, :] + np.einsum("eij,qj->eqi", B, ref_pts)

    def expand(self, free_vector):
        """Zero-pad a free-dof vector to full length."""
        full = np.zeros(self.ndofs)
        full[self.free_dofs] = free_vector
        return full

    def restrict(self, full_vector):
        return np.asarray(full_vector)[self.free_dofs]


def build_space(mesh, degree):
    return FeSpace(mesh, degree)


# ---------------------------------------------------------------------------
# assembly


def _assembly_rule(space, coeffs):
    # exact to degree 2k for constant data; variable coefficients get 2k+2 so
    # polynomial c (oscillator) is still integrated exactly
    k = space.degree
    return triangle_rule(2 * k if coeffs.constant else 2 * k + 2)


def _to_csr(space, local, apply_dirichlet):
    nb = space.element_dofs.shape[1]
    rows = np.repeat(space.element_dofs, nb, axis=1).ravel()
    cols = np.tile(space.element_dofs, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(space.ndofs, space.ndofs)).tocsr()
    if apply_dirichlet:
        mat = mat[space.free_dofs][:, space.free_dofs]
    mat.sum_duplicates()
    return mat


def assemble_stiffness(space, coeffs, apply_dirichlet=True):
    """Sparse matrix of a(phi_j, phi_i) = (A grad, grad) + (c .,.)."""
    pts, wts = _assembly_rule(space, coeffs)
    _, _, det, Binv = space.geometry()
    gref = shape_gradients(space.degree, pts)           # (nb, nq, 2)
    gphys = np.einsum("eji,bqj->ebqi", Binv, gref)      # (ne, nb, nq, 2)
    xq = space.physical_points(pts)
    amat = coeffs.a_matrix_for(space.mesh.region)
    if amat is None:
        aq = coeffs.a_scalar_at(xq)
        if np.isscalar(aq):
            local = aq * np.einsum("ebqi,edqi,q->ebd", gphys, gphys, wts)
        else:
            local = np.einsum("ebqi,edqi,eq,q->ebd", gphys, gphys, aq, wts)
    else:
        flux = np.einsum("eij,ebqj->ebqi", amat, gphys)
        local = np.einsum("ebqi,edqi,q->ebd", flux, gphys, wts)
    cq = coeffs.c_at(xq)
    if np.isscalar(cq):
        if cq != 0.0:
            vals = shape_values(space.degree, pts)
            local += cq * np.einsum("bq,dq,q->bd", vals, vals, wts)[None]
    else:
        vals = shape_values(space.degree, pts)
        local += np.einsum("bq,dq,eq,q->ebd", vals, vals, cq, wts)
    local *= det[:, None, None]
    return _to_csr(space, local, apply_dirichlet)


def assemble_mass(space, apply_dirichlet=True):
    """Sparse matrix of b(phi_j, phi_i) = (phi_j, phi_i)."""
    pts, wts = triangle_rule(2 * space.degree)
    _, _, det, _ = space.geometry()
    vals = shape_values(space.degree, pts)
    local = np.einsum("bq,dq,q->bd", vals, vals, wts)[None] * det[:, None, None]
    return _to_csr(space, local, apply_dirichlet)


def assemble_load(space, f, apply_dirichlet=True):
    """Load vector b(f, phi_i) for a callable source f(points)->(m,)."""
    pts, wts = triangle_rule(2 * space.degree + 2)
    _, _, det, _ = space.geometry()
    vals = shape_values(space.degree, pts)
    xq = space.physical_points(pts)
    fq = np.asarray(f(xq.reshape(-1, 2)), float).reshape(xq.shape[:2])
    local = np.einsum("bq,eq,q->eb", vals, fq, wts) * det[:, None]
    rhs = np.zeros(space.ndofs)
    np.add.at(rhs, space.element_dofs.ravel(), local.ravel())
    return rhs[space.free_dofs] if apply_dirichlet else rhs


def export_matrixmarket(matrix, path):
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix))


# ---------------------------------------------------------------------------
# point evaluation / interpolation


def _locate(space, point, start=0, max_steps=None):
    """Element containing `point` via neighbour walk with brute-force fallback
    (the walk can stall on non-convex domains)."""
    mesh = space.mesh
    v0, _, _, Binv = space.geometry()
    nbr = mesh.element_neighbors()
    t = start
    steps = max_steps or (2 * int(np.sqrt(mesh.n_elements)) + 16)
    for _ in range(steps):
        xi = Binv[t] @ (point - v0[t])
        bary = np.array([1.0 - xi[0] - xi[1], xi[0], xi[1]])
        worst = int(np.argmin(bary))
        if bary[worst] >= -1e-12:
            return t
        nxt = nbr[t, worst]
        if nxt < 0:
            break
        t = nxt
    # fallback: vectorized scan
    xi = np.einsum("eij,ej->ei", Binv, point - v0)
    bary = np.stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=1)
    inside = np.nonzero(np.min(bary, axis=1) >= -1e-10)[0]
    return int(inside[0]) if inside.size else -1


def evaluate(space, coefficient_vector, points):
    """Values and gradients of a FE function at arbitrary points.

    Returns (values, gradients, inside) where points outside the domain are
    flagged False and carry NaNs.
    """
    points = np.atleast_2d(np.asarray(points, float))
    coeffs = np.asarray(coefficient_vector, float)
    v0, _, _, Binv = space.geometry()
    n = points.shape[0]
    values = np.full(n, np.nan)
    grads = np.full((n, 2), np.nan)
    inside = np.zeros(n, dtype=bool)
    t_prev = 0
    for i, p in enumerate(points):
        t = _locate(space, p, start=t_prev)
        if t < 0:
            continue
        t_prev = t
        xi = Binv[t] @ (p - v0[t])
        local = coeffs[space.element_dofs[t]]
        values[i] = local @ shape_values(space.degree, xi)
        gref = shape_gradients(space.degree, xi)        # (nb, 2)
        grads[i] = (local @ gref) @ Binv[t]             # Binv^T applied from the left
        inside[i] = True
    return values, grads, inside


def interpolate(space, function, zero_dirichlet=False):
    """Nodal interpolant; optionally zero the Dirichlet dofs."""
    vals = np.asarray(function(space.dof_coords), float)
    if vals.shape != (space.ndofs,):
        raise ValueError("function must return one value per dof coordinate")
    out = vals.copy()
    if zero_dirichlet:
        out[space.dirichlet_dofs] = 0.0
    return out


# ---------------------------------------------------------------------------
# norms and projections


def _quadratic_form(space, matrix_full, vec):
    vec = np.asarray(vec, float)
    if vec.shape != (space.ndofs,):
        raise ValueError("expected a full-length coefficient vector")
    val = float(vec @ (matrix_full @ vec))
    if val < -1e-10 * max(1.0, float(vec @ vec)):
        raise ArithmeticError("quadratic form is negative: matrix is not SPD")
    return np.sqrt(max(val, 0.0))


def energy_norm(space, coeffs, vec):
    K = assemble_stiffness(space, coeffs, apply_dirichlet=False)
    return _quadratic_form(space, K, vec)


def b_norm(space, vec):
    M = assemble_mass(space, apply_dirichlet=False)
    return _quadratic_form(space, M, vec)


def prolongate(coarse_space, fine_space, parent_map, vec):
    """Carry a coarse coefficient vector to a refined mesh exactly.

    Every fine dof point lies inside the coarse ancestor of one of its
    elements; evaluating the coarse polynomial there reproduces the same
    function because refinement nests elements.
    """
    if coarse_space.degree != fine_space.degree:
        raise ValueError("prolongation requires matching degrees")
    vec = np.asarray(vec, float)
    fine = fine_space
    host_elem = np.empty(fine.ndofs, dtype=np.int64)
    seen = np.zeros(fine.ndofs, dtype=bool)
    for local in range(fine.element_dofs.shape[1]):
        col = fine.element_dofs[:, local]
        new = ~seen[col]
        host_elem[col[new]] = np.nonzero(new)[0]
        seen[col[new]] = True
    parents = np.array([parent_map[int(e)] for e in host_elem], dtype=np.int64)
    v0, _, _, Binv = coarse_space.geometry()
    rel = fine.dof_coords - v0[parents]
    xi = np.einsum("nij,nj->ni", Binv[parents], rel)
    vals = shape_values(coarse_space.degree, xi)        # (nb, ndofs_fine)
    local = vec[coarse_space.element_dofs[parents]]     # (ndofs_fine, nb)
    return np.einsum("nb,bn->n", local, vals)


def galerkin_project(space, coeffs, value_fn, grad_fn):
    """Energy projection of an analytic function onto the space (R_h w).

    The right-hand side a(w, phi_i) is integrated with the degree 2k+2 rule.
    """
    from scipy.sparse.linalg import spsolve

    pts, wts = triangle_rule(2 * space.degree + 2)
    _, _, det, Binv = space.geometry()
    xq = space.physical_points(pts)
    flat = xq.reshape(-1, 2)
    wgrad = np.asarray(grad_fn(flat), float).reshape(xq.shape[0], xq.shape[1], 2)
    wval = np.asarray(value_fn(flat), float).reshape(xq.shape[:2])
    gref = shape_gradients(space.degree, pts)
    gphys = np.einsum("eji,bqj->ebqi", Binv, gref)
    amat = coeffs.a_matrix_for(space.mesh.region)
    if amat is None:
        aq = coeffs.a_scalar_at(xq)
        aw = wgrad * (aq if np.isscalar(aq) else aq[..., None])
    else:
        aw = np.einsum("eij,eqj->eqi", amat, wgrad)
    local = np.einsum("ebqi,eqi,q->eb", gphys, aw, wts)
    cq = coeffs.c_at(xq)
    if not (np.isscalar(cq) and cq == 0.0):
        vals = shape_values(space.degree, pts)
        cw = wval * cq
        local += np.einsum("bq,eq,q->eb", vals, cw, wts)
    local *= det[:, None]
    rhs = np.zeros(space.ndofs)
    np.add.at(rhs, space.element_dofs.ravel(), local.ravel())
    K = assemble_stiffness(space, coeffs)
    return space.expand(spsolve(K, rhs[space.free_dofs]))


def energy_error(space, coeffs, vec, value_fn, grad_fn, subdivision=0):
    """|| w - u_h ||_a by quadrature against an analytic w."""
    from .quadrature import triangle_rule_subdivided

    deg = 2 * space.degree + 2
    pts, wts = (triangle_rule_subdivided(deg, subdivision) if subdivision
                else triangle_rule(deg))
    _, _, det, Binv = space.geometry()
    xq = space.physical_points(pts)
    flat = xq.reshape(-1, 2)
    dval = np.asarray(value_fn(flat), float).reshape(xq.shape[:2])
    dgrad = np.asarray(grad_fn(flat), float).reshape(xq.shape[0], xq.shape[1], 2)
    vals = shape_values(space.degree, pts)
    gref = shape_gradients(space.degree, pts)
    local = np.asarray(vec, float)[space.element_dofs]
    dval -= np.einsum("eb,bq->eq", local, vals)
    gphys = np.einsum("eji,bqj->ebqi", Binv, gref)
    dgrad -= np.einsum("eb,ebqi->eqi", local, gphys)
    amat = coeffs.a_matrix_for(space.mesh.region)
    if amat is None:
        aq = coeffs.a_scalar_at(xq)
        agrad2 = np.einsum("eqi,eqi->eq", dgrad, dgrad)
        agrad2 = agrad2 * (aq if np.isscalar(aq) else aq)
    else:
        agrad2 = np.einsum("eqi,eij,eqj->eq", dgrad, amat, dgrad)
    cq = coeffs.c_at(xq)
    dens = agrad2 + cq * dval ** 2
    return float(np.sqrt(np.einsum("eq,q,e->", dens, wts, det)))
