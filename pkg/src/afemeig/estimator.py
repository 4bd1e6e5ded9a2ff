"""Residual a posteriori indicators and oscillations, per element.

For each member function u with datum r0 (lambda*u for eigenpairs, f for
source problems) the element residual is

    R_T = r0 + div(A grad u) - c u,

and the jump J_E = [[A grad u]] . nu on interior edges.  The local indicator

    eta^2_T = h_T^2 ||R_T||^2_{0,T} + sum_{E in dT} h_E ||J_E||^2_{0,E}

sums each interior edge fully into BOTH adjacent elements (no 1/2 factor),
and a cluster's indicator is the plain sum over its members.  Oscillations
subtract the L2 projection of R_T onto P_{k-1}(T) and of J_E onto P_k(E).
"""

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fem import shape_gradients, shape_hessians, shape_values
from .quadrature import interval_rule, triangle_rule


@dataclass
class IndicatorField:
    """Per-element squared indicators and oscillations."""

    eta2: np.ndarray
    osc2: np.ndarray

    @property
    def total_eta2(self):
        return float(np.sum(self.eta2))

    @property
    def total_osc2(self):
        return float(np.sum(self.osc2))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element_id", "eta2", "osc2"])
            for i, (e, o) in enumerate(zip(self.eta2, self.osc2)):
                w.writerow([i, repr(float(e)), repr(float(o))])


@lru_cache(maxsize=None)
def _tri_projector(degree_poly, rule_degree):
    """Quadrature-point L2 projector onto reference monomials of degree <= p.

    The affine Jacobian is constant per element, so projecting in reference
    coordinates equals the physical L2 projection.
    """
    pts, wts = triangle_rule(rule_degree)
    monos = [(0, 0)]
    if degree_poly >= 1:
        monos += [(1, 0), (0, 1)]
    if degree_poly >= 2:
        monos += [(2, 0), (1, 1), (0, 2)]
    phi = np.stack([pts[:, 0] ** a * pts[:, 1] ** b for a, b in monos])
    gram = np.einsum("iq,jq,q->ij", phi, phi, wts)
    proj = phi.T @ np.linalg.solve(gram, phi * wts[None, :])
    return proj  # (nq, nq), maps point values to projected point values


@lru_cache(maxsize=None)
def _edge_projector(degree_poly, npoints):
    t, w = interval_rule(npoints)
    phi = np.stack([t ** p for p in range(degree_poly + 1)])
    gram = np.einsum("iq,jq,q->ij", phi, phi, w)
    proj = phi.T @ np.linalg.solve(gram, phi * w[None, :])
    return proj


def _a_apply(coeffs, region, points, grads):
    """A grad u at edge quadrature points; grads is (nmem, nE, nq, 2)."""
    amat = coeffs.a_matrix_for(region)
    if amat is not None:
        return np.einsum("eij,meqj->meqi", amat, grads)
    aq = coeffs.a_scalar_at(points)
    if np.isscalar(aq):
        return aq * grads
    return grads * aq[..., None]


def _div_a_grad(coeffs, space, xq, ugrad, hess_phys):
    """div(A grad u) at interior quadrature points, (ne, nq).

    hess_phys is the per-element constant physical Hessian (ne, 2, 2): exact
    for P1 (zero) and P2.  Piecewise-constant A contributes A:H; a variable
    scalar field adds grad(a) . grad(u) with a central-difference gradient.
    """
    amat = coeffs.a_matrix_for(space.mesh.region)
    if amat is not None:
        return np.einsum("eij,eij->e", amat, hess_phys)[:, None] * np.ones(xq.shape[1])
    a = coeffs.a
    lap = np.einsum("eii->e", hess_phys)
    if not callable(a):
        return float(a) * lap[:, None] * np.ones(xq.shape[1])
    aq = coeffs.a_scalar_at(xq)
    h = 1e-6
    flat = xq.reshape(-1, 2)
    gax = (np.asarray(a(flat + [h, 0.0]), float) - np.asarray(a(flat - [h, 0.0]), float)) / (2 * h)
    gay = (np.asarray(a(flat + [0.0, h]), float) - np.asarray(a(flat - [0.0, h]), float)) / (2 * h)
    ga = np.stack([gax, gay], axis=-1).reshape(xq.shape)
    return aq * lap[:, None] + np.einsum("eqi,eqi->eq", ga, ugrad)


def _interior_terms(space, coeffs, vectors, lams, sources, rule_degree):
    mesh = space.mesh
    pts, wts = triangle_rule(rule_degree)
    _, _, det, Binv = space.geometry()
    xq = space.physical_points(pts)
    h2 = mesh.diameters() ** 2
    vals = shape_values(space.degree, pts)
    gref = shape_gradients(space.degree, pts)
    gphys = np.einsum("eji,bqj->ebqi", Binv, gref)
    href = shape_hessians(space.degree)
    cq = coeffs.c_at(xq)
    proj = _tri_projector(space.degree - 1, rule_degree)
    eta2 = np.zeros(mesh.n_elements)
    osc2 = np.zeros(mesh.n_elements)
    for m in range(vectors.shape[1]):
        local = vectors[:, m][space.element_dofs]
        uq = np.einsum("eb,bq->eq", local, vals)
        ugrad = np.einsum("eb,ebqi->eqi", local, gphys)
        hess_ref = np.einsum("eb,bij->eij", local, href)
        hess_phys = np.einsum("eki,ekl,elj->eij", Binv, hess_ref, Binv)
        if sources is not None:
            r0 = np.asarray(sources[m](xq.reshape(-1, 2)), float).reshape(xq.shape[:2])
        else:
            r0 = lams[m] * uq
        R = r0 + _div_a_grad(coeffs, space, xq, ugrad, hess_phys) - cq * uq
        Rbar = R @ proj.T
        eta2 += h2 * det * np.einsum("eq,q->e", R ** 2, wts)
        osc2 += h2 * det * np.einsum("eq,q->e", (R - Rbar) ** 2, wts)
    return eta2, osc2


def _edge_terms(space, coeffs, vectors, npoints):
    """Squared jump indicator and oscillation accumulated per element."""
    mesh = space.mesh
    edges, _, owners, _ = mesh.edge_table()
    interior = owners[:, 1] >= 0
    e_int = edges[interior]
    own = owners[interior]
    if e_int.shape[0] == 0:
        z = np.zeros(mesh.n_elements)
        return z, z.copy(), np.zeros(0)
    t, w = interval_rule(npoints)
    va = mesh.vertices[e_int[:, 0]]
    vb = mesh.vertices[e_int[:, 1]]
    tang = vb - va
    lens = np.linalg.norm(tang, axis=1)
    nu = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / lens[:, None]
    xq = va[:, None, :] + t[None, :, None] * tang[:, None, :]
    v0, _, _, Binv = space.geometry()
    proj = _edge_projector(space.degree, npoints)

    flux = []
    for side in (0, 1):
        el = own[:, side]
        rel = xq - v0[el][:, None, :]
        xi = np.einsum("eij,eqj->eqi", Binv[el], rel)
        gref = shape_gradients(space.degree, xi)            # (nb, nE, nq, 2)
        gphys = np.einsum("eji,beqj->beqi", Binv[el], gref)
        dofs = space.element_dofs[el]                        # (nE, nb)
        gm = np.einsum("emb,beqi->meqi",
                       vectors[dofs].transpose(0, 2, 1), gphys)  # (nmem, nE, nq, 2)
        flux.append(_a_apply(coeffs, mesh.region[el], xq, gm))
    jump = np.einsum("meqi,ei->meq", flux[0] - flux[1], nu)

    wl = w[None, None, :] * lens[None, :, None]
    jump2 = np.einsum("meq->e", jump ** 2 * wl)              # int_E J^2 ds, all members
    jdiff = jump - jump @ proj.T
    osc_e = np.einsum("meq->e", jdiff ** 2 * wl)
    eta_edge = lens * jump2
    osc_edge = lens * osc_e

    eta2 = np.zeros(mesh.n_elements)
    osc2 = np.zeros(mesh.n_elements)
    for side in (0, 1):   # each interior edge contributes fully to both owners
        np.add.at(eta2, own[:, side], eta_edge)
        np.add.at(osc2, own[:, side], osc_edge)
    return eta2, osc2, eta_edge


def _indicators(space, coeffs, vectors, lams=None, sources=None):
    vectors = np.asarray(vectors, float)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    if vectors.shape[0] != space.ndofs:
        raise ValueError("solution vectors do not live on this space")
    if sources is None and (lams is None or len(lams) != vectors.shape[1]):
        raise ValueError("one eigenvalue per cluster member required")
    if sources is not None and len(sources) != vectors.shape[1]:
        raise ValueError("one source field per solution vector required")
    rule_degree = 2 * space.degree + 2
    eta_i, osc_i = _interior_terms(space, coeffs, vectors, lams, sources, rule_degree)
    eta_e, osc_e, _ = _edge_terms(space, coeffs, vectors, space.degree + 2)
    return IndicatorField(eta2=eta_i + eta_e, osc2=osc_i + osc_e)


def eigen_indicators(space, coeffs, cluster):
    """Cluster indicator: sum of member indicators with their own lambdas."""
    return _indicators(space, coeffs, cluster.vectors, lams=np.asarray(cluster.values))


def source_indicators(space, coeffs, solution_vectors, source_fields):
    """Vector source-problem indicator with f_i in place of lambda*u."""
    return _indicators(space, coeffs, solution_vectors, sources=list(source_fields))


def edge_jump_total(space, coeffs, vectors):
    """Independent edge-loop total of h_E ||J_E||^2 (each edge counted once)."""
    vectors = np.asarray(vectors, float)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    _, _, eta_edge = _edge_terms(space, coeffs, vectors, space.degree + 2)
    return float(np.sum(eta_edge))


# ---------------------------------------------------------------------------
# oscillation Lipschitz harness


def _patch_h1_norms(space, coeffs, diff):
    """|| . ||_{1, omega_T} of a vector FE function, per element."""
    pts, wts = triangle_rule(2 * space.degree)
    _, _, det, Binv = space.geometry()
    vals = shape_values(space.degree, pts)
    gref = shape_gradients(space.degree, pts)
    gphys = np.einsum("eji,bqj->ebqi", Binv, gref)
    per_elem = np.zeros(space.mesh.n_elements)
    for m in range(diff.shape[1]):
        local = diff[:, m][space.element_dofs]
        uq = np.einsum("eb,bq->eq", local, vals)
        gq = np.einsum("eb,ebqi->eqi", local, gphys)
        dens = uq ** 2 + np.einsum("eqi,eqi->eq", gq, gq)
        per_elem += det * np.einsum("eq,q->e", dens, wts)
    nbr = space.mesh.element_neighbors()
    patch = per_elem.copy()
    for j in range(3):
        has = nbr[:, j] >= 0
        patch[has] += per_elem[nbr[has, j]]
    return np.sqrt(patch)


def calibrate_oscillation_constant(space, coeffs, n_fields=100, seed=0, margin=1.05):
    """Empirical Lipschitz constant: max of osc(V, T) / ||V||_{1, omega_T}
    over random coefficient fields, inflated by `margin`."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_fields):
        v = rng.standard_normal((space.ndofs, 1))
        v[space.dirichlet_dofs, :] = 0.0
        osc = np.sqrt(source_indicators(space, coeffs, v,
                                        [lambda p: np.zeros(p.shape[0])]).osc2)
        nrm = _patch_h1_norms(space, coeffs, v)
        mask = nrm > 1e-14
        if np.any(mask):
            worst = max(worst, float(np.max(osc[mask] / nrm[mask])))
    return margin * worst


def oscillation_lipschitz_check(space, coeffs, V, W, c_est=None):
    """Per-element slack of osc(V,T) <= osc(W,T) + C ||V - W||_{1, omega_T}.

    Negative or zero slack means the bound holds on that element.  This is a
    test harness; it never runs in the solve path.
    """
    V = np.atleast_2d(np.asarray(V, float).T).T
    W = np.atleast_2d(np.asarray(W, float).T).T
    if V.shape != W.shape:
        raise ValueError("V and W must have the same shape")
    if c_est is None:
        c_est = calibrate_oscillation_constant(space, coeffs)
    zeros = [lambda p: np.zeros(p.shape[0])] * V.shape[1]
    osc_v = np.sqrt(source_indicators(space, coeffs, V, zeros).osc2)
    osc_w = np.sqrt(source_indicators(space, coeffs, W, zeros).osc2)
    return osc_v - osc_w - c_est * _patch_h1_norms(space, coeffs, V - W)
