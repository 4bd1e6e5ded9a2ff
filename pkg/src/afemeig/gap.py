"""Energy-norm distance between exact and discrete eigenspaces.

The directed distance from X to Y is sup over the b-unit sphere of X of the
a-orthogonal projection error onto Y.  With Gram matrices

    G = a-Gram of X,  B = b-Gram of X,  S = a-Gram of Y,  P = cross a-terms,

the squared projection error of the X element with coefficients alpha is
alpha^T (G - P S^-1 P^T) alpha, and the sup over {alpha : alpha^T B alpha = 1}
is the largest eigenvalue of the pencil (G - P S^-1 P^T, B).  The returned
distance re-integrates the residual of the maximizing direction pointwise,
which sidesteps the Gram cancellation that would otherwise floor tiny
distances at sqrt(machine eps).  The gap is the max of the two directed
distances, each computed by the same formula with the roles swapped.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .fem import assemble_mass, assemble_stiffness, shape_gradients, shape_values
from .quadrature import triangle_rule_subdivided


@dataclass(frozen=True)
class ExactFunction:
    """Closed-form function with evaluable gradient; both take (m, 2) arrays."""

    value: Callable
    grad: Callable


@dataclass
class ExactEigenspace:
    """Analytic eigenvalue with a b-orthonormal closed-form basis."""

    value: float
    basis: list
    b_orthonormal: bool = True

    @property
    def dim(self):
        return len(self.basis)


class GapError(RuntimeError):
    pass


def directed_distance_from_grams(from_a, cross, to_a, from_b):
    """sup-inf distance from Gram data alone (kernel of the sampling oracle)."""
    from_a = np.asarray(from_a, float)
    cross = np.atleast_2d(np.asarray(cross, float))
    to_a = np.atleast_2d(np.asarray(to_a, float))
    from_b = np.asarray(from_b, float)
    try:
        proj = cross @ np.linalg.solve(to_a, cross.T)
    except np.linalg.LinAlgError as exc:
        raise GapError(f"degenerate target space: {exc}") from exc
    D = from_a - proj
    D = 0.5 * (D + D.T)
    mu = sla.eigh(D, 0.5 * (from_b + from_b.T), eigvals_only=True)
    return float(np.sqrt(max(mu[-1], 0.0)))


class _SideData:
    """Point values, gradients and A-weighted gradients of one basis."""

    def __init__(self, vals, grads, agrads):
        self.vals = vals        # (q, ne, nq)
        self.grads = grads      # (q, ne, nq, 2)
        self.agrads = agrads

    @property
    def dim(self):
        return self.vals.shape[0]


class _GapWorkspace:
    """Shared quadrature data for every distance between two fixed spaces."""

    def __init__(self, exact, cluster, space, coeffs, K_full=None, M_full=None,
                 subdivision=1):
        if K_full is None:
            K_full = assemble_stiffness(space, coeffs, apply_dirichlet=False)
        if M_full is None:
            M_full = assemble_mass(space, apply_dirichlet=False)
        V = cluster.vectors
        if V.shape[0] != space.ndofs:
            raise GapError("cluster vectors do not live on the given space")

        pts, wts = triangle_rule_subdivided(2 * space.degree + 2, subdivision)
        _, _, det, Binv = space.geometry()
        xq = space.physical_points(pts)
        flat = xq.reshape(-1, 2)
        ne, nq = xq.shape[:2]
        self.wdet = wts[None, :] * det[:, None]

        amat = coeffs.a_matrix_for(space.mesh.region)
        self._ascalar = coeffs.a_scalar_at(xq) if amat is None else None
        self._amat = amat
        self.cq = coeffs.c_at(xq)

        uvals = np.empty((exact.dim, ne, nq))
        ugrads = np.empty((exact.dim, ne, nq, 2))
        for i, fn in enumerate(exact.basis):
            uvals[i] = np.asarray(fn.value(flat), float).reshape(ne, nq)
            ugrads[i] = np.asarray(fn.grad(flat), float).reshape(ne, nq, 2)
        self.exact = _SideData(uvals, ugrads, self._apply_a(ugrads))

        vals = shape_values(space.degree, pts)
        gref = shape_gradients(space.degree, pts)
        gphys = np.einsum("eji,bqj->ebqi", Binv, gref)
        local = V[space.element_dofs]                       # (ne, nb, qd)
        vvals = np.einsum("ebl,bq->leq", local, vals)
        vgrads = np.einsum("ebl,ebqi->leqi", local, gphys)
        self.discrete = _SideData(vvals, vgrads, self._apply_a(vgrads))

        self.G = self._a_gram(self.exact, self.exact)
        self.B = self._b_gram(self.exact, self.exact)
        self.P = self._a_gram(self.exact, self.discrete)
        self.S = V.T @ (K_full @ V)
        self.SM = V.T @ (M_full @ V)

    def _apply_a(self, grads):
        if self._amat is not None:
            return np.einsum("eij,meqj->meqi", self._amat, grads)
        a = self._ascalar
        return grads * a if np.isscalar(a) else grads * a[None, :, :, None]

    def _a_gram(self, left, right):
        g = np.einsum("meqi,neqi,eq->mn", left.agrads, right.grads, self.wdet)
        g += np.einsum("meq,neq,eq->mn", left.vals * self.cq, right.vals, self.wdet)
        return g

    def _b_gram(self, left, right):
        return np.einsum("meq,neq,eq->mn", left.vals, right.vals, self.wdet)

    def _residual_norm(self, side_from, alpha, side_to, c):
        """|| sum alpha_i u_i - sum c_l v_l ||_a by pointwise quadrature."""
        rvals = np.einsum("m,meq->eq", alpha, side_from.vals)
        rvals -= np.einsum("l,leq->eq", c, side_to.vals)
        rgrads = np.einsum("m,meqi->eqi", alpha, side_from.grads)
        rgrads -= np.einsum("l,leqi->eqi", c, side_to.grads)
        ragrads = np.einsum("m,meqi->eqi", alpha, side_from.agrads)
        ragrads -= np.einsum("l,leqi->eqi", c, side_to.agrads)
        dens = np.einsum("eqi,eqi->eq", ragrads, rgrads) + self.cq * rvals ** 2
        return float(np.sqrt(max(np.einsum("eq,eq->", dens, self.wdet), 0.0)))

    def directed(self, reverse=False):
        if reverse:
            from_a, from_b, cross, to_a = self.S, self.SM, self.P.T, self.G
            side_from, side_to = self.discrete, self.exact
        else:
            from_a, from_b, cross, to_a = self.G, self.B, self.P, self.S
            side_from, side_to = self.exact, self.discrete
        try:
            sol = np.linalg.solve(to_a, cross.T)
        except np.linalg.LinAlgError as exc:
            raise GapError(f"degenerate cluster Gram: {exc}") from exc
        D = from_a - cross @ sol
        D = 0.5 * (D + D.T)
        _, W = sla.eigh(D, 0.5 * (from_b + from_b.T))
        alpha = W[:, -1]   # b-normalized maximizer of the projection error
        c = sol @ alpha
        return self._residual_norm(side_from, alpha, side_to, c)


def directed_distance(exact, discrete, space, coeffs, K_full=None, M_full=None,
                      subdivision=1):
    """d(M(lambda), M_h(lambda)): sup over the exact b-unit sphere."""
    if exact.dim != discrete.q:
        raise GapError("spaces must have equal dimension")
    ws = _GapWorkspace(exact, discrete, space, coeffs, K_full, M_full, subdivision)
    return ws.directed()


def gap_energy(exact, discrete, space, coeffs, K_full=None, M_full=None,
               subdivision=1):
    """max of the two directed distances (the energy gap delta)."""
    if exact.dim != discrete.q:
        raise GapError("spaces must have equal dimension")
    ws = _GapWorkspace(exact, discrete, space, coeffs, K_full, M_full, subdivision)
    return max(ws.directed(), ws.directed(reverse=True))


def brute_force_distance(exact, discrete, space, coeffs, n_samples=100_000,
                         seed=0, K_full=None, M_full=None, subdivision=1):
    """Monte-Carlo lower bound on the directed distance.

    Samples b-unit coefficient directions on the exact side and takes the max
    Gram projection error; approaches directed_distance from below as the
    sample count grows, and matches it for one-dimensional spaces.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples")
    ws = _GapWorkspace(exact, discrete, space, coeffs, K_full, M_full, subdivision)
    D = ws.G - ws.P @ np.linalg.solve(ws.S, ws.P.T)
    D = 0.5 * (D + D.T)
    rng = np.random.default_rng(seed)
    alpha = rng.standard_normal((n_samples, exact.dim))
    scale = np.sqrt(np.einsum("si,ij,sj->s", alpha, ws.B, alpha))
    alpha /= scale[:, None]
    d2 = np.einsum("si,ij,sj->s", alpha, D, alpha)
    return float(np.sqrt(max(np.max(d2), 0.0)))


def reverse_distance_bound(d_forward):
    """Upper bound d(Y, X) <= d(X, Y) / (1 - d(X, Y)) for equal dimensions."""
    if d_forward >= 1.0:
        return np.inf
    return d_forward / (1.0 - d_forward)
