"""Smallest eigenpairs of the generalized problem K x = lambda M x.

K and M are sparse SPD (Dirichlet rows/columns eliminated), so the smallest
eigenvalues are extracted by shift-invert Lanczos at sigma = 0: ARPACK runs on
(K)^-1 M with a sparse factorization of K.  Small systems fall back to a dense
direct solve, which keeps coarse meshes robust.  A deterministic start vector
makes repeated runs bit-identical.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

_DENSE_CUTOFF = 260


class EigensolverError(RuntimeError):
    """Factorization breakdown or non-convergence."""


@dataclass
class EigenCluster:
    """A group of discrete eigenpairs approximating one exact eigenvalue.

    vectors hold one b-orthonormal column per member; cluster_index is the
    1-based position of this cluster among ascending distinct eigenvalues.
    """

    values: np.ndarray
    vectors: np.ndarray
    cluster_index: int
    q: int

    def recombine(self, Q):
        """Replace the basis by vectors @ Q (Q orthogonal keeps b-orthonormality)."""
        Q = np.asarray(Q, float)
        if Q.shape != (self.q, self.q):
            raise ValueError("recombination matrix has wrong shape")
        return EigenCluster(self.values.copy(), self.vectors @ Q,
                            self.cluster_index, self.q)


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def m_orthonormalize(vectors, M):
    """Modified Gram-Schmidt in the M inner product (two passes)."""
    V = np.array(vectors, float, copy=True)
    for j in range(V.shape[1]):
        w = V[:, j]
        for _ in range(2):
            for i in range(j):
                w -= (V[:, i] @ (M @ w)) * V[:, i]
        nrm = np.sqrt(w @ (M @ w))
        if nrm <= 0 or not np.isfinite(nrm):
            raise EigensolverError("breakdown while b-orthonormalizing eigenvectors")
        V[:, j] = w / nrm
    return V


def solve_smallest(K, M, nev, tol=1e-10, seed=2357, history_path=None):
    """Return the `nev` smallest eigenpairs as (values, vectors).

    values are ascending; vectors are M-orthonormal columns with a
    deterministic sign convention.  `tol` bounds the relative eigenvalue
    accuracy; residuals are verified after the solve.
    """
    n = K.shape[0]
    if K.shape != M.shape or K.shape[0] != K.shape[1]:
        raise ValueError("K and M must be square matrices of equal size")
    if not 1 <= nev <= n:
        raise ValueError(f"nev={nev} out of range for dimension {n}")

    if n <= _DENSE_CUTOFF or nev > n - 2:
        try:
            vals, vecs = sla.eigh(K.toarray(), M.toarray(),
                                  subset_by_index=[0, nev - 1])
        except sla.LinAlgError as exc:  # pragma: no cover - pathological input
            raise EigensolverError(f"dense eigensolver failed: {exc}") from exc
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n)
        ncv = min(n - 1, max(4 * nev + 1, 25))
        try:
            vals, vecs = spla.eigsh(K, k=nev, M=M, sigma=0.0, which="LM",
                                    v0=v0, ncv=ncv, tol=tol, maxiter=5000)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(f"Lanczos did not converge: {exc}") from exc
        except RuntimeError as exc:
            raise EigensolverError(f"factorization failed: {exc}") from exc

    order = np.argsort(vals, kind="stable")
    vals = np.ascontiguousarray(vals[order])
    vecs = np.ascontiguousarray(vecs[:, order])
    vecs = _fix_signs(m_orthonormalize(vecs, M))

    resid = residual_norms(K, M, vals, vecs)
    bound = max(tol, 1e-12) * np.maximum(1.0, np.abs(vals))
    if np.any(resid > 100 * bound):
        raise EigensolverError(
            f"eigenpair residual {resid.max():.3e} exceeds tolerance budget")

    if history_path:
        with open(history_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "value", "residual"])
            for i, (v, r) in enumerate(zip(vals, resid)):
                w.writerow([i, repr(float(v)), repr(float(r))])
    return vals, vecs


def residual_norms(K, M, vals, vecs):
    """|| K v - lambda M v ||_2 / || M v ||_2 per eigenpair."""
    KV = K @ vecs
    MV = M @ vecs
    num = np.linalg.norm(KV - MV * vals[None, :], axis=0)
    den = np.linalg.norm(MV, axis=0)
    return num / den


def detect_cluster(values, rel_gap_tol=1e-3):
    """Partition ascending values into clusters by relative gap.

    Two consecutive values stay in one cluster when
    (v[i+1] - v[i]) / v[i+1] < rel_gap_tol.  Returns a list of index lists.
    """
    values = np.asarray(values, float)
    if values.size == 0:
        return []
    if np.any(np.diff(values) < -1e-12 * np.maximum(1.0, np.abs(values[:-1]))):
        raise ValueError("values must be ascending")
    clusters = [[0]]
    for i in range(1, values.size):
        gap = (values[i] - values[i - 1]) / values[i] if values[i] != 0 else 0.0
        if gap < rel_gap_tol:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters
