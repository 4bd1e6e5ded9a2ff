"""The adaptive loop: Solve -> Estimate -> Mark -> Refine.

Two eigenvalue modes share the loop body: a single tracked cluster selected by
its position among ascending distinct eigenvalues, and a first-N mode whose
indicators sum over all N eigenfunctions.  A source-problem mode drives the
same machinery for the vector boundary-value problem, which is how the
estimator plumbing is validated independently of the eigensolver.

Cluster identity is locked at iteration 0 (position k0 and multiplicity q) and
never re-decided; if a later mesh's spectrum no longer shows a cluster with
exactly that extent, the run aborts rather than silently tracking something
else.
"""

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import plotting
from .eigsolve import EigenCluster, detect_cluster, solve_smallest
from .estimator import _indicators, eigen_indicators, source_indicators
from .fem import assemble_mass, assemble_stiffness, assemble_load, build_space, energy_error
from .gap import gap_energy
from .marking import dorfler_mark
from .mesh import refine, uniform_refine
from .problems import get_problem


class ClusterIdentityError(RuntimeError):
    """Tracked cluster no longer matches its locked position/multiplicity."""


@dataclass
class AfemConfig:
    problem: object = "square"       # registry name, file:<path>, or ProblemSpec
    degree: int = 1
    theta: float = 0.5
    bisections: int = 1              # b
    cluster_index: int = 1
    multiplicity: int = 1            # q
    first_n: int = 0                 # > 0 switches to first-N mode
    max_dof: int = 50_000
    max_iterations: int = 80
    eig_tol: float = 1e-10
    compute_gap: bool = True
    marking: str = "dorfler"         # "dorfler" | "uniform"
    # discrete splitting of a multiple eigenvalue stays a few percent even on
    # the coarsest adaptive meshes, while inter-cluster gaps of the built-in
    # problems are >= 20%; 0.1 sits safely between the two scales
    cluster_rel_gap_tol: float = 0.1
    pre_refinements: int = 3
    eta2_stop: float = 0.0
    gap_subdivision: int = 1
    seed: int = 2357

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.multiplicity < 1 or self.cluster_index < 1:
            raise ValueError("cluster_index and multiplicity must be >= 1")
        if self.first_n < 0:
            raise ValueError("first_n must be >= 1 when set")
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if self.marking not in ("dorfler", "uniform"):
            raise ValueError("marking must be 'dorfler' or 'uniform'")


@dataclass
class AfemTrace:
    """Per-iteration record of an AFEM run (one row per solved mesh)."""

    iters: list = field(default_factory=list)
    n_elements: list = field(default_factory=list)
    n_dofs: list = field(default_factory=list)
    marked: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)   # tuple per row
    eta2: list = field(default_factory=list)
    osc2: list = field(default_factory=list)
    gap2: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    final_mesh: object = None

    @property
    def n_lambda(self):
        return len(self.lambdas[0]) if self.lambdas else 0

    def __len__(self):
        return len(self.iters)

    def add_row(self, **kw):
        for name in ("iters", "n_elements", "n_dofs", "marked", "lambdas",
                     "eta2", "osc2", "gap2", "seconds"):
            getattr(self, name).append(kw[name])
        self.cluster_sizes.append(kw.get("cluster_sizes", ()))

    def series(self, name):
        """Named column as an array; lambda_err_<i> uses meta['lambda_refs']."""
        plain = {"iter": "iters", "n_elements": "n_elements", "n_dofs": "n_dofs",
                 "marked": "marked", "eta2": "eta2", "osc2": "osc2",
                 "gap2": "gap2", "seconds": "seconds"}
        if name in plain:
            return np.asarray(getattr(self, plain[name]), float)
        if name == "eta":
            return np.sqrt(self.series("eta2"))
        if name == "gap":
            return np.sqrt(self.series("gap2"))
        if name == "n_elements_added":
            ne = self.series("n_elements")
            return ne - ne[0]
        if name.startswith("lambda_err_"):
            i = int(name.rsplit("_", 1)[1]) - 1
            refs = self.meta.get("lambda_refs")
            if refs is None or refs[i] is None:
                raise ValueError("no reference eigenvalue recorded for this run")
            return np.array([row[i] - refs[i] for row in self.lambdas])
        if name.startswith("lambda_"):
            i = int(name.rsplit("_", 1)[1]) - 1
            return np.array([row[i] for row in self.lambdas])
        raise ValueError(f"unknown series {name!r}")


# ---------------------------------------------------------------------------
# trace I/O


def trace_columns(trace):
    cols = ["iter", "n_elements", "n_dofs", "marked"]
    cols += [f"lambda_{i + 1}" for i in range(trace.n_lambda)]
    return cols + ["eta2", "osc2", "gap2", "seconds"]


def export_trace(trace, path, fmt="csv"):
    """CSV with the fixed column schema, or a JSON mirror with metadata."""
    if fmt == "csv":
        text = trace_to_csv_text(trace)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    elif fmt == "json":
        obj = {"meta": trace.meta,
               "columns": trace_columns(trace),
               "rows": [_row_values(trace, k) for k in range(len(trace))],
               "cluster_sizes": [list(cs) for cs in trace.cluster_sizes]}
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")


def _row_values(trace, k):
    row = [trace.iters[k], trace.n_elements[k], trace.n_dofs[k], trace.marked[k]]
    row += [float(v) for v in trace.lambdas[k]]
    row += [float(trace.eta2[k]), float(trace.osc2[k]), float(trace.gap2[k]),
            float(trace.seconds[k])]
    return row


def trace_to_csv_text(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(trace))
    for k in range(len(trace)):
        vals = _row_values(trace, k)
        w.writerow([repr(v) if isinstance(v, float) else v for v in vals])
    return buf.getvalue()


def read_trace(path):
    """Load a trace CSV back; float repr round-trips bit-exactly."""
    trace = AfemTrace()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n_lam = sum(1 for h in header if h.startswith("lambda_"))
    for row in rows[1:]:
        it, ne, nd, mk = (int(v) for v in row[:4])
        lams = tuple(float(v) for v in row[4:4 + n_lam])
        e2, o2, g2, sec = (float(v) for v in row[4 + n_lam:])
        trace.add_row(iters=it, n_elements=ne, n_dofs=nd, marked=mk,
                      lambdas=lams, eta2=e2, osc2=o2, gap2=g2, seconds=sec)
    return trace


def emit_plot(trace, path, series=("eta2", "gap2"), x_field="n_dofs",
              guide_slope=-1.0, title=None):
    """SVG log-log plot of selected trace series with a slope guide line."""
    x = trace.series(x_field)
    curves = []
    for name in series:
        y = trace.series(name)
        keep = (y > 0) & (x > 0)
        if np.any(keep):
            curves.append((name, x[keep], y[keep]))
    if not curves:
        raise ValueError("no positive data to plot")
    plotting.loglog_svg(path, curves, guide_slope=guide_slope,
                        xlabel=x_field, ylabel="value",
                        title=title or trace.meta.get("label", ""))


def fit_slope(trace, y_field, x_field="n_dofs", window=6):
    """Least-squares slope of log y vs log x over the last `window` rows."""
    x = np.asarray(trace.series(x_field) if isinstance(trace, AfemTrace) else trace, float)
    y = np.asarray(y_field if not isinstance(y_field, str) else trace.series(y_field), float)
    x, y = x[-window:], y[-window:]
    if x.size < 3:
        raise ValueError("need at least 3 points in the window")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("slope fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# shared loop plumbing


class _Discretization:
    def __init__(self, problem, mesh, degree):
        self.mesh = mesh
        self.space = build_space(mesh, degree)
        self.coeffs = problem.coefficients
        self.K = assemble_stiffness(self.space, self.coeffs)
        self.M = assemble_mass(self.space)
        self._full = None

    def full_matrices(self):
        if self._full is None:
            self._full = (assemble_stiffness(self.space, self.coeffs, apply_dirichlet=False),
                          assemble_mass(self.space, apply_dirichlet=False))
        return self._full


def _prepared_mesh(problem, config, nev_needed):
    """Initial mesh with uniform pre-refinements; extra rounds keep the coarse
    eigensolve well posed when the free-dof count is too small."""
    mesh = uniform_refine(problem.initial_mesh(), config.pre_refinements)
    for _ in range(12):
        space = build_space(mesh, config.degree)
        if space.n_free >= nev_needed + 3:
            return mesh
        mesh = uniform_refine(mesh, 1)
    raise RuntimeError("could not reach a solvable initial mesh")


def _lock_cluster(problem, config):
    """Establish (k0, nev) for the tracked cluster on the initial mesh.

    Retries with extra uniform pre-refinement when the coarse spectrum does
    not yet show a cluster of the configured multiplicity at the configured
    position.
    """
    q = config.multiplicity
    nev_guess = config.cluster_index - 1 + q + 2
    mesh = _prepared_mesh(problem, config, nev_guess)
    sizes = []
    for _ in range(7):
        disc = _Discretization(problem, mesh, config.degree)
        nev = nev_guess
        while True:
            nev_solve = min(nev, disc.space.n_free)
            vals, _ = solve_smallest(disc.K, disc.M, nev_solve,
                                     tol=config.eig_tol, seed=config.seed)
            clusters = detect_cluster(vals, config.cluster_rel_gap_tol)
            if len(clusters) > config.cluster_index or nev_solve == disc.space.n_free:
                break
            nev += q + 2
        sizes = [len(c) for c in clusters]
        if len(clusters) > config.cluster_index:
            chosen = clusters[config.cluster_index - 1]
            if len(chosen) == q:
                return mesh, chosen[0]
        mesh = uniform_refine(mesh, 1)
    raise ClusterIdentityError(
        f"no cluster of multiplicity {q} at position {config.cluster_index} "
        f"resolved on the initial mesh (detected sizes {sizes})")


def _lock_first_n(problem, config):
    """Initial mesh and tracked count for first-N mode.

    N must cover whole clusters; when the coarse spectrum shows N cutting a
    multiplet, the mesh is pre-refined until the boundary resolves, and only a
    persistent split extends N (with a warning).
    """
    n = config.first_n
    mesh = _prepared_mesh(problem, config, n + 2)
    for _ in range(7):
        disc = _Discretization(problem, mesh, config.degree)
        nev = min(n + 2, disc.space.n_free)
        vals, _ = solve_smallest(disc.K, disc.M, nev, tol=config.eig_tol,
                                 seed=config.seed)
        clusters = detect_cluster(vals, config.cluster_rel_gap_tol)
        straddle = next((c for c in clusters if c[0] < n <= c[-1]), None)
        if straddle is None:
            return mesh, n
        mesh = uniform_refine(mesh, 1)
    warnings.warn(f"first_n={n} splits a multiplet; extending to {straddle[-1] + 1}",
                  stacklevel=3)
    return mesh, straddle[-1] + 1


def _certify_cluster(values, k0, q, tol):
    clusters = detect_cluster(values, tol)
    for c in clusters:
        if c[0] <= k0 <= c[-1]:
            if c[0] == k0 and len(c) == q:
                return [len(x) for x in clusters]
            raise ClusterIdentityError(
                f"tracked cluster changed: expected positions "
                f"{list(range(k0, k0 + q))}, detected {c}")
    raise ClusterIdentityError("tracked cluster vanished from the spectrum")


def _mark_elements(config, ind):
    if config.marking == "uniform":
        n = ind.eta2.size
        return frozenset(range(n)), False
    res = dorfler_mark(ind, config.theta)
    return res.marked, res.converged


def _trace_gap(problem, config, disc, clusters_members, exact_spaces):
    """Sum of squared gaps over the tracked exact clusters, or an eigenvalue
    error proxy when no closed-form eigenspace exists."""
    if exact_spaces is not None:
        Kf, Mf = disc.full_matrices()
        total = 0.0
        for exact, member in zip(exact_spaces, clusters_members):
            total += gap_energy(exact, member, disc.space, disc.coeffs,
                                K_full=Kf, M_full=Mf,
                                subdivision=config.gap_subdivision) ** 2
        return total
    refs = {idx: val for idx, val, _ in (problem.reference_values or [])}
    proxy = 0.0
    for member in clusters_members:
        ref = refs.get(member.cluster_index)
        if ref is None:
            return float("nan")
        proxy += float(np.sum(np.abs(np.asarray(member.values) - ref)))
    return proxy


def _run_eigen_loop(config, first_n_mode):
    problem = get_problem(config.problem)
    t0 = time.perf_counter()

    if first_n_mode:
        mesh, n_tracked = _lock_first_n(problem, config)
        k0 = None
    else:
        mesh, k0 = _lock_cluster(problem, config)
        n_tracked = None

    trace = AfemTrace()
    trace.meta = {
        "problem": problem.name, "degree": config.degree, "theta": config.theta,
        "mode": f"first_{config.first_n}" if first_n_mode else
                f"cluster_{config.cluster_index}_q{config.multiplicity}",
        "marking": config.marking, "b": config.bisections,
        "max_dof": config.max_dof, "eig_tol": config.eig_tol,
        "label": f"{problem.name} P{config.degree}",
        "status": "running",
    }

    status = "max_iterations"
    for it in range(config.max_iterations + 1):
        disc = _Discretization(problem, mesh, config.degree)

        if first_n_mode:
            nev = min(n_tracked + 2, disc.space.n_free)
        else:
            nev = min(k0 + config.multiplicity + 2, disc.space.n_free)
        vals, vecs = solve_smallest(disc.K, disc.M, nev, tol=config.eig_tol,
                                    seed=config.seed)

        if first_n_mode:
            clusters = detect_cluster(vals, config.cluster_rel_gap_tol)
            covered, sizes = [], []
            for ci, c in enumerate(clusters):
                if c[0] >= n_tracked:
                    break
                covered.append((ci + 1, c))
                sizes.append(len(c))
            members = []
            for ci, c in covered:
                V = np.column_stack([disc.space.expand(vecs[:, i]) for i in c])
                members.append(EigenCluster(vals[c[0]:c[-1] + 1], V, ci, len(c)))
            tracked_vals = tuple(float(v) for v in vals[:n_tracked])
            exact_spaces = None
            if config.compute_gap and problem.exact_clusters is not None:
                exact_spaces = [problem.exact_clusters[ci - 1] for ci, _ in covered]
            ind_vectors = np.column_stack([disc.space.expand(vecs[:, i])
                                           for i in range(n_tracked)])
            ind = _indicators(disc.space, disc.coeffs, ind_vectors,
                              lams=vals[:n_tracked])
        else:
            sizes = _certify_cluster(vals, k0, config.multiplicity,
                                     config.cluster_rel_gap_tol)
            c = list(range(k0, k0 + config.multiplicity))
            V = np.column_stack([disc.space.expand(vecs[:, i]) for i in c])
            member = EigenCluster(vals[k0:k0 + config.multiplicity], V,
                                  config.cluster_index, config.multiplicity)
            members = [member]
            tracked_vals = tuple(float(v) for v in member.values)
            exact_spaces = None
            if config.compute_gap and problem.exact_clusters is not None:
                exact_spaces = [problem.exact_clusters[config.cluster_index - 1]]
            ind = eigen_indicators(disc.space, disc.coeffs, member)

        gap2 = (_trace_gap(problem, config, disc, members, exact_spaces)
                if config.compute_gap else float("nan"))

        marked, converged = _mark_elements(config, ind)
        stop = (disc.space.n_free >= config.max_dof or it >= config.max_iterations
                or converged
                or (config.eta2_stop > 0 and ind.total_eta2 <= config.eta2_stop))
        now = time.perf_counter()
        trace.add_row(iters=it, n_elements=mesh.n_elements, n_dofs=disc.space.n_free,
                      marked=0 if stop else len(marked), lambdas=tracked_vals,
                      eta2=ind.total_eta2, osc2=ind.total_osc2, gap2=gap2,
                      seconds=now - t0, cluster_sizes=tuple(sizes))
        t0 = now
        if stop:
            status = ("converged" if converged or
                      (config.eta2_stop > 0 and ind.total_eta2 <= config.eta2_stop)
                      else ("max_dof" if disc.space.n_free >= config.max_dof
                            else "max_iterations"))
            break
        mesh = refine(mesh, marked, config.bisections).mesh

    trace.final_mesh = mesh
    trace.meta["status"] = status
    refs = {idx: val for idx, val, _ in (problem.reference_values or [])}
    if first_n_mode:
        lambda_refs = []
        sizes_final = trace.cluster_sizes[-1] if trace.cluster_sizes else ()
        for ci, size in enumerate(sizes_final, start=1):
            lambda_refs += [refs.get(ci)] * size
        lambda_refs = lambda_refs[:len(trace.lambdas[-1])]
        while len(lambda_refs) < len(trace.lambdas[-1]):
            lambda_refs.append(None)
    else:
        lambda_refs = [refs.get(config.cluster_index)] * config.multiplicity
    trace.meta["lambda_refs"] = lambda_refs
    return trace


def run_afem(config):
    """AFEM for one tracked eigenvalue cluster; returns the iteration trace."""
    if config.first_n:
        raise ValueError("config.first_n is set; use run_afem_first_n")
    return _run_eigen_loop(config, first_n_mode=False)


def run_afem_first_n(config):
    """AFEM tracking the first N eigenpairs with summed indicators."""
    if not config.first_n:
        raise ValueError("config.first_n must be >= 1")
    return _run_eigen_loop(config, first_n_mode=True)


def run_afem_source(config, sources, exact=None):
    """AFEM for the vector source problem a(u_i, v) = b(f_i, v).

    `sources` are callables f_i(points)->(m,); optional `exact` supplies
    (value, grad) callables per component, in which case the gap2 column
    records the squared energy error sum.
    """
    problem = get_problem(config.problem)
    mesh = uniform_refine(problem.initial_mesh(), config.pre_refinements)
    sources = list(sources)
    trace = AfemTrace()
    trace.meta = {"problem": problem.name, "degree": config.degree,
                  "theta": config.theta, "mode": f"source_{len(sources)}",
                  "marking": config.marking, "b": config.bisections,
                  "label": f"{problem.name} source P{config.degree}",
                  "status": "running", "lambda_refs": []}
    t0 = time.perf_counter()
    status = "max_iterations"
    for it in range(config.max_iterations + 1):
        disc = _Discretization(problem, mesh, config.degree)
        lu = spla.splu(disc.K.tocsc())
        vectors = np.column_stack([
            disc.space.expand(lu.solve(assemble_load(disc.space, f)))
            for f in sources])
        ind = source_indicators(disc.space, disc.coeffs, vectors, sources)
        if exact is not None:
            err2 = sum(energy_error(disc.space, disc.coeffs, vectors[:, i],
                                    value_fn, grad_fn) ** 2
                       for i, (value_fn, grad_fn) in enumerate(exact))
        else:
            err2 = float("nan")
        marked, converged = _mark_elements(config, ind)
        stop = (disc.space.n_free >= config.max_dof or it >= config.max_iterations
                or converged
                or (config.eta2_stop > 0 and ind.total_eta2 <= config.eta2_stop))
        now = time.perf_counter()
        trace.add_row(iters=it, n_elements=mesh.n_elements, n_dofs=disc.space.n_free,
                      marked=0 if stop else len(marked), lambdas=(),
                      eta2=ind.total_eta2, osc2=ind.total_osc2, gap2=err2,
                      seconds=now - t0)
        t0 = now
        if stop:
            status = "converged" if converged else (
                "max_dof" if disc.space.n_free >= config.max_dof else "max_iterations")
            break
        mesh = refine(mesh, marked, config.bisections).mesh
    trace.final_mesh = mesh
    trace.meta["status"] = status
    return trace
