"""Conforming triangulations under newest-vertex bisection.

An element stores its three vertex indices in positive (counter-clockwise)
orientation together with the local index of its refinement edge: local edge
``i`` is the edge opposite local vertex ``i``.  Bisecting an element inserts
the midpoint of its refinement edge and hands both children the inherited
parent edge as their new refinement edge, which is the edge opposite the
newly created vertex.  Conformity is maintained by recursively bisecting the
neighbour across the refinement edge first whenever its own refinement edge
disagrees (implemented with an explicit stack, so chains of any length are
fine).
"""

import json
import warnings

import numpy as np

_EDGE_VERTS = ((1, 2), (2, 0), (0, 1))  # local edge i is opposite local vertex i


class MeshError(ValueError):
    """Invalid mesh input or an operation on a broken mesh."""


class Mesh:
    """Immutable conforming triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, CCW vertex indices
    refinement_edge : (ne,) int array with values in {0, 1, 2}
    generation : (ne,) int array, bisection depth of each element
    region : (ne,) int array, material tag for piecewise coefficients
    boundary_edges : (nb, 2) int array of sorted vertex pairs (all Dirichlet)
    """

    def __init__(self, vertices, elements, refinement_edge, generation, region,
                 boundary_edges):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.refinement_edge = np.ascontiguousarray(refinement_edge, dtype=np.int64)
        self.generation = np.ascontiguousarray(generation, dtype=np.int64)
        self.region = np.ascontiguousarray(region, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        self._cache = {}

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    # -- derived geometry -------------------------------------------------

    def signed_areas(self):
        v = self.vertices[self.elements]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self):
        """Per-element local edge lengths, shape (ne, 3)."""
        v = self.vertices[self.elements]
        out = np.empty((self.n_elements, 3))
        for i, (a, b) in enumerate(_EDGE_VERTS):
            out[:, i] = np.linalg.norm(v[:, b] - v[:, a], axis=1)
        return out

    def diameters(self):
        return self.edge_lengths().max(axis=1)

    def edge_table(self):
        """Unique edges plus ownership.

        Returns ``(edges, elem_edges, owners, owner_local)`` where `edges` is
        (nE, 2) sorted vertex pairs in lexicographic order, `elem_edges` maps
        (ne, 3) local edges to edge ids, `owners` is (nE, 2) element ids with
        -1 for a missing second owner, and `owner_local` the matching local
        edge indices.
        """
        if "edge_table" in self._cache:
            return self._cache["edge_table"]
        ne = self.n_elements
        pairs = self.elements[:, _EDGE_VERTS].reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        elem_edges = inverse.reshape(ne, 3)
        counts = np.bincount(inverse, minlength=edges.shape[0])
        if counts.max(initial=0) > 2:
            bad = int(np.argmax(counts))
            raise MeshError(f"edge {tuple(edges[bad])} shared by more than 2 elements")
        owners = -np.ones((edges.shape[0], 2), dtype=np.int64)
        owner_local = -np.ones((edges.shape[0], 2), dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        elem_of = order // 3
        local_of = order % 3
        starts = np.zeros(edges.shape[0], dtype=np.int64)
        starts[1:] = np.cumsum(counts)[:-1]
        owners[:, 0] = elem_of[starts]
        owner_local[:, 0] = local_of[starts]
        dbl = counts == 2
        owners[dbl, 1] = elem_of[starts[dbl] + 1]
        owner_local[dbl, 1] = local_of[starts[dbl] + 1]
        self._cache["edge_table"] = (edges, elem_edges, owners, owner_local)
        return self._cache["edge_table"]

    def element_neighbors(self):
        """(ne, 3) neighbour element id across each local edge, -1 on boundary."""
        if "neighbors" in self._cache:
            return self._cache["neighbors"]
        edges, elem_edges, owners, owner_local = self.edge_table()
        nbr = -np.ones((self.n_elements, 3), dtype=np.int64)
        for s in range(2):
            mask = owners[:, s] >= 0
            other = owners[mask, 1 - s]
            nbr[owners[mask, s], owner_local[mask, s]] = other
        self._cache["neighbors"] = nbr
        return nbr

    def element_patch(self, element_id):
        """The element itself plus all edge neighbours (at most 4 ids)."""
        if not 0 <= element_id < self.n_elements:
            raise MeshError(f"invalid element id {element_id}")
        nbr = self.element_neighbors()[element_id]
        return {element_id} | {int(t) for t in nbr if t >= 0}

    def shape_regularity(self):
        """max over elements of diameter / inscribed-ball diameter."""
        lens = self.edge_lengths()
        areas = self.signed_areas()
        if np.any(areas <= 0):
            raise MeshError("degenerate or inverted element")
        h = lens.max(axis=1)
        perim = lens.sum(axis=1)
        rho = 4.0 * areas / perim  # inradius = area / semi-perimeter
        return float(np.max(h / rho))

    def validate(self):
        """Check conformity invariants; raises MeshError on violation."""
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if np.any(self.signed_areas() <= 0):
            raise MeshError("inverted or degenerate element")
        edges, _, owners, _ = self.edge_table()
        n_owners = (owners >= 0).sum(axis=1)
        derived_boundary = edges[n_owners == 1]
        stored = {tuple(e) for e in np.sort(self.boundary_edges, axis=1).tolist()}
        derived = {tuple(e) for e in derived_boundary.tolist()}
        if stored != derived:
            raise MeshError("boundary edges do not match single-owner edges (open boundary?)")
        return True

    # -- serialization -----------------------------------------------------

    def to_json(self, path=None):
        obj = {
            "vertices": self.vertices.tolist(),
            "elements": self.elements.tolist(),
            "boundary": self.boundary_edges.tolist(),
        }
        if path is None:
            return json.dumps(obj)
        with open(path, "w") as fh:
            json.dump(obj, fh)
        return None

    def to_vtk(self, path, title="mesh"):
        """Legacy ASCII VTK unstructured-grid export for visualization."""
        lines = [
            "# vtk DataFile Version 3.0",
            title,
            "ASCII",
            "DATASET UNSTRUCTURED_GRID",
            f"POINTS {self.n_vertices} float",
        ]
        lines += [f"{x:.17g} {y:.17g} 0.0" for x, y in self.vertices]
        lines.append(f"CELLS {self.n_elements} {4 * self.n_elements}")
        lines += [f"3 {a} {b} {c}" for a, b, c in self.elements]
        lines.append(f"CELL_TYPES {self.n_elements}")
        lines += ["5"] * self.n_elements
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class RefineResult:
    """Outcome of a refine() call.

    refined_set -- ids of old-mesh elements that are no longer present
    parent_map  -- new element id -> old-mesh ancestor id (identity for
                   elements carried over unchanged)
    """

    def __init__(self, mesh, refined_set, parent_map):
        self.mesh = mesh
        self.refined_set = frozenset(refined_set)
        self.parent_map = parent_map


# ---------------------------------------------------------------------------
# initial labeling


def _longest_edge_labels(vertices, elements):
    v = vertices[elements]
    lens = np.empty((elements.shape[0], 3))
    for i, (a, b) in enumerate(_EDGE_VERTS):
        lens[:, i] = np.linalg.norm(v[:, b] - v[:, a], axis=1)
    return np.argmax(lens, axis=1)  # argmax takes lowest index on ties


def _refedge_pair(elements, refedge, t):
    a, b = _EDGE_VERTS[refedge[t]]
    i, j = elements[t, a], elements[t, b]
    return (i, j) if i < j else (j, i)


def _successors(mesh_elements, refedge, adj):
    """Directed completion graph: t -> neighbour across t's refinement edge
    when that neighbour refines a different edge; -1 for terminal."""
    ne = mesh_elements.shape[0]
    succ = -np.ones(ne, dtype=np.int64)
    for t in range(ne):
        key = _refedge_pair(mesh_elements, refedge, t)
        owners = adj[key]
        other = [o for o in owners if o != t]
        if other and _refedge_pair(mesh_elements, refedge, other[0]) != key:
            succ[t] = other[0]
    return succ


def _find_cycle(succ):
    """Return the elements of one cycle of the successor graph, or None."""
    state = np.zeros(succ.size, dtype=np.int8)  # 0 new, 1 active, 2 done
    for start in range(succ.size):
        if state[start]:
            continue
        path = []
        t = start
        while t >= 0 and state[t] == 0:
            state[t] = 1
            path.append(t)
            t = succ[t]
        if t >= 0 and state[t] == 1:
            return path[path.index(t):]
        for p in path:
            state[p] = 2
    return None


def _shared_local_edge(elements, t, pair):
    for i, (a, b) in enumerate(_EDGE_VERTS):
        e = (elements[t, a], elements[t, b])
        if pair == (min(e), max(e)):
            return i
    raise MeshError("elements do not share the given edge")


def _repair_labels(elements, refedge, adj, max_sweeps):
    """Break cycles in the completion graph by re-pointing one member of each
    cycle at its predecessor's refinement edge (compatible pair). Returns True
    on success."""
    for _ in range(max_sweeps):
        succ = _successors(elements, refedge, adj)
        cycle = _find_cycle(succ)
        if cycle is None:
            return True
        t0 = cycle[0]
        t1 = succ[t0]
        refedge[t1] = _shared_local_edge(elements, t1, _refedge_pair(elements, refedge, t0))
    return _find_cycle(_successors(elements, refedge, adj)) is None


def red_refine(vertices, elements, region):
    """Uniform 4-way (red) split with a labeling that is always compatible:
    every child refines an edge of the inner medial triangle, so completion
    chains never leave a parent."""
    vertices = np.asarray(vertices, float)
    elements = np.asarray(elements, np.int64)
    pairs = np.sort(elements[:, _EDGE_VERTS].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    elem_edges = inverse.reshape(-1, 3)
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    nv = vertices.shape[0]
    new_vertices = np.vstack([vertices, mids])
    new_elements = []
    new_refedge = []
    new_region = []
    for t in range(elements.shape[0]):
        v0, v1, v2 = elements[t]
        m0, m1, m2 = nv + elem_edges[t]  # m_i on edge opposite vertex i
        # corners keep the parent's orientation; each refines its medial edge
        new_elements += [
            (v0, m2, m1),   # medial edge (m2, m1) is local edge 0
            (v1, m0, m2),
            (v2, m1, m0),
            (m0, m1, m2),   # central child, refines (m1, m2) = local edge 0
        ]
        new_refedge += [0, 0, 0, 0]
        new_region += [region[t]] * 4
    return new_vertices, np.array(new_elements, np.int64), \
        np.array(new_refedge, np.int64), np.array(new_region, np.int64)


def build_initial(vertices, triangles, boundary=None, region=None):
    """Construct a mesh from raw arrays, assigning a compatible labeling.

    Refinement edges start as longest edges (ties broken by lowest local edge
    index); if the induced completion graph has cycles, a repair sweep
    re-labels cycle members, and as a last resort one global red refinement
    is applied, after which a compatible labeling always exists.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (n, 3) array")
    if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(vertices):
        raise MeshError("triangle vertex index out of range")
    for t in triangles:
        if len(set(t.tolist())) != 3:
            raise MeshError(f"triangle {t.tolist()} has repeated vertices")
    uniq = np.unique(vertices, axis=0)
    if uniq.shape[0] != vertices.shape[0]:
        raise MeshError("duplicate vertex coordinates")
    used = np.unique(triangles)
    if used.size != vertices.shape[0]:
        raise MeshError("mesh contains vertices not used by any triangle")

    v = vertices[triangles]
    areas = 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                   - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise MeshError(f"element {bad} is inverted or degenerate (signed area {areas[bad]:g})")

    region = np.zeros(len(triangles), np.int64) if region is None else \
        np.asarray(region, np.int64)

    pairs = np.sort(triangles[:, _EDGE_VERTS].reshape(-1, 2), axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    if np.any(counts > 2):
        bad = edges[counts > 2][0]
        raise MeshError(f"non-conforming input: edge {tuple(bad)} has {counts.max()} owners")
    derived_boundary = edges[counts == 1]

    # hanging vertices: a vertex lying strictly inside another element's edge
    for eid, (a, b) in enumerate(edges):
        pa, pb = vertices[a], vertices[b]
        d = pb - pa
        L2 = d @ d
        rel = vertices - pa
        t = (rel @ d) / L2
        on_line = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) <= 1e-12 * np.sqrt(L2)
        interior = (t > 1e-10) & (t < 1 - 1e-10) & on_line
        interior[[a, b]] = False
        if np.any(interior):
            raise MeshError(f"hanging vertex {int(np.nonzero(interior)[0][0])} "
                            f"on edge {(int(a), int(b))}")

    if boundary is not None:
        given = {tuple(sorted(map(int, e))) for e in np.asarray(boundary).reshape(-1, 2)}
        derived = {tuple(e) for e in derived_boundary.tolist()}
        if given != derived:
            raise MeshError("open or inconsistent boundary: supplied boundary edges "
                            "do not match the mesh's single-owner edges")

    refedge = _longest_edge_labels(vertices, triangles)
    adj = {}
    for t in range(triangles.shape[0]):
        for a, b in _EDGE_VERTS:
            i, j = triangles[t, a], triangles[t, b]
            adj.setdefault((min(i, j), max(i, j)), []).append(t)

    if not _repair_labels(triangles, refedge, adj, max_sweeps=4 * len(triangles) + 8):
        warnings.warn("refinement-edge labeling could not be repaired; applying one "
                      "global red refinement", stacklevel=2)
        vertices, triangles, refedge, region = red_refine(vertices, triangles, region)
        pairs = np.sort(triangles[:, _EDGE_VERTS].reshape(-1, 2), axis=1)
        edges, counts = np.unique(pairs, axis=0, return_counts=True)
        derived_boundary = edges[counts == 1]

    mesh = Mesh(vertices, triangles, refedge,
                np.zeros(len(triangles), np.int64), region, derived_boundary)
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# bisection


class _RefineWork:
    """Mutable append-only refinement workspace.

    Element "tokens" are never reused: bisecting a token marks it dead and
    appends two children, so ancestry can be reconstructed exactly.
    Tokens < ne_old are the elements of the input mesh.
    """

    def __init__(self, mesh):
        self.ne_old = mesh.n_elements
        self.verts = mesh.vertices.tolist()
        self.elems = [tuple(map(int, row)) for row in mesh.elements]
        self.refe = mesh.refinement_edge.tolist()
        self.gen = mesh.generation.tolist()
        self.reg = mesh.region.tolist()
        self.alive = [True] * self.ne_old
        self.children = {}
        self.parent = {}
        self.adj = {}
        pairs = np.sort(mesh.elements[:, _EDGE_VERTS].reshape(-1, 2), axis=1)
        keys = list(map(tuple, pairs.tolist()))
        adj = self.adj
        for k, key in enumerate(keys):
            adj.setdefault(key, []).append(k // 3)

    def _edge_key(self, tok, local):
        a, b = _EDGE_VERTS[local]
        i, j = self.elems[tok][a], self.elems[tok][b]
        return (i, j) if i < j else (j, i)

    def _drop_edges(self, tok):
        for local in range(3):
            owners = self.adj[self._edge_key(tok, local)]
            owners.remove(tok)

    def _add_edges(self, tok):
        for local in range(3):
            self.adj.setdefault(self._edge_key(tok, local), []).append(tok)

    def _split(self, tok, mid):
        """Replace `tok` by its two children across its refinement edge,
        using existing midpoint vertex id `mid`."""
        v = self.elems[tok]
        r = self.refe[tok]
        p, a, b = v[r], v[(r + 1) % 3], v[(r + 2) % 3]
        self._drop_edges(tok)
        self.alive[tok] = False
        g = self.gen[tok] + 1
        reg = self.reg[tok]
        c1 = len(self.elems)
        self.elems.append((p, a, mid))
        self.refe.append(2)          # edge (p, a), opposite the new vertex
        self.gen.append(g)
        self.reg.append(reg)
        self.alive.append(True)
        c2 = len(self.elems)
        self.elems.append((p, mid, b))
        self.refe.append(1)          # edge (b, p), opposite the new vertex
        self.gen.append(g)
        self.reg.append(reg)
        self.alive.append(True)
        self.children[tok] = (c1, c2)
        self.parent[c1] = tok
        self.parent[c2] = tok
        self._add_edges(c1)
        self._add_edges(c2)
        return c1, c2

    def bisect_conforming(self, tok):
        """Bisect `tok`, recursively pre-bisecting incompatible neighbours."""
        stack = [tok]
        alive_count = sum(self.alive)
        while stack:
            t = stack[-1]
            if not self.alive[t]:
                stack.pop()
                continue
            key = self._edge_key(t, self.refe[t])
            owners = self.adj[key]
            partner = None
            for o in owners:
                if o != t:
                    partner = o
            if partner is not None and self._edge_key(partner, self.refe[partner]) != key:
                if len(stack) > alive_count + len(self.elems):
                    raise MeshError("completion does not terminate: incompatible "
                                    "refinement-edge labeling")
                stack.append(partner)
                continue
            stack.pop()
            mid = len(self.verts)
            va, vb = self.verts[key[0]], self.verts[key[1]]
            self.verts.append([0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])])
            self._split(t, mid)
            if partner is not None:
                self._split(partner, mid)

    def freeze(self):
        """Produce the new Mesh plus (refined_set, parent_map)."""
        tokens = [t for t in range(len(self.elems)) if self.alive[t]]
        elements = np.array([self.elems[t] for t in tokens], np.int64)
        refedge = np.array([self.refe[t] for t in tokens], np.int64)
        gen = np.array([self.gen[t] for t in tokens], np.int64)
        reg = np.array([self.reg[t] for t in tokens], np.int64)
        vertices = np.array(self.verts, float)
        pairs = np.sort(elements[:, _EDGE_VERTS].reshape(-1, 2), axis=1)
        edges, counts = np.unique(pairs, axis=0, return_counts=True)
        boundary = edges[counts == 1]
        mesh = Mesh(vertices, elements, refedge, gen, reg, boundary)
        refined = {t for t in range(self.ne_old) if not self.alive[t]}
        parent_map = {}
        for new_id, tok in enumerate(tokens):
            anc = tok
            while anc >= self.ne_old:
                anc = self.parent[anc]
            parent_map[new_id] = anc
        return mesh, refined, parent_map


def bisect(mesh, element_id):
    """Bisect one element (with conforming completion); returns the new Mesh."""
    if not 0 <= element_id < mesh.n_elements:
        raise MeshError(f"invalid element id {element_id}")
    work = _RefineWork(mesh)
    work.bisect_conforming(element_id)
    new_mesh, _, _ = work.freeze()
    return new_mesh


def refine(mesh, marked, b=1):
    """Bisect every marked element `b` times, keeping the mesh conforming.

    Completion bisections count: a marked element split as a side effect of a
    neighbour's completion still gets its remaining rounds applied to its
    children.
    """
    if b < 1:
        raise MeshError("b must be a positive integer")
    targets = sorted(set(int(t) for t in marked))
    if targets and (targets[0] < 0 or targets[-1] >= mesh.n_elements):
        raise MeshError("marked element id out of range")
    if not targets:
        return RefineResult(mesh, set(), {i: i for i in range(mesh.n_elements)})
    work = _RefineWork(mesh)
    for _ in range(b):
        for tok in targets:
            if tok not in work.children:
                work.bisect_conforming(tok)
        targets = sorted(c for tok in targets for c in work.children[tok])
    new_mesh, refined, parent_map = work.freeze()
    return RefineResult(new_mesh, refined, parent_map)


def uniform_refine(mesh, rounds=1):
    for _ in range(rounds):
        mesh = refine(mesh, range(mesh.n_elements)).mesh
    return mesh


def from_json(source):
    """Build a mesh from the JSON exchange format (string, path, or dict)."""
    if isinstance(source, dict):
        obj = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        obj = json.loads(source)
    else:
        with open(source) as fh:
            obj = json.load(fh)
    return build_initial(np.array(obj["vertices"], float),
                         np.array(obj["elements"], np.int64),
                         boundary=obj.get("boundary"))
