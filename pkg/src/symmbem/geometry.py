"""Triangle meshes, canonical sphere meshes, nesting checks and OFF I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_SUBDIVISIONS = 7

# Golden-ratio icosahedron with unit circumradius after normalisation.
_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array(
    [
        (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
        (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
        (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


class TriangleMesh:
    """Closed oriented triangle surface with shared-vertex indexing.

    Vertices are stored as an ``(n_vertices, 3)`` float array and triangles
    as ``(n_triangles, 3)`` vertex-index triples ordered so the
    right-hand-rule normal points outward.  Arrays are frozen after
    construction; all derived quantities are cached and the object is safe
    for concurrent reads.
    """

    def __init__(self, vertices, triangles):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be an (n, 3) index array")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle indices out of range")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        self.vertices = vertices
        self.triangles = triangles

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (n_triangles, 3, 3)."""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit right-hand-rule normals per triangle."""
        n = np.linalg.norm(self._cross, axis=1)
        return self._cross / np.where(n > 0, n, 1.0)[:, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge per triangle."""
        c = self.corners
        e = np.stack(
            [
                np.linalg.norm(c[:, 1] - c[:, 0], axis=1),
                np.linalg.norm(c[:, 2] - c[:, 1], axis=1),
                np.linalg.norm(c[:, 0] - c[:, 2], axis=1),
            ],
            axis=1,
        )
        return e.max(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (n_edges, 2)."""
        t = self.triangles
        halves = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        halves = np.sort(halves, axis=1)
        return np.unique(halves, axis=0)

    @cached_property
    def vertex_triangle_count(self) -> np.ndarray:
        """Number of triangles incident to each vertex."""
        return np.bincount(self.triangles.ravel(), minlength=self.num_vertices)

    @cached_property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def signed_volume(self) -> float:
        """Sum of signed cone volumes; positive for outward orientation."""
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @cached_property
    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        center = self.vertices.mean(axis=0)
        radius = float(np.linalg.norm(self.vertices - center, axis=1).max())
        return center, radius


@dataclass(frozen=True)
class MeshViolation:
    """One failed mesh invariant; ``subject`` names the offending edge or triangle."""

    kind: str
    subject: tuple
    message: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.kind}{self.subject}: {self.message}"


def make_icosphere(subdivisions: int, radius: float) -> TriangleMesh:
    """Geodesic sphere from midpoint subdivision of a regular icosahedron.

    Produces ``20 * 4**subdivisions`` triangles and ``10 * 4**subdivisions + 2``
    vertices, all on the sphere of the given radius, outward oriented.
    """
    if subdivisions < 0 or subdivisions > MAX_SUBDIVISIONS:
        raise ValueError(
            f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}"
        )
    if radius <= 0:
        raise ValueError("radius must be positive")

    verts = [v / np.linalg.norm(v) for v in _ICO_VERTICES]
    faces = _ICO_FACES.tolist()

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            idx = midpoint_cache.get(key)
            if idx is None:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                idx = len(verts) - 1
                midpoint_cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    vertices = np.array(verts) * radius
    mesh = TriangleMesh(vertices, np.array(faces, dtype=np.int64))
    # Orientation sanity: the construction keeps every face outward.
    if mesh.signed_volume <= 0:
        raise AssertionError("icosphere orientation broke")
    return mesh


def average_edge_length(mesh: TriangleMesh) -> float:
    """Arithmetic mean of the unique edge lengths (open meshes allowed)."""
    e = mesh.edges
    if len(e) == 0:
        raise ValueError("mesh has no edges")
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    return float(lengths.mean())


def validate(mesh: TriangleMesh) -> list[MeshViolation]:
    """Check the closed-manifold invariants; violations are data, not errors.

    Returns an empty list iff the mesh is watertight, consistently oriented,
    free of degenerate triangles and connected.
    """
    violations: list[MeshViolation] = []

    degenerate = np.nonzero(mesh.areas <= 0)[0]
    for t in degenerate:
        violations.append(
            MeshViolation("degenerate-triangle", (int(t),), "triangle has zero area")
        )

    # Directed edge census: each undirected edge must appear exactly twice,
    # once per direction, for a closed consistently oriented surface.
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.tile(np.arange(len(t)), 3)
    keys = np.minimum(directed[:, 0], directed[:, 1]) * (mesh.num_vertices + 1) + np.maximum(
        directed[:, 0], directed[:, 1]
    )
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    boundaries = np.nonzero(np.diff(keys_sorted))[0] + 1
    groups = np.split(order, boundaries)
    for g in groups:
        i, j = int(directed[g[0], 0]), int(directed[g[0], 1])
        edge = (min(i, j), max(i, j))
        if len(g) != 2:
            violations.append(
                MeshViolation(
                    "open-edge" if len(g) == 1 else "non-manifold-edge",
                    edge,
                    f"edge shared by {len(g)} triangle(s), expected 2",
                )
            )
        else:
            d0, d1 = directed[g[0]], directed[g[1]]
            if d0[0] == d1[0]:  # same direction twice -> inconsistent orientation
                violations.append(
                    MeshViolation(
                        "orientation",
                        edge,
                        "edge traversed twice in the same direction by triangles "
                        f"{int(owner[g[0]])} and {int(owner[g[1]])}",
                    )
                )

    if _connected_components(mesh) > 1:
        violations.append(
            MeshViolation("disconnected", (), "surface has more than one component")
        )
    return violations


def _connected_components(mesh: TriangleMesh) -> int:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    e = mesh.edges
    if len(e) == 0:
        return 0
    n = mesh.num_vertices
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return int(connected_components(adj, directed=False, return_labels=False))


def winding_number(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    """Generalized winding number of each point: ~1 inside, ~0 outside."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    omega = np.zeros(len(points))
    corners = mesh.corners
    # Chunk over triangles to bound memory on fine meshes.
    chunk = max(1, int(2e6) // max(len(points), 1))
    for start in range(0, len(corners), chunk):
        c = corners[start : start + chunk]
        a = c[None, :, 0, :] - points[:, None, :]
        b = c[None, :, 1, :] - points[:, None, :]
        d = c[None, :, 2, :] - points[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        ld = np.linalg.norm(d, axis=2)
        num = np.einsum("pti,pti->pt", a, np.cross(b, d))
        den = (
            la * lb * ld
            + np.einsum("pti,pti->pt", a, b) * ld
            + np.einsum("pti,pti->pt", b, d) * la
            + np.einsum("pti,pti->pt", d, a) * lb
        )
        omega += 2.0 * np.arctan2(num, den).sum(axis=1)
    return omega / (4.0 * np.pi)


@dataclass
class NestedModel:
    """Ordered nested closed surfaces with per-compartment conductivities.

    ``surfaces[0]`` is innermost.  ``conductivities`` has one entry per
    compartment plus the exterior: ``len(surfaces) + 1`` values, the last
    of which may be zero (insulating exterior).
    """

    surfaces: list[TriangleMesh]
    conductivities: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __init__(self, surfaces, conductivities):
        self.surfaces = list(surfaces)
        self.conductivities = np.asarray(conductivities, dtype=float)
        problems = self.validate()
        if problems:
            raise ValueError("invalid nested model: " + "; ".join(str(p) for p in problems))

    @property
    def num_interfaces(self) -> int:
        return len(self.surfaces)

    @property
    def insulating_exterior(self) -> bool:
        return self.conductivities[-1] == 0.0

    def validate(self) -> list[MeshViolation]:
        """Surface invariants plus nesting and conductivity checks."""
        problems: list[MeshViolation] = []
        for k, surf in enumerate(self.surfaces):
            for v in validate(surf):
                problems.append(MeshViolation(v.kind, (k,) + v.subject, f"surface {k}: {v.message}"))
        n = len(self.surfaces)
        if self.conductivities.shape != (n + 1,):
            problems.append(
                MeshViolation(
                    "conductivities",
                    (),
                    f"expected {n + 1} conductivities, got {self.conductivities.shape}",
                )
            )
            return problems
        if np.any(self.conductivities[:-1] <= 0) or self.conductivities[-1] < 0:
            problems.append(
                MeshViolation(
                    "conductivities", (), "interior conductivities must be positive, exterior nonnegative"
                )
            )
        for k in range(n - 1):
            inner, outer = self.surfaces[k], self.surfaces[k + 1]
            ci, ri = inner.bounding_sphere
            co, ro = outer.bounding_sphere
            if np.linalg.norm(ci - co) + ri >= ro:
                problems.append(
                    MeshViolation(
                        "nesting", (k,), f"bounding sphere of surface {k} not inside surface {k + 1}"
                    )
                )
                continue
            sample = inner.vertices[:: max(1, inner.num_vertices // 32)]
            w = winding_number(outer, sample)
            if np.any(np.abs(w - 1.0) > 0.1):
                problems.append(
                    MeshViolation(
                        "nesting", (k,), f"vertices of surface {k} not strictly inside surface {k + 1}"
                    )
                )
        return problems

    def compartment_of(self, point: np.ndarray) -> int:
        """1-based index of the compartment containing ``point``.

        Compartment ``k`` lies between surfaces ``k-1`` and ``k``;
        ``num_interfaces + 1`` is the exterior.
        """
        point = np.asarray(point, dtype=float)
        for k, surf in enumerate(self.surfaces):
            if abs(winding_number(surf, point[None])[0] - 1.0) < 0.5:
                return k + 1
        return self.num_interfaces + 1


def write_off(mesh: TriangleMesh, path) -> None:
    """ASCII OFF writer; floats carry 17 significant digits (exact round trip)."""
    lines = ["OFF", f"{mesh.num_vertices} {mesh.num_triangles} 0"]
    for v in mesh.vertices:
        lines.append(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path) -> TriangleMesh:
    """ASCII OFF reader matching :func:`write_off`; skips blank/comment lines."""
    tokens_iter = (
        line.split()
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )
    rows = list(tokens_iter)
    if not rows or rows[0] != ["OFF"]:
        raise ValueError(f"{path}: missing OFF header")
    nv, nc, _ = (int(x) for x in rows[1])
    if len(rows) < 2 + nv + nc:
        raise ValueError(f"{path}: truncated OFF file")
    vertices = np.array([[float(x) for x in rows[2 + i]] for i in range(nv)])
    tri_rows = rows[2 + nv : 2 + nv + nc]
    triangles = np.empty((nc, 3), dtype=np.int64)
    for i, r in enumerate(tri_rows):
        if r[0] != "3":
            raise ValueError(f"{path}: non-triangle face on line {i}")
        triangles[i] = [int(r[1]), int(r[2]), int(r[3])]
    return TriangleMesh(vertices, triangles)
