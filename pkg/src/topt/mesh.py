"""Structured right-triangle meshes of rectangles with tagged boundary edges."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

import topt.coresys.logger as logger

GAMMA0 = 0  # Dirichlet
GAMMA1 = 1  # traction / flux
GAMMA2 = 2  # homogeneous Neumann

TAG_NAMES = {"Gamma0": GAMMA0, "Gamma1": GAMMA1, "Gamma2": GAMMA2}
EDGES = ("left", "right", "bottom", "top")

# Relative tolerance for boundary interval membership.
_INTERVAL_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh dimensions or boundary specification."""


@dataclass(frozen=True)
class BoundarySegment:
    edge: str      # left, right, bottom, top
    start: float   # position along the edge, measured from its lower/left end
    end: float
    tag: int       # GAMMA0 or GAMMA1

    @classmethod
    def from_names(cls, edge: str, start: float, end: float, tag: str) -> "BoundarySegment":
        if tag not in ("Gamma0", "Gamma1"):
            raise MeshError(f"Segment tag must be Gamma0 or Gamma1, got {tag!r}")
        return cls(edge, float(start), float(end), TAG_NAMES[tag])


@dataclass(frozen=True)
class BoundarySpec:
    segments: Tuple[BoundarySegment, ...] = ()

    def validate(self, lx: float, ly: float):
        """Check edge names, interval bounds and disjointness per edge."""
        by_edge = {}
        for seg in self.segments:
            if seg.edge not in EDGES:
                raise MeshError(f"Unknown boundary edge {seg.edge!r}")
            if seg.tag not in (GAMMA0, GAMMA1):
                raise MeshError(f"Segment tag must be Gamma0 or Gamma1, got {seg.tag!r}")
            length = lx if seg.edge in ("bottom", "top") else ly
            tol = _INTERVAL_TOL * length
            if seg.start > seg.end or seg.start < -tol or seg.end > length + tol:
                raise MeshError(f"Segment [{seg.start}, {seg.end}] outside edge '{seg.edge}' of length {length}")
            by_edge.setdefault(seg.edge, []).append(seg)
        for edge, segs in by_edge.items():
            segs = sorted(segs, key=lambda s: s.start)
            for a, b in zip(segs, segs[1:]):
                # closed intervals: touching endpoints overlap
                if b.start <= a.end:
                    raise MeshError(f"Overlapping boundary segments on edge '{edge}'")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulated rectangle [0, lx] x [0, ly].

    nodes: (N, 2) coordinates, node (i, j) has index j * (nx + 1) + i.
    triangles: (2 nx ny, 3) counterclockwise node indices.
    boundary_edges: (E, 2) node pairs; boundary_tags: (E,) tags;
    boundary_sides: (E,) index into EDGES.
    """
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    boundary_sides: np.ndarray
    lx: float
    ly: float
    nx: int
    ny: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def triangle_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.nodes[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            areas.setflags(write=False)
            self._cache["areas"] = areas
        return self._cache["areas"]

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def nodes_with_tag(self, tag: int) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def same_geometry(self, other: "Mesh") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(self.nodes, other.nodes)


def build_rect_mesh(lx: float, ly: float, nx: int, ny: int) -> Mesh:
    """Structured mesh of [0,lx]x[0,ly], each cell split bottom-left to top-right."""
    if not (lx > 0 and ly > 0):
        raise MeshError(f"Rectangle sides must be positive, got lx={lx}, ly={ly}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"Subdivision counts must be integers >= 1, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (jj * (nx + 1) + ii).ravel()
    n1 = n0 + 1
    n2 = n0 + nx + 2
    n3 = n0 + nx + 1
    lower = np.column_stack([n0, n1, n2])
    upper = np.column_stack([n0, n2, n3])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, sides = [], []
    for i in range(nx):
        edges.append((i, i + 1))                                # bottom
        sides.append(EDGES.index("bottom"))
        edges.append((ny * (nx + 1) + i, ny * (nx + 1) + i + 1))  # top
        sides.append(EDGES.index("top"))
    for j in range(ny):
        edges.append((j * (nx + 1), (j + 1) * (nx + 1)))        # left
        sides.append(EDGES.index("left"))
        edges.append((j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx))  # right
        sides.append(EDGES.index("right"))

    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=np.asarray(edges, dtype=np.int64),
        boundary_tags=np.full(len(edges), GAMMA2, dtype=np.int64),
        boundary_sides=np.asarray(sides, dtype=np.int64),
        lx=float(lx), ly=float(ly), nx=nx, ny=ny,
    )
    logger.trace(f"Mesh: built {nx}x{ny} mesh of [0,{lx}]x[0,{ly}]")
    return mesh


def _edge_coordinate(mesh: Mesh, side: str, node: np.ndarray) -> np.ndarray:
    xy = mesh.nodes[node]
    return xy[..., 0] if side in ("bottom", "top") else xy[..., 1]


def tag_boundary(mesh: Mesh, spec: BoundarySpec) -> Mesh:
    """Return a copy of mesh whose boundary edges carry the tags of spec.

    An edge takes a segment's tag iff both endpoints lie in the closed interval;
    all other boundary edges are Gamma2.
    """
    spec.validate(mesh.lx, mesh.ly)
    tags = np.full(len(mesh.boundary_edges), GAMMA2, dtype=np.int64)
    for seg in spec.segments:
        side_id = EDGES.index(seg.edge)
        on_side = mesh.boundary_sides == side_id
        length = mesh.lx if seg.edge in ("bottom", "top") else mesh.ly
        tol = _INTERVAL_TOL * length
        s = _edge_coordinate(mesh, seg.edge, mesh.boundary_edges)
        inside = np.all((s >= seg.start - tol) & (s <= seg.end + tol), axis=1)
        tags[on_side & inside] = seg.tag

    counts = {name: int(np.sum(tags == t)) for name, t in TAG_NAMES.items()}
    logger.debug(f"Mesh: boundary tagged {counts}")
    return Mesh(
        nodes=mesh.nodes,
        triangles=mesh.triangles,
        boundary_edges=mesh.boundary_edges,
        boundary_tags=tags,
        boundary_sides=mesh.boundary_sides,
        lx=mesh.lx, ly=mesh.ly, nx=mesh.nx, ny=mesh.ny,
    )


def boundary_spec_from_config(segments: Sequence[dict]) -> BoundarySpec:
    """Build a BoundarySpec from config entries {EDGE, START, END, TAG}."""
    built: List[BoundarySegment] = []
    for entry in segments:
        try:
            built.append(BoundarySegment.from_names(entry["EDGE"], entry["START"], entry["END"], entry["TAG"]))
        except KeyError as e:
            raise MeshError(f"Boundary segment is missing key {e}") from e
    return BoundarySpec(tuple(built))
