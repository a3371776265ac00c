"""Channel geometry and conforming two-subdomain triangulations.

The computational domain is a rectangular channel containing an annular
elastic obstacle (region between two nested axis-aligned rectangles).  The
fluid occupies the channel minus the outer rectangle, the solid occupies the
annulus, and the region inside the inner rectangle is a hole whose boundary
is clamped.  Meshing is done on a structured template so that all boundary
coordinates are bit-exact and the mesh is mirror symmetric about the channel
mid-line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLUID = 0
SOLID = 1

TAG_INFLOW = "inflow"
TAG_WALL = "wall"
TAG_OUTFLOW = "outflow"
TAG_INTERFACE = "interface"
TAG_CLAMPED = "clamped"

ALL_TAGS = (TAG_INFLOW, TAG_WALL, TAG_OUTFLOW, TAG_INTERFACE, TAG_CLAMPED)

# Where two Dirichlet tags meet at a corner node the higher-priority tag owns
# the node when conflicting prescriptions must be resolved.
TAG_PRIORITY = (TAG_WALL, TAG_INFLOW, TAG_OUTFLOW, TAG_INTERFACE, TAG_CLAMPED)


class GeometryError(ValueError):
    """Raised when a channel geometry violates its invariants."""


class MeshError(ValueError):
    """Raised when a mesh fails validation."""


def _as_rect(poly, name):
    """Interpret a closed polygon as an axis-aligned rectangle (xmin, xmax, ymin, ymax)."""
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise GeometryError(f"{name}: expected a closed polygon as an (n,2) array")
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    if xmax <= xmin or ymax <= ymin:
        raise GeometryError(f"{name}: degenerate polygon")
    corners = {(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)}
    for p in pts:
        if tuple(p) not in corners:
            raise GeometryError(f"{name}: only axis-aligned rectangles are supported")
    return xmin, xmax, ymin, ymax


@dataclass(frozen=True)
class ChannelGeometry:
    """Rectangular channel with an optional annular obstacle.

    ``obstacle_outer`` is the resting interface polygon, ``obstacle_inner``
    the clamped inner boundary.  Both may be ``None`` for the degenerate
    straight-channel test geometry.
    """

    channel_length: float
    channel_height: float
    obstacle_outer: tuple | None
    obstacle_inner: tuple | None
    target_edge_length: float

    def validate(self):
        if self.channel_length <= 0 or self.channel_height <= 0:
            raise GeometryError("channel dimensions must be positive")
        if self.target_edge_length <= 0:
            raise GeometryError("target_edge_length must be positive")
        if (self.obstacle_outer is None) != (self.obstacle_inner is None):
            raise GeometryError("obstacle_outer and obstacle_inner must be given together")
        if self.obstacle_outer is None:
            return
        ox0, ox1, oy0, oy1 = _as_rect(self.obstacle_outer, "obstacle_outer")
        ix0, ix1, iy0, iy1 = _as_rect(self.obstacle_inner, "obstacle_inner")
        if not (0.0 < ox0 and ox1 < self.channel_length and 0.0 < oy0 and oy1 < self.channel_height):
            raise GeometryError("obstacle must have positive clearance to the channel boundary")
        if not (ox0 < ix0 and ix1 < ox1 and oy0 < iy0 and iy1 < oy1):
            raise GeometryError("obstacle_inner must lie strictly inside obstacle_outer")

    @property
    def outer_rect(self):
        return None if self.obstacle_outer is None else _as_rect(self.obstacle_outer, "obstacle_outer")

    @property
    def inner_rect(self):
        return None if self.obstacle_inner is None else _as_rect(self.obstacle_inner, "obstacle_inner")


def rect_polygon(x0, x1, y0, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def default_geometry(h=0.1):
    """Channel 4x1 with a square obstacle of side 0.4 centered at (1.2, 0.5)."""
    return ChannelGeometry(
        channel_length=4.0,
        channel_height=1.0,
        obstacle_outer=rect_polygon(1.0, 1.4, 0.3, 0.7),
        obstacle_inner=rect_polygon(1.1, 1.3, 0.4, 0.6),
        target_edge_length=h,
    )


def straight_channel(length=4.0, height=1.0, h=0.1):
    """Degenerate geometry without obstacle (pure channel flow tests)."""
    return ChannelGeometry(length, height, None, None, h)


@dataclass
class Mesh:
    """Conforming triangulation of the two-subdomain channel.

    nodes           (N,2) coordinates
    triangles       (T,3) vertex indices, positively oriented
    tri_subdomain   (T,)  FLUID or SOLID
    boundary_edges  (E,2) vertex index pairs (boundary of the union plus interface)
    edge_tags       (E,)  one tag name per edge
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tri_subdomain: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    geometry: ChannelGeometry | None = field(default=None, repr=False)

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def edges_with_tag(self, tag):
        if tag not in ALL_TAGS:
            raise MeshError(f"unknown boundary tag {tag!r}")
        return self.boundary_edges[self.edge_tags == tag]

    def triangle_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _breakpoints(lo, hi, required, h):
    """Sorted coordinates covering [lo, hi] containing ``required`` with gaps <= h."""
    req = sorted(set([lo, hi] + [r for r in required if lo < r < hi]))
    out = []
    for a, b in zip(req[:-1], req[1:]):
        n = max(1, int(np.ceil((b - a) / h - 1e-12)))
        seg = np.linspace(a, b, n + 1)
        out.extend(seg[:-1])
    out.append(hi)
    return np.asarray(out)


def build_channel_mesh(geom: ChannelGeometry) -> Mesh:
    """Mesh the channel geometry on a structured rectilinear template.

    Every rectangle of the template is split along a diagonal chosen by the
    side of the channel mid-line the cell lies on, so a mirror-symmetric
    geometry yields a mirror-symmetric mesh.
    """
    geom.validate()
    L, H, h = geom.channel_length, geom.channel_height, geom.target_edge_length
    # Edge length bound: rectangle cells of size <= h give triangle edges
    # <= sqrt(2) h; shrink the template pitch to meet the 1.5 h contract.
    pitch = h * 1.5 / np.sqrt(2.0)
    req_x, req_y = [], [H / 2.0]
    if geom.outer_rect is not None:
        ox0, ox1, oy0, oy1 = geom.outer_rect
        ix0, ix1, iy0, iy1 = geom.inner_rect
        req_x += [ox0, ox1, ix0, ix1]
        req_y += [oy0, oy1, iy0, iy1]
    xs = _breakpoints(0.0, L, req_x, pitch)
    ys = _breakpoints(0.0, H, req_y, pitch)
    nx, ny = len(xs), len(ys)

    def nid(i, j):
        return j * nx + i

    grid_nodes = np.empty((nx * ny, 2))
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    grid_nodes[:, 0] = gx.ravel()
    grid_nodes[:, 1] = gy.ravel()

    tris, labels = [], []
    outer = geom.outer_rect
    inner = geom.inner_rect
    for j in range(ny - 1):
        for i in range(nx - 1):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if inner is not None and inner[0] < cx < inner[1] and inner[2] < cy < inner[3]:
                continue  # hole
            if outer is not None and outer[0] < cx < outer[1] and outer[2] < cy < outer[3]:
                lab = SOLID
            else:
                lab = FLUID
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if cy < H / 2.0:
                cell = [(a, b, d), (b, c, d)]
            else:
                cell = [(a, b, c), (a, c, d)]
            tris.extend(cell)
            labels.extend([lab, lab])

    tris = np.asarray(tris, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int8)

    # drop unused grid nodes (inside the hole)
    used = np.unique(tris)
    remap = -np.ones(nx * ny, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = grid_nodes[used]
    tris = remap[tris]

    boundary_edges, edge_tags = _tag_edges(nodes, tris, labels, geom)
    mesh = Mesh(nodes, tris, labels, boundary_edges, edge_tags, geom)
    report = validate_mesh(mesh)
    if not report.ok:
        raise MeshError("generated mesh failed validation: " + "; ".join(report.messages))
    return mesh


def _edge_incidence(triangles, tri_subdomain):
    """Map undirected edge -> list of (triangle index, subdomain, oriented pair)."""
    inc = {}
    for t, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            inc.setdefault(key, []).append((t, int(tri_subdomain[t]), (u, v)))
    return inc


def _tag_edges(nodes, triangles, tri_subdomain, geom):
    L, H = geom.channel_length, geom.channel_height
    inc = _edge_incidence(triangles, tri_subdomain)
    edges, tags = [], []
    for (u, v), ts in sorted(inc.items()):
        if len(ts) == 1:
            (x0, y0), (x1, y1) = nodes[u], nodes[v]
            if x0 == 0.0 and x1 == 0.0:
                tag = TAG_INFLOW
            elif x0 == L and x1 == L:
                tag = TAG_OUTFLOW
            elif (y0 == 0.0 and y1 == 0.0) or (y0 == H and y1 == H):
                tag = TAG_WALL
            else:
                tag = TAG_CLAMPED
            edges.append((u, v))
            tags.append(tag)
        elif len(ts) == 2 and ts[0][1] != ts[1][1]:
            edges.append((u, v))
            tags.append(TAG_INTERFACE)
    return np.asarray(edges, dtype=np.int64), np.asarray(tags, dtype=object)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four; tags are inherited."""
    nodes = mesh.nodes
    tris = mesh.triangles
    edge_mid = {}
    new_nodes = [nodes]
    next_id = len(nodes)

    def midpoint(u, v):
        nonlocal next_id
        key = (min(u, v), max(u, v))
        if key not in edge_mid:
            edge_mid[key] = next_id
            new_nodes.append(0.5 * (nodes[u] + nodes[v])[None, :])
            next_id += 1
        return edge_mid[key]

    child_tris, child_labels = [], []
    for t, (a, b, c) in enumerate(tris):
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        child_tris.extend([(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)])
        child_labels.extend([mesh.tri_subdomain[t]] * 4)

    child_edges, child_tags = [], []
    for (u, v), tag in zip(mesh.boundary_edges, mesh.edge_tags):
        m = midpoint(u, v)
        child_edges.extend([(u, m), (m, v)])
        child_tags.extend([tag, tag])

    return Mesh(
        np.vstack(new_nodes),
        np.asarray(child_tris, dtype=np.int64),
        np.asarray(child_labels, dtype=np.int8),
        np.asarray(child_edges, dtype=np.int64),
        np.asarray(child_tags, dtype=object),
        mesh.geometry,
    )


@dataclass
class MeshReport:
    """Outcome of the independent half-edge validation walk."""

    ok: bool
    messages: list
    num_nodes: int = 0
    num_edges: int = 0
    num_triangles: int = 0
    euler_characteristic: int = 0
    num_boundary_loops: int = 0
    tag_edge_counts: dict = field(default_factory=dict)


def validate_mesh(mesh: Mesh) -> MeshReport:
    """Re-derive conformity, orientation, and the tag partition from scratch.

    This walk is independent of the construction path in
    :func:`build_channel_mesh`: it rebuilds the edge incidence from the
    triangle list alone and compares against the stored boundary data.
    """
    msgs = []
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        msgs.append(f"triangle {bad} is not positively oriented (area {areas[bad]:.3e})")

    inc = _edge_incidence(mesh.triangles, mesh.tri_subdomain)
    boundary, interface = [], []
    for key, ts in inc.items():
        if len(ts) == 1:
            boundary.append(key)
        elif len(ts) == 2:
            # conforming & consistently oriented: the shared edge is traversed
            # in opposite directions by its two triangles
            if ts[0][2] == ts[1][2]:
                msgs.append(f"edge {key} traversed twice in the same direction")
            if ts[0][1] != ts[1][1]:
                interface.append(key)
        else:
            msgs.append(f"edge {key} shared by {len(ts)} triangles")

    declared = {(min(u, v), max(u, v)): tag for (u, v), tag in zip(mesh.boundary_edges, mesh.edge_tags)}
    expect = set(boundary) | set(interface)
    if set(declared) != expect:
        msgs.append("tagged edges do not match the topological boundary plus interface")
    for key in boundary:
        if declared.get(key) == TAG_INTERFACE:
            msgs.append(f"boundary edge {key} wrongly tagged interface")
    for key in interface:
        if declared.get(key) != TAG_INTERFACE:
            msgs.append(f"interface edge {key} tagged {declared.get(key)!r}")

    # boundary loops via half-edge walk over boundary + interface edges
    num_loops = _count_loops(expect)

    V = mesh.num_nodes
    E = len(inc)
    F = mesh.num_triangles
    tag_counts = {tag: int(np.sum(mesh.edge_tags == tag)) for tag in ALL_TAGS}

    if mesh.geometry is not None:
        g = mesh.geometry
        for (u, v), tag in declared.items():
            x, y = mesh.nodes[[u, v], 0], mesh.nodes[[u, v], 1]
            if tag == TAG_INFLOW and not np.all(x == 0.0):
                msgs.append("inflow edge not bit-exact on x=0")
            if tag == TAG_OUTFLOW and not np.all(x == g.channel_length):
                msgs.append("outflow edge not bit-exact on x=L")
            if tag == TAG_WALL and not (np.all(y == 0.0) or np.all(y == g.channel_height)):
                msgs.append("wall edge not bit-exact on y=0 or y=H")

    return MeshReport(
        ok=not msgs,
        messages=msgs,
        num_nodes=V,
        num_edges=E,
        num_triangles=F,
        euler_characteristic=V - E + F,
        num_boundary_loops=num_loops,
        tag_edge_counts=tag_counts,
    )


def _count_loops(edge_set):
    adj = {}
    for u, v in edge_set:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    seen = set()
    loops = 0
    for start in adj:
        if start in seen:
            continue
        loops += 1
        stack = [start]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(adj[n])
    return loops


def mirror_permutation(mesh: Mesh, tol=1e-12):
    """Node permutation realizing reflection across the channel mid-line.

    Returns the permutation array ``perm`` with ``nodes[perm] ~ (x, H - y)``,
    or ``None`` if the mesh is not symmetric.
    """
    if mesh.geometry is None:
        return None
    H = mesh.geometry.channel_height
    key = {}
    for i, (x, y) in enumerate(mesh.nodes):
        key[(round(x / tol), round(y / tol))] = i
    perm = np.empty(mesh.num_nodes, dtype=np.int64)
    for i, (x, y) in enumerate(mesh.nodes):
        j = key.get((round(x / tol), round((H - y) / tol)))
        if j is None:
            return None
        perm[i] = j
    return perm
