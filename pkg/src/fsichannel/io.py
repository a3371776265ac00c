"""Serialization: line-oriented mesh text format and legacy VTK export."""

import json

import numpy as np

from .mesh import FLUID, Mesh, ChannelGeometry

_SUBDOMAIN_NAMES = {0: "fluid", 1: "solid"}
_SUBDOMAIN_IDS = {v: k for k, v in _SUBDOMAIN_NAMES.items()}


def save_mesh(path, mesh: Mesh):
    """Text format: header, node block, triangle block (with subdomain
    labels), edge block (with tag names).  Floats are written with repr
    round-trip precision."""
    with open(path, "w") as fh:
        fh.write("fsichannel-mesh 1\n")
        fh.write(f"nodes {len(mesh.nodes)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {len(mesh.triangles)}\n")
        for (a, b, c), s in zip(mesh.triangles, mesh.tri_subdomain):
            fh.write(f"{a} {b} {c} {_SUBDOMAIN_NAMES[int(s)]}\n")
        fh.write(f"edges {len(mesh.boundary_edges)}\n")
        for (u, v), t in zip(mesh.boundary_edges, mesh.edge_tags):
            fh.write(f"{u} {v} {t}\n")


def load_mesh(path, geometry: ChannelGeometry | None = None) -> Mesh:
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines[0].startswith("fsichannel-mesh"):
        raise ValueError("not a mesh file")
    k = 1

    def block(kind):
        nonlocal k
        word, n = lines[k].split()
        if word != kind:
            raise ValueError(f"expected {kind} block, found {word}")
        k += 1
        rows = lines[k:k + int(n)]
        k += int(n)
        return rows

    nodes = np.array([[float(c) for c in r.split()] for r in block("nodes")])
    tri_rows = [r.split() for r in block("triangles")]
    triangles = np.array([[int(c) for c in r[:3]] for r in tri_rows])
    subdom = np.array([_SUBDOMAIN_IDS[r[3]] for r in tri_rows], dtype=int)
    edge_rows = [r.split() for r in block("edges")]
    edges = np.array([[int(r[0]), int(r[1])] for r in edge_rows])
    tags = np.array([r[2] for r in edge_rows])
    return Mesh(nodes, triangles, subdom, edges, tags, geometry)


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None):
    """Legacy ASCII VTK unstructured grid with optional point fields
    (name -> (n_nodes,) or (n_nodes, 2) arrays) and cell fields."""
    n = len(mesh.nodes)
    t = len(mesh.triangles)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nfsichannel fields\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {t} {4 * t}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {t}\n")
        fh.write("5\n" * t)
        cell_data = dict(cell_data or {})
        cell_data.setdefault("subdomain", mesh.tri_subdomain)
        fh.write(f"CELL_DATA {t}\n")
        for name, arr in cell_data.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(arr, dtype=float):
                fh.write(f"{float(v)!r}\n")
        if point_data:
            fh.write(f"POINT_DATA {n}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        fh.write(f"{float(v)!r}\n")
                else:
                    fh.write(f"VECTORS {name} double\n")
                    for vx, vy in arr:
                        fh.write(f"{float(vx)!r} {float(vy)!r} 0.0\n")


def vertex_values(fefun):
    """Values of an FE function at mesh vertices, for VTK point data.

    Nodes outside the function's subdomain get zeros (VTK point data must
    cover every mesh node).
    """
    space = fefun.space
    mesh = space.mesh
    arity = space.desc.arity
    out = np.zeros((len(mesh.nodes), arity) if arity > 1 else len(mesh.nodes))
    cm = fefun.component_matrix()
    for node, dof in space._vert_dof.items():
        out[node] = cm[dof] if arity > 1 else cm[dof, 0]
    return out


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(c) if isinstance(c, float) else str(c)
                              for c in row) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
