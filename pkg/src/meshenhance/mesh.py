"""Triangle mesh container with optional per-vertex RGBA colors, plus OBJ/PLY I/O."""

from __future__ import annotations

import struct

import numpy as np

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


class Mesh:
    """Triangle mesh: vertices (V,3) float64, faces (T,3) int, optional colors (V,4) in [0,1].

    Faces are counter-clockwise when viewed from outside. Construction
    validates index bounds and rejects degenerate (near zero area) faces.
    """

    def __init__(self, vertices, faces, colors=None, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if colors is not None:
            colors = np.ascontiguousarray(colors, dtype=np.float64)
            if colors.shape == (len(self.vertices), 3):
                colors = np.concatenate([colors, np.ones((len(colors), 1))], axis=1)
            if colors.shape != (len(self.vertices), 4):
                raise MeshError(f"colors must be (V,4), got {colors.shape}")
        self.colors = colors
        if validate:
            self.validate()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def validate(self):
        if self.n_faces == 0:
            return
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        areas = self.face_areas()
        bad = np.nonzero(areas < DEGENERATE_AREA)[0]
        if len(bad):
            raise MeshError(f"degenerate face(s) with area < {DEGENERATE_AREA}: {bad[:10].tolist()}")
        if self.colors is not None and (
            np.nanmin(self.colors) < -1e-9 or np.nanmax(self.colors) > 1 + 1e-9
        ):
            raise MeshError("colors outside [0,1]")

    def face_corner_positions(self):
        """Returns (p0, p1, p2), each (T,3)."""
        v = self.vertices
        f = self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_normals(self, normalized=True):
        p0, p1, p2 = self.face_corner_positions()
        n = np.cross(p1 - p0, p2 - p0)
        if normalized:
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            lens[lens == 0] = 1.0
            n = n / lens
        return n

    def face_areas(self):
        p0, p1, p2 = self.face_corner_positions()
        return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)

    def centroid(self):
        return self.vertices.mean(axis=0)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def edges_unique(self):
        """Undirected edges as a sorted (E,2) array, each edge once."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def with_vertices(self, vertices):
        return Mesh(vertices, self.faces, self.colors, validate=False)

    def with_colors(self, colors):
        return Mesh(self.vertices, self.faces, colors, validate=False)

    def copy(self):
        return Mesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.colors is None else self.colors.copy(),
            validate=False,
        )


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length.

    Isolated vertices get a zero normal (flagged rather than raising).
    """
    fn = mesh.face_normals(normalized=False)  # length = 2*area, area weighting for free
    vn = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(vn, mesh.faces[:, c], fn)
    lens = np.linalg.norm(vn, axis=1, keepdims=True)
    nz = lens[:, 0] > 0
    vn[nz] /= lens[nz]
    return vn


# ---------------------------------------------------------------------------
# OBJ


def save_obj(mesh: Mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return Mesh(np.array(verts), np.array(faces))


# ---------------------------------------------------------------------------
# PLY with 8-bit red/green/blue/alpha vertex colors


def save_ply(mesh: Mesh, path, binary=True):
    v = mesh.vertices
    has_color = mesh.colors is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(v)}")
    header += ["property double x", "property double y", "property double z"]
    if has_color:
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            "property uchar alpha",
        ]
    header.append(f"element face {mesh.n_faces}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")
    if has_color:
        c8 = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            for i in range(len(v)):
                fh.write(struct.pack("<3d", *v[i]))
                if has_color:
                    fh.write(struct.pack("<4B", *c8[i]))
            for f in mesh.faces:
                fh.write(struct.pack("<B3i", 3, *f))
        else:
            for i in range(len(v)):
                row = f"{v[i, 0]:.17g} {v[i, 1]:.17g} {v[i, 2]:.17g}"
                if has_color:
                    row += " " + " ".join(str(int(x)) for x in c8[i])
                fh.write((row + "\n").encode("ascii"))
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def load_ply(path) -> Mesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshError("not a PLY file (no end_header)")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements = []  # (name, count, [(proptype, name) or ("list", counttype, itemtype, name)])
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))

    type_fmt = {
        "char": "b", "uchar": "B", "int8": "b", "uint8": "B",
        "short": "h", "ushort": "H", "int16": "h", "uint16": "H",
        "int": "i", "uint": "I", "int32": "i", "uint32": "I",
        "float": "f", "float32": "f", "double": "d", "float64": "d",
    }

    verts, colors, faces = [], [], []
    has_color = False
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            for _ in range(count):
                if name == "vertex":
                    vals = {}
                    for p in props:
                        if p[0] == "list":
                            n = int(tokens[pos]); pos += 1 + n
                        else:
                            vals[p[1]] = float(tokens[pos]); pos += 1
                    verts.append([vals["x"], vals["y"], vals["z"]])
                    if "red" in vals:
                        has_color = True
                        colors.append([vals["red"], vals["green"], vals["blue"],
                                       vals.get("alpha", 255.0)])
                elif name == "face":
                    n = int(tokens[pos]); pos += 1
                    idx = [int(tokens[pos + k]) for k in range(n)]
                    pos += n
                    for k in range(1, n - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
                else:
                    for p in props:
                        if p[0] == "list":
                            n = int(tokens[pos]); pos += 1 + n
                        else:
                            pos += 1
    elif fmt == "binary_little_endian":
        pos = 0
        for name, count, props in elements:
            for _ in range(count):
                vals = {}
                for p in props:
                    if p[0] == "list":
                        cf = type_fmt[p[1]]
                        n = struct.unpack_from("<" + cf, body, pos)[0]
                        pos += struct.calcsize(cf)
                        itf = type_fmt[p[2]]
                        items = struct.unpack_from(f"<{n}{itf}", body, pos)
                        pos += n * struct.calcsize(itf)
                        vals[p[3]] = items
                    else:
                        tf = type_fmt[p[0]]
                        vals[p[1]] = struct.unpack_from("<" + tf, body, pos)[0]
                        pos += struct.calcsize(tf)
                if name == "vertex":
                    verts.append([vals["x"], vals["y"], vals["z"]])
                    if "red" in vals:
                        has_color = True
                        colors.append([vals["red"], vals["green"], vals["blue"],
                                       vals.get("alpha", 255)])
                elif name == "face":
                    idx = vals.get("vertex_indices", vals.get("vertex_index"))
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
    else:
        raise MeshError(f"unsupported PLY format {fmt!r}")

    c = np.array(colors, dtype=np.float64) / 255.0 if has_color else None
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64), c)
