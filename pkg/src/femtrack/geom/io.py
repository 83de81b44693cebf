"""Mesh and point-cloud file I/O: OBJ, ascii/binary PLY, whitespace text.

Vertex order is kept exactly as found in the file; the pipeline relies on
index correspondence end to end.
"""

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .mesh import MeshError, PointCloudFrame, TriMesh

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_mesh(path):
    """Load a triangle mesh from an OBJ or PLY file.

    Normals are recomputed (area-weighted face-normal average) regardless
    of any normals stored in the file.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, faces = _read_obj(path)
    elif suffix == ".ply":
        vertices, _, faces = _read_ply(path)
        if faces is None:
            raise MeshError(f"{path}: PLY file has no faces, not a mesh")
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")
    if len(vertices) == 0:
        raise MeshError(f"{path}: empty mesh")
    return TriMesh(vertices, faces)


def save_mesh(path, mesh, binary=False):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        _write_obj(path, mesh)
    elif suffix == ".ply":
        _write_ply(path, mesh.vertices, mesh.vertex_normals, mesh.faces, binary)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")


def load_cloud(path, index=1):
    """Load a point-cloud frame from PLY (x,y,z,nx,ny,nz) or 6-column text.

    Normals are required input; clouds without them are refused.
    """
    path = Path(path)
    if path.suffix.lower() == ".ply":
        points, normals, _ = _read_ply(path)
        if normals is None:
            raise MeshError(f"{path}: point cloud has no normals (nx,ny,nz required)")
    else:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if data.shape[1] != 6:
            raise MeshError(f"{path}: text cloud must have 6 columns, got {data.shape[1]}")
        points, normals = data[:, :3], data[:, 3:]
    return PointCloudFrame(points, normals, index)


def save_cloud(path, frame, binary=False):
    path = Path(path)
    if path.suffix.lower() == ".ply":
        _write_ply(path, frame.points, frame.normals, None, binary)
    else:
        np.savetxt(path, np.hstack([frame.points, frame.normals]), fmt="%.17g")


# ----------------------------------------------------------------------
# OBJ

def _read_obj(path):
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex")
                vertices.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise MeshError(f"{path}:{lineno}: non-triangle face")
                face = []
                for tok in idx:
                    i = int(tok.split("/")[0])
                    if i < 0:
                        i = len(vertices) + 1 + i
                    face.append(i - 1)
                faces.append(face)
    if not vertices:
        raise MeshError(f"{path}: empty mesh")
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def _write_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for n in mesh.vertex_normals:
            fh.write(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}\n")


# ----------------------------------------------------------------------
# PLY

def _read_ply(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, dtype, is_list, count_dtype)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshError(f"{path}: unexpected end of header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise MeshError(f"{path}: property before element")
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[4], _PLY_TYPES[tokens[3]], True,
                                            _PLY_TYPES[tokens[2]]))
                else:
                    elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]], False, None))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
            raise MeshError(f"{path}: unsupported PLY format {fmt}")

        data = {}
        for name, count, props in elements:
            if fmt == "ascii":
                data[name] = _read_ply_ascii_element(fh, count, props)
            else:
                endian = "<" if fmt == "binary_little_endian" else ">"
                data[name] = _read_ply_binary_element(fh, count, props, endian)

    vertices = normals = faces = None
    if "vertex" in data:
        vd = data["vertex"]
        try:
            vertices = np.column_stack([vd["x"], vd["y"], vd["z"]]).astype(np.float64)
        except KeyError as exc:
            raise MeshError(f"{path}: vertex element lacks {exc}") from None
        if all(k in vd for k in ("nx", "ny", "nz")):
            normals = np.column_stack([vd["nx"], vd["ny"], vd["nz"]]).astype(np.float64)
    if "face" in data and len(data["face"]) > 0:
        rows = data["face"].get("vertex_indices") or data["face"].get("vertex_index")
        if rows is None:
            raise MeshError(f"{path}: face element lacks vertex_indices")
        if any(len(r) != 3 for r in rows):
            raise MeshError(f"{path}: non-triangle face")
        faces = np.asarray(rows, dtype=np.int64)
    if vertices is None:
        raise MeshError(f"{path}: no vertex element")
    return vertices, normals, faces


def _read_ply_ascii_element(fh, count, props):
    out = {p[0]: [] for p in props}
    for _ in range(count):
        tokens = fh.readline().split()
        pos = 0
        for pname, _, is_list, _ in props:
            if is_list:
                k = int(tokens[pos]); pos += 1
                out[pname].append([int(float(t)) for t in tokens[pos:pos + k]])
                pos += k
            else:
                out[pname].append(float(tokens[pos])); pos += 1
    return {k: (v if isinstance(v[0], list) else np.asarray(v)) if v else v
            for k, v in out.items()} if count else out


def _read_ply_binary_element(fh, count, props, endian):
    if not any(p[2] for p in props):
        dtype = np.dtype([(p[0], endian + p[1]) for p in props])
        raw = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
        return {p[0]: raw[p[0]] for p in props}
    # list properties: parse row by row
    out = {p[0]: [] for p in props}
    for _ in range(count):
        for pname, dt, is_list, count_dt in props:
            if is_list:
                k = int(np.frombuffer(fh.read(np.dtype(count_dt).itemsize),
                                      dtype=endian + count_dt)[0])
                vals = np.frombuffer(fh.read(np.dtype(dt).itemsize * k),
                                     dtype=endian + dt, count=k)
                out[pname].append([int(v) for v in vals])
            else:
                out[pname].append(
                    np.frombuffer(fh.read(np.dtype(dt).itemsize), dtype=endian + dt)[0])
    return {k: (np.asarray(v) if v and not isinstance(v[0], list) else v)
            for k, v in out.items()}


def _write_ply(path, vertices, normals, faces, binary):
    n = len(vertices)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}"]
    header += [f"property double {c}" for c in ("x", "y", "z")]
    if normals is not None:
        header += [f"property double {c}" for c in ("nx", "ny", "nz")]
    if faces is not None:
        header += [f"element face {len(faces)}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")

    vdata = vertices if normals is None else np.hstack([vertices, normals])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(vdata, dtype="<f8").tobytes())
            if faces is not None:
                for f in faces:
                    fh.write(struct.pack("<Biii", 3, int(f[0]), int(f[1]), int(f[2])))
        else:
            for row in vdata:
                fh.write((" ".join(f"{x:.17g}" for x in row) + "\n").encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


# ----------------------------------------------------------------------
# metrics CSV

METRICS_FIELDS = ("frame", "mean_dist", "max_dist", "volume", "area")


def write_metrics_csv(path, rows):
    """Write per-frame metric rows with the `frame,mean_dist,max_dist,volume,area` header.

    ``rows`` is an iterable of dicts; missing values are left empty.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRICS_FIELDS})


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [
            {k: (float(v) if v not in ("", None) and k != "frame" else
                 (int(v) if k == "frame" and v not in ("", None) else None))
             for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
