"""PLY point-cloud reader/writer (ascii and binary_little_endian).

Supported vertex properties: x, y, z (float/double), optional red, green,
blue (uchar, mapped to [0, 1] floats), optional nx, ny, nz (float/double).
Other properties are read and discarded; non-vertex elements are rejected.
"""

from __future__ import annotations

import numpy as np

from .errors import PipelineError
from .geometry import PointCloud

_PLY_DTYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write a cloud as PLY. Positions/normals are stored as float32,
    colors as 8-bit."""
    n = cloud.n
    names = ["x", "y", "z"]
    formats = ["f4", "f4", "f4"]
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        formats += ["f4", "f4", "f4"]
    if cloud.colors is not None:
        names += ["red", "green", "blue"]
        formats += ["u1", "u1", "u1"]
    rec = np.zeros(n, dtype={"names": names, "formats": formats})
    pos32 = cloud.positions.astype(np.float32)
    rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
    if cloud.normals is not None:
        nrm32 = cloud.normals.astype(np.float32)
        rec["nx"], rec["ny"], rec["nz"] = nrm32[:, 0], nrm32[:, 1], nrm32[:, 2]
    if cloud.colors is not None:
        col8 = np.rint(cloud.colors * 255.0).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = col8[:, 0], col8[:, 1], col8[:, 2]

    type_names = {"f4": "float", "u1": "uchar"}
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {n}")
    for name, fmt in zip(names, formats):
        header.append(f"property {type_names[fmt]} {name}")
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(rec.astype(rec.dtype.newbyteorder("<")).tobytes())
        else:
            for row in rec:
                parts = []
                for name, fmt in zip(names, formats):
                    val = row[name]
                    parts.append(str(int(val)) if fmt == "u1" else repr(float(val)))
                f.write((" ".join(parts) + "\n").encode("ascii"))


def load_ply(path) -> PointCloud:
    """Read a PLY file into a PointCloud."""
    with open(path, "rb") as f:
        data = f.read()

    end = data.find(b"end_header")
    if end < 0:
        raise PipelineError(f"{path}: not a PLY file (no end_header)")
    body_start = data.index(b"\n", end) + 1
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()

    if not header_lines or header_lines[0].strip() != "ply":
        raise PipelineError(f"{path}: missing 'ply' magic")
    fmt = None
    n_vertex = None
    props: list[tuple[str, str]] = []
    current_element = None
    for line in header_lines[1:]:
        tokens = line.strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            current_element = tokens[1]
            if current_element == "vertex":
                n_vertex = int(tokens[2])
            elif int(tokens[2]) != 0:
                raise PipelineError(f"{path}: unsupported element '{tokens[1]}'")
        elif tokens[0] == "property" and current_element == "vertex":
            if tokens[1] == "list":
                raise PipelineError(f"{path}: list properties are not supported")
            if tokens[1] not in _PLY_DTYPES:
                raise PipelineError(f"{path}: unknown property type '{tokens[1]}'")
            props.append((tokens[2], _PLY_DTYPES[tokens[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise PipelineError(f"{path}: unsupported format '{fmt}'")
    if n_vertex is None:
        raise PipelineError(f"{path}: no vertex element")

    dtype = np.dtype([(name, "<" + code) for name, code in props])
    if fmt == "binary_little_endian":
        rec = np.frombuffer(data, dtype=dtype, count=n_vertex, offset=body_start)
    else:
        text = data[body_start:].decode("ascii")
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if len(rows) < n_vertex:
            raise PipelineError(f"{path}: expected {n_vertex} vertices, found {len(rows)}")
        rec = np.zeros(n_vertex, dtype=dtype)
        for j, (name, _) in enumerate(props):
            col = [rows[i][j] for i in range(n_vertex)]
            rec[name] = np.asarray(col, dtype=dtype[name])

    names = {name for name, _ in props}
    if not {"x", "y", "z"} <= names:
        raise PipelineError(f"{path}: missing x/y/z properties")
    positions = np.stack(
        [rec["x"], rec["y"], rec["z"]], axis=1
    ).astype(np.float64)
    colors = None
    if {"red", "green", "blue"} <= names:
        colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    normals = None
    if {"nx", "ny", "nz"} <= names:
        normals = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1)
        lengths[lengths == 0] = 1.0
        normals = normals / lengths[:, None]
    return PointCloud(positions=positions, colors=colors, normals=normals)
