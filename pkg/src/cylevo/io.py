"""Point-cloud ingestion, result persistence and mesh export.

Supported cloud formats:

* ``xyz`` -- ASCII, one point per line, whitespace separated, extra columns ignored,
  ``#`` starts a comment.
* ``ply`` -- ASCII or binary little-endian PLY with a ``vertex`` element holding
  ``x``, ``y`` and ``z`` properties. Other properties and elements are skipped.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from cylevo.geometry import Cylinder, CylinderFrame

RESULT_SCHEMA = "cylevo.fit-result"
RESULT_VERSION = 1


class CloudParseError(ValueError):
    """Malformed point-cloud file. The message names the line or byte offset."""


class EmptyCloud(ValueError):
    """A point cloud without any point."""


class SchemaError(ValueError):
    """Result file with an unknown schema or version."""


class GridIndex:
    """Uniform-grid spatial index over a fixed point array."""

    def __init__(self, points: np.ndarray, cell: float):
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.cell = float(cell)
        self.points = points
        self.lo = points.min(axis=0)
        keys = np.floor((points - self.lo) / self.cell).astype(np.int64)
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        sk = keys[order]
        change = np.ones(len(sk), dtype=bool)
        change[1:] = np.any(sk[1:] != sk[:-1], axis=1)
        starts = np.flatnonzero(change)
        self.cell_keys = sk[starts]
        self.cell_start = np.append(starts, len(sk))
        self.order = order

    def _gather(self, box_lo, box_hi) -> np.ndarray:
        klo = np.floor((np.asarray(box_lo) - self.lo) / self.cell)
        khi = np.floor((np.asarray(box_hi) - self.lo) / self.cell)
        sel = np.flatnonzero(np.all((self.cell_keys >= klo) & (self.cell_keys <= khi), axis=1))
        if len(sel) == 0:
            return np.empty(0, dtype=np.int64)
        starts = self.cell_start[sel]
        lengths = self.cell_start[sel + 1] - starts
        offsets = np.cumsum(lengths) - lengths
        flat = np.repeat(starts - offsets, lengths) + np.arange(int(lengths.sum()))
        return np.sort(self.order[flat])

    def query_ball(self, center, radius: float) -> np.ndarray:
        """Sorted indices of points within ``radius`` (inclusive) of ``center``."""
        c = np.asarray(center, dtype=float)
        cand = self._gather(c - radius, c + radius)
        d2 = np.sum((self.points[cand] - c) ** 2, axis=1)
        return cand[d2 <= radius * radius]

    def query_segment(self, a, b, radius: float) -> np.ndarray:
        """Sorted indices of points within ``radius`` of the segment ``a``-``b``."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        cand = self._gather(np.minimum(a, b) - radius, np.maximum(a, b) + radius)
        return cand[segment_distance(self.points[cand], a, b) <= radius]


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(points)) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


class PointCloud:
    """Immutable set of 3D points with optional identifiers and a lazy grid index."""

    def __init__(self, points, ids: Optional[Sequence[int]] = None):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        pts.setflags(write=False)
        self.points = pts
        if ids is None:
            ids = np.arange(len(pts), dtype=np.int64)
        else:
            ids = np.array(ids, dtype=np.int64)
            if len(ids) != len(pts):
                raise ValueError("one identifier per point is required")
            if len(np.unique(ids)) != len(ids):
                raise ValueError("point identifiers must be unique")
        ids.setflags(write=False)
        self.ids = ids
        self.all_indices = np.arange(len(pts), dtype=np.int64)
        self._indexes: dict[float, GridIndex] = {}

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise EmptyCloud("empty point cloud has no bounding box")
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def index(self, cell: float) -> GridIndex:
        key = float(cell)
        if key not in self._indexes:
            self._indexes[key] = GridIndex(self.points, key)
        return self._indexes[key]

    def subset(self, mask_or_idx) -> "PointCloud":
        sel = np.asarray(mask_or_idx)
        return PointCloud(self.points[sel], self.ids[sel])

    def radius_query(self, center, radius: float, brute: bool = False, cell: Optional[float] = None):
        if brute:
            d2 = np.sum((self.points - np.asarray(center, dtype=float)) ** 2, axis=1)
            return np.flatnonzero(d2 <= radius * radius)
        return self.index(cell or max(radius, 1e-12)).query_ball(center, radius)


# -- cloud readers / writers -------------------------------------------------------------

def _guess_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return "ply"
    if ext in (".xyz", ".txt", ".pts", ".asc"):
        return "xyz"
    raise ValueError(f"cannot infer cloud format from extension {ext!r}")


def read_cloud(path: str, format: Optional[str] = None) -> PointCloud:
    """Read a point cloud. ``format`` is ``xyz``, ``ply`` (ascii or binary) or inferred."""
    fmt = format or _guess_format(path)
    if fmt in ("xyz", "xyz-ascii"):
        pts = _read_xyz(path)
    elif fmt in ("ply", "ply-ascii", "ply-binary-little-endian"):
        pts = _read_ply(path)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    if len(pts) == 0:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(pts)


def _read_xyz(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.replace(",", " ").split()
            if len(parts) < 3:
                raise CloudParseError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise CloudParseError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, type) or (name, "list", count_t, item_t)


def _parse_ply_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise CloudParseError(f"{path}:1: missing 'ply' magic")
    fmt = None
    elements: list[_PlyElement] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise CloudParseError(f"{path}:{lineno}: header ended without end_header")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise CloudParseError(f"{path}:{lineno}: unsupported format line {raw!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise CloudParseError(f"{path}:{lineno}: bad element line")
            elements.append(_PlyElement(tok[1], int(tok[2])))
        elif tok[0] == "property":
            if not elements:
                raise CloudParseError(f"{path}:{lineno}: property before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise CloudParseError(f"{path}:{lineno}: bad list property")
                elements[-1].props.append((tok[4], "list", tok[2], tok[3]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise CloudParseError(f"{path}:{lineno}: bad property line")
                elements[-1].props.append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
        else:
            raise CloudParseError(f"{path}:{lineno}: unexpected header keyword {tok[0]!r}")
    if fmt is None:
        raise CloudParseError(f"{path}: missing format line")
    return fmt, elements, lineno


def _vertex_columns(el: _PlyElement, path: str) -> list[int]:
    names = [p[0] for p in el.props]
    try:
        return [names.index(k) for k in ("x", "y", "z")]
    except ValueError:
        raise CloudParseError(f"{path}: vertex element lacks x/y/z properties") from None


def _read_ply(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        if not any(e.name == "vertex" for e in elements):
            raise CloudParseError(f"{path}: no vertex element")
        if fmt == "ascii":
            return _read_ply_ascii(fh, elements, header_lines, path)
        return _read_ply_binary(fh, elements, path)


def _read_ply_ascii(fh, elements, lineno, path):
    lines = fh.read().decode("ascii", errors="replace").splitlines()
    pos = 0
    out = None
    for el in elements:
        if el.name == "vertex":
            cols = _vertex_columns(el, path)
            if any(len(p) > 2 for p in el.props):
                raise CloudParseError(f"{path}: list properties on vertices are not supported")
            if len(lines) - pos < el.count:
                raise CloudParseError(
                    f"{path}:{lineno + len(lines) + 1}: element vertex declares {el.count} "
                    f"records but only {len(lines) - pos} remain"
                )
            block = lines[pos:pos + el.count]
            out = np.empty((el.count, 3))
            for k, line in enumerate(block):
                parts = line.split()
                if len(parts) < len(el.props):
                    raise CloudParseError(
                        f"{path}:{lineno + pos + k + 1}: expected {len(el.props)} values"
                    )
                try:
                    out[k] = [float(parts[c]) for c in cols]
                except ValueError as exc:
                    raise CloudParseError(f"{path}:{lineno + pos + k + 1}: {exc}") from None
            pos += el.count
        else:
            pos += el.count
    return out


def _read_ply_binary(fh, elements, path):
    offset = fh.tell()
    out = None
    for el in elements:
        if any(len(p) > 2 for p in el.props):
            if el.name == "vertex":
                raise CloudParseError(f"{path}: list properties on vertices are not supported")
            # variable-size records: walk them
            for _ in range(el.count):
                for p in el.props:
                    if len(p) == 2:
                        size = struct.calcsize("<" + _PLY_TYPES[p[1]])
                        if len(fh.read(size)) != size:
                            raise CloudParseError(f"{path}: truncated {el.name} data at byte {offset}")
                        offset += size
                    else:
                        csize = struct.calcsize("<" + _PLY_TYPES[p[2]])
                        raw = fh.read(csize)
                        if len(raw) != csize:
                            raise CloudParseError(f"{path}: truncated {el.name} data at byte {offset}")
                        n = struct.unpack("<" + _PLY_TYPES[p[2]], raw)[0]
                        isize = n * struct.calcsize("<" + _PLY_TYPES[p[3]])
                        if len(fh.read(isize)) != isize:
                            raise CloudParseError(f"{path}: truncated {el.name} data at byte {offset}")
                        offset += csize + isize
            continue
        dtype = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in el.props])
        nbytes = dtype.itemsize * el.count
        raw = fh.read(nbytes)
        if len(raw) != nbytes:
            got = len(raw) // dtype.itemsize if dtype.itemsize else 0
            raise CloudParseError(
                f"{path}: byte {offset}: element {el.name} declares {el.count} records "
                f"but data holds only {got}"
            )
        if el.name == "vertex":
            _vertex_columns(el, path)
            rec = np.frombuffer(raw, dtype=dtype)
            out = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
        offset += nbytes
    return out


def write_cloud(cloud, path: str, format: Optional[str] = None) -> None:
    """Write a cloud as ``xyz`` (17 significant digits), ``ply-ascii`` or ``ply`` (binary LE doubles)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    fmt = format or _guess_format(path)
    if fmt in ("xyz", "xyz-ascii"):
        np.savetxt(path, pts, fmt="%.17g")
    elif fmt == "ply-ascii":
        with open(path, "w", encoding="ascii") as fh:
            fh.write(_ply_header("ascii", len(pts)))
            for p in pts:
                fh.write(" ".join(repr(float(t)) for t in p) + "\n")
    elif fmt in ("ply", "ply-binary-little-endian"):
        with open(path, "wb") as fh:
            fh.write(_ply_header("binary_little_endian", len(pts)).encode("ascii"))
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def _ply_header(fmt: str, n: int) -> str:
    return (
        f"ply\nformat {fmt} 1.0\ncomment written by cylevo\nelement vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    )


# -- fit results ---------------------------------------------------------------------------

def cylinder_to_dict(c: Cylinder) -> dict:
    return {"x": c.x, "y": c.y, "z": c.z, "theta": c.theta, "phi": c.phi, "l": c.l, "r": c.r}


def cylinder_from_dict(d: dict) -> Cylinder:
    return Cylinder(d["x"], d["y"], d["z"], d["theta"], d["phi"], d["l"], d["r"])


@dataclass(frozen=True)
class RetainedSolution:
    cylinder: Cylinder
    realized_fitness: float
    potential_fitness: float


@dataclass
class FitResult:
    """Outcome of a fit: the whole final population plus the acceptance threshold used."""

    alpha: float
    population: list[RetainedSolution]
    config: dict = field(default_factory=dict)
    generations: list[dict] = field(default_factory=list)

    @property
    def accepted(self) -> list[RetainedSolution]:
        return [s for s in self.population if s.realized_fitness >= self.alpha]

    @property
    def rejected(self) -> list[RetainedSolution]:
        return [s for s in self.population if s.realized_fitness < self.alpha]

    def rethreshold(self, alpha: float) -> "FitResult":
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        return FitResult(alpha, list(self.population), dict(self.config), list(self.generations))

    def to_dict(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "version": RESULT_VERSION,
            "alpha": self.alpha,
            "config": self.config,
            "accepted": [i for i, s in enumerate(self.population) if s.realized_fitness >= self.alpha],
            "population": [
                {
                    "cylinder": cylinder_to_dict(s.cylinder),
                    "realized_fitness": s.realized_fitness,
                    "potential_fitness": s.potential_fitness,
                }
                for s in self.population
            ],
            "generations": self.generations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != RESULT_SCHEMA:
            raise SchemaError(f"not a fit result (schema {d.get('schema')!r})")
        if d.get("version") != RESULT_VERSION:
            raise SchemaError(
                f"fit result version {d.get('version')!r} is not supported (expected {RESULT_VERSION})"
            )
        pop = [
            RetainedSolution(
                cylinder_from_dict(p["cylinder"]), p["realized_fitness"], p["potential_fitness"]
            )
            for p in d["population"]
        ]
        return cls(d["alpha"], pop, d.get("config", {}), d.get("generations", []))


def write_result(result: FitResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_result(path: str) -> FitResult:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return FitResult.from_dict(data)


# -- mesh export ---------------------------------------------------------------------------

def cylinder_mesh(c: Cylinder, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed triangulated cylinder: 2*segments ring vertices plus two cap centers."""
    if segments < 3:
        raise ValueError("segments must be >= 3")
    fr = CylinderFrame.for_cylinder(c)
    ang = 2.0 * math.pi * np.arange(segments) / segments
    ring = c.r * (np.cos(ang)[:, None] * fr.u + np.sin(ang)[:, None] * fr.v)
    bottom = fr.origin + ring
    top = fr.origin + c.l * fr.axis + ring
    verts = np.vstack([bottom, top, fr.origin, fr.origin + c.l * fr.axis])
    s = segments
    cb, ct = 2 * s, 2 * s + 1
    faces = []
    for k in range(s):
        k2 = (k + 1) % s
        faces.append((k, k2, s + k2))
        faces.append((k, s + k2, s + k))
        faces.append((cb, k2, k))
        faces.append((ct, s + k, s + k2))
    return verts, np.array(faces, dtype=np.int64)


def export_mesh(cylinders: Iterable[Cylinder], path: str, segments: int = 24) -> None:
    """Write cylinders as a Wavefront OBJ triangle mesh, one object group per cylinder."""
    if segments < 3:
        raise ValueError("segments must be >= 3")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# cylevo cylinder mesh\n")
        base = 1
        for n, c in enumerate(cylinders):
            verts, faces = cylinder_mesh(c, segments)
            fh.write(f"o cylinder_{n}\n")
            for v in verts:
                fh.write("v " + " ".join(repr(float(t)) for t in v) + "\n")
            for f in faces + base:
                fh.write(f"f {f[0]} {f[1]} {f[2]}\n")
            base += len(verts)


def read_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
