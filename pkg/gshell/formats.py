"""Readers and writers: grid JSON, OBJ, PLY / XYZ / CSV points, reports, .gsp tensor packs.

Every writer goes through an atomic temp-file rename. Floats in JSON and
text formats are written with repr(), which round-trips float64 exactly.
"""
import io
import json
import logging
import re
import struct
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from .errors import FormatError, UnsupportedVersionError
from .extract import ExtractedMesh
from .grid import TetGrid
from .tensorize import TENSOR_VERSION, TensorGrid
from .utils import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

GRID_VERSION = 1
GSP_MAGIC = b"GSP\0"
GSP_DTYPES = ("<f4", "<f8")

_FLOAT = {"type": "string", "pattern": r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$"}
_VEC3 = {"type": "array", "items": _FLOAT, "minItems": 3, "maxItems": 3}
_TET = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 4, "maxItems": 4}

GRID_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "resolution", "bbox", "deformation_scale", "canonical_positions", "offsets", "tets", "sdf", "msdf"],
    "properties": {
        "version": {"type": "integer"},
        "resolution": {"type": "integer", "minimum": 1},
        "bbox": {"type": "array", "items": _VEC3, "minItems": 2, "maxItems": 2},
        "deformation_scale": _FLOAT,
        "canonical_positions": {"type": "array", "items": _VEC3},
        "offsets": {"type": "array", "items": _VEC3},
        "tets": {"type": "array", "items": _TET},
        "sdf": {"type": "array", "items": _FLOAT},
        "msdf": {"type": "array", "items": _FLOAT},
    },
}


def _floats(values) -> list:
    return [repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel()]


def _rows(values) -> list:
    values = np.asarray(values, dtype=np.float64)
    return [[repr(float(v)) for v in row] for row in values]


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _load_json(path: Path):
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path=path, line=exc.lineno) from exc


# -------------------------
# GRID JSON
# -------------------------
def grid_to_document(grid: TetGrid) -> dict:
    return {
        "version": GRID_VERSION,
        "resolution": grid.resolution,
        "bbox": _rows(grid.bbox),
        "deformation_scale": repr(float(grid.deformation_scale)),
        "canonical_positions": _rows(grid.canonical_positions),
        "offsets": _rows(grid.offsets),
        "tets": grid.tets.tolist(),
        "sdf": _floats(grid.sdf),
        "msdf": _floats(grid.msdf),
    }


def grid_from_document(doc, path=None) -> TetGrid:
    if not isinstance(doc, dict):
        raise FormatError("grid document must be a JSON object", path=path)
    version = doc.get("version")
    if version != GRID_VERSION:
        raise UnsupportedVersionError(f"grid format version {version!r} is not supported (expected {GRID_VERSION})", path=path)
    try:
        jsonschema.validate(doc, GRID_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise FormatError(f"{exc.json_path}: {exc.message}", path=path) from exc

    def arr(key, shape):
        return np.array(doc[key], dtype=np.float64).reshape(shape)

    return TetGrid(
        canonical_positions=arr("canonical_positions", (-1, 3)),
        offsets=arr("offsets", (-1, 3)),
        deformation_scale=float(doc["deformation_scale"]),
        tets=np.array(doc["tets"], dtype=np.int64).reshape(-1, 4),
        sdf=arr("sdf", -1),
        msdf=arr("msdf", -1),
        resolution=doc["resolution"],
        bbox=arr("bbox", (2, 3)),
    )


def write_grid(grid: TetGrid, path) -> Path:
    return atomic_write_text(path, json.dumps(grid_to_document(grid), separators=(",", ":")))


def read_grid(path) -> TetGrid:
    path = Path(path)
    return grid_from_document(_load_json(path), path=path)


# -------------------------
# OBJ
# -------------------------
def write_obj(mesh, path) -> Path:
    vertices, faces = mesh.vertices, mesh.faces
    buf = io.StringIO()
    buf.write(f"# gshell mesh: {len(vertices)} vertices, {len(faces)} faces\n")
    for x, y, z in vertices.tolist():
        buf.write(f"v {x!r} {y!r} {z!r}\n")
    for a, b, c in (faces + 1).tolist():
        buf.write(f"f {a} {b} {c}\n")
    return atomic_write_text(path, buf.getvalue())


def read_obj(path) -> ExtractedMesh:
    """Vertices and faces of an OBJ file; polygons are fan-triangulated, other records ignored."""
    path = Path(path)
    vertices, faces, face_lines = [], [], []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split("#", 1)[0].split()
            if not tokens:
                continue
            if tokens[0] == "v":
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError as exc:
                    raise FormatError(f"bad vertex record: {line.strip()!r}", path=path, line=lineno) from exc
                if len(vertices[-1]) != 3:
                    raise FormatError("vertex record needs 3 coordinates", path=path, line=lineno)
            elif tokens[0] == "f":
                try:
                    ids = [int(t.split("/")[0]) for t in tokens[1:]]
                except ValueError as exc:
                    raise FormatError(f"bad face record: {line.strip()!r}", path=path, line=lineno) from exc
                if len(ids) < 3:
                    raise FormatError("face record needs at least 3 vertices", path=path, line=lineno)
                for k in range(1, len(ids) - 1):
                    faces.append([ids[0], ids[k], ids[k + 1]])
                    face_lines.append(lineno)
    vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    bad = np.flatnonzero(np.any((faces < 1) | (faces > len(vertices)), axis=1))
    if len(bad):
        raise FormatError(f"face references a missing vertex (1..{len(vertices)} available)", path=path, line=face_lines[bad[0]])
    return ExtractedMesh.from_arrays(vertices, faces - 1)


# -------------------------
# POINT CLOUDS
# -------------------------
def write_ply(points, path) -> Path:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = f"ply\nformat ascii 1.0\nelement vertex {len(points)}\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist())
    return atomic_write_text(path, header + body)


def _data_line(path: Path, row: int, skip: int, comment: str | None = None) -> int | None:
    """1-based file line of data row `row`, counting rows the way pandas does."""
    seen = -1
    with path.open("r", encoding="utf-8", errors="replace") as f:
        for number, text in enumerate(f, start=1):
            if number <= skip:
                continue
            stripped = text.strip()
            if not stripped or (comment and stripped.startswith(comment)):
                continue
            seen += 1
            if seen == row:
                return number
    return None


def _read_table(path: Path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, engine="c", float_precision="round_trip", **kwargs)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except pd.errors.ParserError as exc:
        found = re.search(r"line (\d+)", str(exc))
        raise FormatError(str(exc), path=path, line=int(found.group(1)) if found else None) from exc


def _xyz_columns(table: pd.DataFrame, columns, path: Path, skip: int, comment: str | None = None) -> np.ndarray:
    """The three `columns` as float64; a non-numeric or missing value is reported with its line."""
    for col in columns:
        values = table[col]
        if pd.api.types.is_numeric_dtype(values):
            continue
        coerced = pd.to_numeric(values, errors="coerce")
        bad = np.flatnonzero((coerced.isna() & values.notna()).to_numpy())
        if len(bad):
            row = int(bad[0])
            raise FormatError(f"not a number: {values.iloc[row]!r}", path=path, line=_data_line(path, row, skip, comment))
    points = table[list(columns)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(points).all(axis=1))
    if len(bad):
        row = int(bad[0])
        raise FormatError("point cloud contains non-finite or missing values", path=path, line=_data_line(path, row, skip, comment))
    return points


def read_ply(path) -> np.ndarray:
    """x, y, z of the vertex element of an ascii PLY file."""
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace") as f:
        header = []
        for line in f:
            header.append(line.strip())
            if line.strip() == "end_header":
                break
    if not header or header[0] != "ply":
        raise FormatError("missing 'ply' magic", path=path, line=1)
    if "end_header" not in header:
        raise FormatError("missing end_header", path=path)
    fmt = next((h for h in header if h.startswith("format")), "")
    if fmt.split()[1:2] != ["ascii"]:
        raise FormatError(f"only ascii PLY is supported, got {fmt!r}", path=path)

    count, skip, props, element = None, 0, [], None
    for h in header:
        parts = h.split()
        if parts[:1] == ["element"]:
            element = parts[1]
            if element == "vertex":
                count = int(parts[2])
            elif count is None:
                skip += int(parts[2])
        elif parts[:1] == ["property"] and element == "vertex":
            props.append(parts[-1])
    if count is None:
        raise FormatError("no vertex element", path=path)
    missing = [a for a in "xyz" if a not in props]
    if missing:
        raise FormatError(f"vertex element lacks {missing}", path=path)
    if skip:
        raise FormatError("vertex element must come first", path=path)
    if count == 0:
        return np.zeros((0, 3))
    table = _read_table(path, sep=r"\s+", header=None, skiprows=len(header), nrows=count)
    if len(table) != count or table.shape[1] < len(props):
        raise FormatError(f"expected {count} vertex rows with {len(props)} values, found {len(table)}", path=path)
    return _xyz_columns(table, [props.index(a) for a in "xyz"], path, skip=len(header))


def read_xyz(path) -> np.ndarray:
    path = Path(path)
    table = _read_table(path, sep=r"\s+", header=None, comment="#")
    if table.empty:
        return np.zeros((0, 3))
    if table.shape[1] < 3:
        raise FormatError("XYZ rows need 3 columns", path=path, line=_data_line(path, 0, 0, "#"))
    return _xyz_columns(table, [0, 1, 2], path, skip=0, comment="#")


def read_csv_points(path) -> np.ndarray:
    """x, y, z columns of a CSV file with a header row."""
    path = Path(path)
    table = _read_table(path)
    missing = [a for a in "xyz" if a not in table.columns]
    if missing:
        raise FormatError(f"CSV header lacks column(s) {missing}", path=path, line=1)
    return _xyz_columns(table, ["x", "y", "z"], path, skip=1)


def write_xyz(points, path) -> Path:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return atomic_write_text(path, "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist()))


def read_points(path) -> np.ndarray:
    """Point cloud by extension: .ply, .xyz / .txt, .csv (x, y, z columns) or .obj vertices."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        points = read_ply(path)
    elif suffix in (".xyz", ".txt"):
        points = read_xyz(path)
    elif suffix == ".csv":
        points = read_csv_points(path)
    elif suffix == ".obj":
        points = read_obj(path).vertices
    else:
        raise FormatError(f"unknown point cloud extension {suffix!r}", path=path)
    if not np.all(np.isfinite(points)):
        raise FormatError("point cloud contains non-finite values", path=path)
    return points


def write_points(points, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return write_ply(points, path)
    return write_xyz(points, path)


# -------------------------
# TABLES / REPORTS
# -------------------------
def write_csv(frame: pd.DataFrame, path) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False))


def write_report(report: dict, path) -> Path:
    return atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_report(path) -> dict:
    return _load_json(Path(path))


def boundary_document(mesh, loops) -> dict:
    """boundary.json content: 1-based loops and boundary edges."""
    return {
        "index_base": 1,
        "loops": [[int(v) + 1 for v in loop] for loop in loops],
        "edges": (np.asarray(mesh.boundary_edges, dtype=np.int64).reshape(-1, 2) + 1).tolist(),
    }


# -------------------------
# .gsp TENSOR PACK
# -------------------------
_GSP_ARRAYS = ("base", "base_mask", "alpha", "alpha_mask", "alpha_side")
_GSP_MASKS = ("base_mask", "alpha_mask", "alpha_side")


def write_gsp(t: TensorGrid, path, dtype: str = "<f4") -> Path:
    """magic, uint32 LE header length, JSON header, then each array's raw little-endian bytes."""
    if dtype not in GSP_DTYPES:
        raise FormatError(f"unsupported payload dtype {dtype!r}; expected one of {GSP_DTYPES}")
    arrays, offset = [], 0
    payload = []
    for name in _GSP_ARRAYS:
        value = np.asarray(getattr(t, name))
        value = value.astype("|u1" if name in _GSP_MASKS else dtype)
        data = np.ascontiguousarray(value).tobytes()
        arrays.append({"name": name, "dtype": value.dtype.str, "shape": list(value.shape), "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    header = {
        "version": TENSOR_VERSION,
        "dtype": dtype,
        "resolution": t.resolution,
        "alpha_factor": t.alpha_factor,
        "bbox": _rows(t.bbox),
        "deformation_scale": repr(float(t.deformation_scale)),
        "grid_scale": _floats(t.grid_scale),
        "arrays": arrays,
    }
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return atomic_write_bytes(path, GSP_MAGIC + struct.pack("<I", len(head)) + head + b"".join(payload))


def read_gsp(path) -> TensorGrid:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != GSP_MAGIC:
        raise FormatError("not a .gsp file (bad magic)", path=path, offset=0)
    if len(raw) < 8:
        raise FormatError("truncated header length", path=path, offset=4)
    (head_len,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad header: {exc}", path=path, offset=8) from exc
    if header.get("version") != TENSOR_VERSION:
        raise UnsupportedVersionError(f"tensor format version {header.get('version')!r} is not supported", path=path, offset=8)
    start = 8 + head_len
    arrays = {}
    for spec in header.get("arrays", []):
        lo = start + spec["offset"]
        hi = lo + spec["nbytes"]
        if hi > len(raw):
            raise FormatError(f"array {spec['name']} runs past the end of the file", path=path, offset=lo)
        value = np.frombuffer(raw[lo:hi], dtype=np.dtype(spec["dtype"]))
        try:
            value = value.reshape(spec["shape"])
        except ValueError as exc:
            raise FormatError(f"array {spec['name']}: {exc}", path=path, offset=lo) from exc
        arrays[spec["name"]] = value.astype(np.uint8 if spec["name"] in _GSP_MASKS else np.float64)
    missing = [n for n in _GSP_ARRAYS if n not in arrays]
    if missing:
        raise FormatError(f"missing arrays {missing}", path=path)
    return TensorGrid(
        resolution=header["resolution"],
        bbox=np.array(header["bbox"], dtype=np.float64),
        deformation_scale=float(header["deformation_scale"]),
        alpha_factor=header["alpha_factor"],
        grid_scale=np.array(header["grid_scale"], dtype=np.float64),
        **arrays,
    )
