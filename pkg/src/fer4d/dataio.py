"""Text formats for mesh frames, landmark files and dataset manifests.

Mesh frame: ``v x y z [r g b]`` lines, then ``f i j k`` lines (0-based).
Landmarks: one ``x y z`` triple per line.
Manifest::

    # comments are allowed
    root .
    schema total_count 83
    schema border 68 69 ...
    schema eyebrow 0 1 ...
    schema nose_tip 41
    sample S001 happiness
    frame S001_happiness/f000.mesh S001_happiness/f000.lmk
    ...

``root`` is resolved relative to the manifest's directory; frame paths are
relative to ``root``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from fer4d.errors import MissingFile, ParseError, SchemaMismatch
from fer4d.mesh import EXPRESSIONS, Dataset, Frame, LandmarkSchema, Mesh, MeshSequence


def _column(line: str, token: str) -> int:
    return line.find(token) + 1


def _parse_numbers(path, lines, kind, convert):
    """Parse the numeric fields of a list of (lineno, line) records, reporting the first bad token."""
    out = []
    for lineno, line in lines:
        toks = line.split()
        row = []
        for tok in toks[1:]:
            try:
                row.append(convert(tok))
            except ValueError:
                raise ParseError(f"bad {kind} value {tok!r}", path, lineno, _column(line, tok)) from None
        out.append(row)
    return out


def parse_mesh(text: str, path="<mesh>") -> Mesh:
    vlines, flines = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        head = s.split(None, 1)[0]
        if head == "v":
            vlines.append((lineno, line))
        elif head == "f":
            flines.append((lineno, line))
        else:
            raise ParseError(f"unknown record {head!r}", path, lineno, _column(line, head))
    verts = _parse_numbers(path, vlines, "vertex", float)
    widths = {len(r) for r in verts}
    for (lineno, line), row in zip(vlines, verts):
        if len(row) not in (3, 6):
            raise ParseError(f"vertex needs 3 or 6 values, got {len(row)}", path, lineno, 1)
    if len(widths) > 1:
        lineno = vlines[[len(r) for r in verts].index(min(widths))][0]
        raise ParseError("vertices mix colored and uncolored records", path, lineno, 1)
    if len(verts) < 3:
        raise ParseError(f"mesh has {len(verts)} vertices, need at least 3", path)
    arr = np.array(verts, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        lineno = vlines[int(np.argwhere(~np.isfinite(arr))[0][0])][0]
        raise ParseError("non-finite vertex value", path, lineno, 1)
    faces = _parse_numbers(path, flines, "face index", int)
    m = len(arr)
    for (lineno, line), row in zip(flines, faces):
        if len(row) != 3:
            raise ParseError(f"face needs 3 indices, got {len(row)}", path, lineno, 1)
        for tok, idx in zip(line.split()[1:], row):
            if not 0 <= idx < m:
                raise ParseError(
                    f"face index {idx} out of range [0, {m})", path, lineno, _column(line, tok)
                )
    colors = arr[:, 3:6] if arr.shape[1] == 6 else None
    if colors is not None and not np.all((colors >= 0) & (colors <= 1)):
        raise ParseError("vertex colors must lie in [0, 1]", path)
    return Mesh(arr[:, :3], np.array(faces, dtype=np.int64).reshape(-1, 3), colors)


def format_mesh(mesh: Mesh) -> str:
    lines = []
    if mesh.colors is None:
        for x, y, z in mesh.vertices.tolist():
            lines.append(f"v {x!r} {y!r} {z!r}")
    else:
        for (x, y, z), (r, g, b) in zip(mesh.vertices.tolist(), mesh.colors.tolist()):
            lines.append(f"v {x!r} {y!r} {z!r} {r!r} {g!r} {b!r}")
    for i, j, k in mesh.faces.tolist():
        lines.append(f"f {i} {j} {k}")
    return "\n".join(lines) + "\n"


def parse_landmarks(text: str, path="<landmarks>", schema: LandmarkSchema | None = None) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        toks = s.split()
        if len(toks) != 3:
            raise ParseError(f"landmark needs 3 values, got {len(toks)}", path, lineno, 1)
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            bad = next(t for t in toks if not _is_float(t))
            raise ParseError(f"bad landmark value {bad!r}", path, lineno, _column(line, bad)) from None
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if schema is not None and len(pts) != schema.total_count:
        raise SchemaMismatch(f"{path}: has {len(pts)} landmarks, schema expects {schema.total_count}")
    return pts


def _is_float(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def format_landmarks(points: np.ndarray) -> str:
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(points).tolist())


def read_mesh(path) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"mesh file not found: {path}")
    return parse_mesh(path.read_text(), str(path))


def read_landmarks(path, schema=None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"landmark file not found: {path}")
    return parse_landmarks(path.read_text(), str(path), schema)


def parse_manifest(text: str, path="<manifest>"):
    """Return (root, schema, records) where records are (subject, expression, [(mesh, lmk)])."""
    root = "."
    schema_fields = {}
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        toks = s.split()
        head = toks[0]
        if head == "root":
            if len(toks) != 2:
                raise ParseError("root takes one path", path, lineno, 1)
            root = toks[1]
        elif head == "schema":
            if len(toks) < 3:
                raise ParseError("schema needs a field and values", path, lineno, 1)
            field = toks[1]
            if field not in ("total_count", "border", "eyebrow", "nose_tip"):
                raise ParseError(f"unknown schema field {field!r}", path, lineno, _column(line, field))
            try:
                schema_fields[field] = [int(t) for t in toks[2:]]
            except ValueError:
                raise ParseError("schema values must be integers", path, lineno, _column(line, toks[2])) from None
        elif head == "sample":
            if len(toks) != 3:
                raise ParseError("sample needs a subject id and an expression", path, lineno, 1)
            if toks[2] not in EXPRESSIONS:
                raise ParseError(f"unknown expression {toks[2]!r}", path, lineno, _column(line, toks[2]))
            records.append((toks[1], toks[2], []))
        elif head == "frame":
            if not records:
                raise ParseError("frame before any sample", path, lineno, 1)
            if len(toks) != 3:
                raise ParseError("frame needs a mesh path and a landmark path", path, lineno, 1)
            records[-1][2].append((toks[1], toks[2]))
        else:
            raise ParseError(f"unknown manifest record {head!r}", path, lineno, 1)
    missing = [f for f in ("total_count", "border", "eyebrow", "nose_tip") if f not in schema_fields]
    if missing:
        raise ParseError(f"manifest lacks schema fields {missing}", path)
    try:
        schema = LandmarkSchema(
            total_count=schema_fields["total_count"][0],
            border_indices=tuple(schema_fields["border"]),
            eyebrow_indices=tuple(schema_fields["eyebrow"]),
            nose_tip_index=schema_fields["nose_tip"][0],
        )
    except SchemaMismatch as exc:
        raise SchemaMismatch(f"{path}: {exc}") from None
    return root, schema, records


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    root, schema, records = parse_manifest(manifest_path.read_text(), str(manifest_path))
    base = (manifest_path.parent / root).resolve()
    samples = []
    for subject, expression, frames in records:
        if not frames:
            raise ParseError(f"sample {subject} {expression} has no frames", str(manifest_path))
        seq_frames = []
        for mesh_rel, lmk_rel in frames:
            mesh = read_mesh(base / mesh_rel)
            lmk = read_landmarks(base / lmk_rel, schema)
            seq_frames.append(Frame(mesh, lmk))
        samples.append(MeshSequence(subject, expression, seq_frames))
    return Dataset(samples, schema)


def format_manifest(schema: LandmarkSchema, entries) -> str:
    """Manifest text for ``entries`` of (subject, expression, [(mesh, landmarks)])."""
    sch = schema
    lines = [
        "# fer4d dataset manifest",
        "root .",
        f"schema total_count {sch.total_count}",
        "schema border " + " ".join(map(str, sch.border_indices)),
        "schema eyebrow " + " ".join(map(str, sch.eyebrow_indices)),
        f"schema nose_tip {sch.nose_tip_index}",
    ]
    for subject, expression, paths in entries:
        lines.append(f"sample {subject} {expression}")
        lines.extend(f"frame {m} {l}" for m, l in paths)
    return "\n".join(lines) + "\n"


def write_sequence(seq: MeshSequence, directory) -> list[tuple[str, str]]:
    """Write one sequence's frames under ``directory/<name>/``; return relative paths."""
    directory = Path(directory)
    (directory / seq.name).mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(seq.frames):
        mesh_rel = f"{seq.name}/f{t:03d}.mesh"
        lmk_rel = f"{seq.name}/f{t:03d}.lmk"
        (directory / mesh_rel).write_text(format_mesh(frame.mesh))
        (directory / lmk_rel).write_text(format_landmarks(frame.landmarks))
        paths.append((mesh_rel, lmk_rel))
    return paths


def write_dataset(dataset: Dataset, directory) -> Path:
    """Write every frame file plus ``manifest.txt``; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [write_sequence(seq, directory) for seq in dataset.samples]
    manifest = directory / "manifest.txt"
    entries = [(seq.subject_id, seq.expression, p) for seq, p in zip(dataset.samples, paths)]
    manifest.write_text(format_manifest(dataset.schema, entries))
    return manifest
