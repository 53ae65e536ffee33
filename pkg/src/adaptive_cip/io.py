"""Output writers: legacy VTK meshes, CSV tables and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import platform
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mesh import TetMesh
from .wavefield import BoundaryObservation

VTK_TETRA = 10


def write_vtk(
    path,
    mesh: TetMesh,
    point_data: Mapping[str, np.ndarray] | None = None,
    cell_data: Mapping[str, np.ndarray] | None = None,
    title: str = "adaptive_cip mesh",
) -> Path:
    """Write an ASCII legacy ``.vtk`` unstructured grid of tetrahedra."""
    path = Path(path)
    nv, nt = mesh.n_vertices, mesh.n_tets
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines.extend(" ".join(repr(float(c)) for c in v) for v in mesh.vertices)
    lines.append(f"CELLS {nt} {5 * nt}")
    lines.extend("4 " + " ".join(str(int(i)) for i in t) for t in mesh.tets)
    lines.append(f"CELL_TYPES {nt}")
    lines.extend([str(VTK_TETRA)] * nt)

    def block(kind, n, data):
        if not data:
            return
        lines.append(f"{kind} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{kind.lower()} field {name!r} has shape {arr.shape}, expected ({n},)")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(x)) for x in arr)

    block("POINT_DATA", nv, point_data)
    block("CELL_DATA", nt, cell_data)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_vtk_counts(path) -> dict:
    """Point count, cell count and field names of a legacy VTK file (for checks)."""
    out = {"points": 0, "cells": 0, "fields": []}
    for line in Path(path).read_text().splitlines():
        head = line.split()
        if not head:
            continue
        if head[0] == "POINTS":
            out["points"] = int(head[1])
        elif head[0] == "CELLS":
            out["cells"] = int(head[1])
        elif head[0] == "SCALARS":
            out["fields"].append(head[1])
    return out


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_observation_csv(path, obs: BoundaryObservation) -> Path:
    """Long format: one row per (time, observation vertex)."""
    vid = obs.surface.vertex_ids
    rows = (
        (n, t, int(vid[i]), *obs.surface.points[i], *obs.values[n, i])
        for n, t in enumerate(obs.times)
        for i in range(len(vid))
    )
    return write_csv(path, ("step", "t", "vertex", "x", "y", "z", "E1", "E2", "E3"), rows)


def write_history_csv(path, history: Sequence[dict], fields: Sequence[str]) -> Path:
    return write_csv(path, fields, ([h[f] for f in fields] for h in history))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, entries: Mapping[str, object], files: Sequence[Path]) -> Path:
    """``key = value`` lines followed by a sha256 per written file."""
    import scipy

    info = dict(entries)
    info.setdefault("python", platform.python_version())
    info.setdefault("numpy", np.__version__)
    info.setdefault("scipy", scipy.__version__)
    lines = [f"{k} = {v}" for k, v in info.items()]
    for f in sorted(Path(f) for f in files):
        lines.append(f"file.{f.name} = {sha256_file(f)}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out
