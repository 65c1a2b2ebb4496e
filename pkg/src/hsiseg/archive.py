"""Deterministic zip archives holding JSON metadata plus raw array payloads.

Model checkpoints and baseline models share this container: a ``meta.json``
entry, a ``manifest.json`` listing (name, shape, dtype, file) per array, and
one little-endian float64 payload per array under ``tensors/``.  Entry order
and timestamps are pinned so identical contents give byte-identical files.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def save_archive(path: str | Path, meta: dict,
                 arrays: list[tuple[str, np.ndarray]]) -> None:
    manifest = [
        {"name": name, "shape": list(np.asarray(a).shape), "dtype": "<f8",
         "file": f"tensors/{name}.bin"}
        for name, a in arrays
    ]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        def put(name: str, payload: bytes):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)

        put("meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        put("manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode())
        for name, a in arrays:
            put(f"tensors/{name}.bin", np.asarray(a, dtype=np.float64).astype("<f8").tobytes())


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            meta = json.loads(zf.read("meta.json"))
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {}
            for entry in manifest:
                raw = zf.read(entry["file"])
                arrays[entry["name"]] = np.frombuffer(
                    raw, dtype=entry["dtype"]).reshape(entry["shape"]).astype(np.float64)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} is not a readable model archive: {exc}") from exc
    return meta, arrays
