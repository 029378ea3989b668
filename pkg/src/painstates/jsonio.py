"""Canonical JSON output and run manifests."""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import __version__


def _scalar(x: Any) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        # 17 significant digits round-trip any double exactly
        text = format(x, ".17g")
        if "e" not in text and "." not in text:
            text += ".0"
        return text
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """Serialize with insertion-ordered keys and 17-significant-digit floats."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (Mapping, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _scalar(obj)


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(stage: str, inputs: Iterable, outputs: Iterable, config: Mapping, seed: int | None) -> dict:
    """Run manifest: input/output hashes, frozen config, seed and versions.

    Paths are recorded by file name only so that identical runs in different
    directories produce identical manifests.
    """
    import matplotlib
    import pandas
    import scipy

    return {
        "stage": stage,
        "seed": seed,
        "inputs": {Path(p).name: sha256_file(p) for p in sorted(inputs, key=lambda p: Path(p).name)},
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(outputs, key=lambda p: Path(p).name)},
        "config": dict(config),
        "versions": {
            "painstates": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }


def verify_manifest(path, search: Iterable = ()) -> list[str]:
    """Names of recorded inputs and outputs whose current hash no longer matches.

    Files are looked up by name next to the manifest, then in ``search``.
    """
    data = read_json(path)
    dirs = [Path(path).parent, *map(Path, search)]
    bad = []
    for section in ("inputs", "outputs"):
        for name, digest in data[section].items():
            found = next((d / name for d in dirs if (d / name).exists()), None)
            if found is None or sha256_file(found) != digest:
                bad.append(name)
    return bad


def env_default(name: str, fallback: str | None = None) -> str | None:
    return os.environ.get(name, fallback)
