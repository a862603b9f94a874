"""
Run manifest for MPVIC Lab.
Config hashing, package versions and the atomic manifest write.
"""

import hashlib
import json
import os
import platform
import tempfile
from dataclasses import asdict
from datetime import datetime, timezone
from typing import Any, Dict, List

import numpy as np
import pandas as pd
import torch
import yaml

from src import __version__
from src.data.schema import RunManifest

MANIFEST_NAME = "manifest.json"


def _canonical(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(raw: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form (sorted keys, compact separators)."""
    canon = json.dumps(_canonical(raw), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canon.encode("utf-8")).hexdigest()


def package_versions() -> Dict[str, str]:
    return {
        "mpvic_lab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "torch": torch.__version__,
        "pyyaml": yaml.__version__,
    }


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(manifest: RunManifest, output_dir: str) -> str:
    """Write manifest.json atomically (temp file in the same directory, then rename)."""
    os.makedirs(output_dir, exist_ok=True)
    missing = [p for p in manifest.outputs if not os.path.exists(os.path.join(output_dir, p))]
    if missing:
        raise FileNotFoundError(f"manifest references missing outputs: {missing}")
    path = os.path.join(output_dir, MANIFEST_NAME)
    fd, tmp_path = tempfile.mkstemp(prefix=".manifest-", suffix=".json", dir=output_dir)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(asdict(manifest), f, indent=2, sort_keys=True)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def load_manifest(path: str) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest(**json.load(f))


def relative_outputs(paths: List[str], output_dir: str) -> List[str]:
    return sorted(os.path.relpath(p, output_dir) for p in paths)
