"""Checkpoint directory format.

`params.llt1` holds consecutive LLT1 records; `manifest.json` lists section
and parameter names with shapes in file order, plus free-form metadata
(schedule constants, normalization, config echo).
"""

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .llt1 import append_llt1, read_llt1_stream


def save_checkpoint(ckpt_dir, sections: dict, meta: dict | None = None) -> None:
    """sections: {"diffusion": {...}, "diffusion_ema": {...}, "hf": {...}}."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"sections": {}, "meta": dict(meta or {})}
    with open(ckpt_dir / "params.llt1", "wb") as fh:
        for section, params in sections.items():
            entries = []
            for name in sorted(params):
                arr = np.asarray(params[name], dtype=np.float64)
                append_llt1(fh, arr)
                entries.append({"name": name, "shape": list(arr.shape)})
            manifest["sections"][section] = entries
    (ckpt_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2))


def load_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    params_path = ckpt_dir / "params.llt1"
    if not manifest_path.exists() or not params_path.exists():
        raise DataError(f"missing checkpoint in {ckpt_dir}")
    manifest = json.loads(manifest_path.read_text())
    sections = {}
    with open(params_path, "rb") as fh:
        for section, entries in manifest["sections"].items():
            params = {}
            for entry in entries:
                arr = read_llt1_stream(fh)
                if arr is None or list(arr.shape) != entry["shape"]:
                    raise DataError(
                        f"checkpoint {ckpt_dir}: bad record for "
                        f"{section}/{entry['name']}")
                params[entry["name"]] = arr
            sections[section] = params
    return sections, manifest.get("meta", {})
