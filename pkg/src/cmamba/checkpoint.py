"""Checkpoint archive: one ``.npz`` file holding the model config and every parameter.

Entries:

* ``__format__``: uint32 format version
* ``__config__``: UTF-8 JSON of the :class:`~cmamba.config.ModelConfig`
* ``__train__``: optional UTF-8 JSON of the training config
* one array per ``state_dict`` entry, stored under its dotted name
"""
import io
import json
import zipfile
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from .config import ModelConfig
from .model import CMamba

__all__ = ["FORMAT_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1
_META = ("__format__", "__config__", "__train__")


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path, model: CMamba, train_config: Optional[dict] = None):
    arrays = {
        "__format__": np.array(FORMAT_VERSION, dtype=np.uint32),
        "__config__": _text(json.dumps(model.config.to_dict(), sort_keys=True)),
    }
    if train_config is not None:
        arrays["__train__"] = _text(json.dumps(train_config, sort_keys=True))
    for name, tensor in model.state_dict().items():
        if name in _META:
            raise CheckpointError(f"parameter name {name!r} collides with metadata")
        arrays[name] = tensor.detach().cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None) -> Tuple[CMamba, Optional[dict]]:
    """Rebuild the model stored at ``path``; returns ``(model, train_config_dict)``.

    With ``expected_config`` the stored architecture must match it exactly.
    """
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if "__format__" not in arrays or "__config__" not in arrays:
        raise CheckpointError(f"{path}: missing checkpoint metadata")
    version = int(arrays.pop("__format__"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {version}")
    try:
        config = ModelConfig.from_dict(json.loads(arrays.pop("__config__").tobytes().decode("utf-8")))
        train_cfg = arrays.pop("__train__", None)
        train_cfg = None if train_cfg is None else json.loads(train_cfg.tobytes().decode("utf-8"))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad embedded config ({exc})") from exc
    if expected_config is not None and expected_config.config_id != config.config_id:
        raise CheckpointError(f"{path}: checkpoint architecture differs from the requested config")

    model = CMamba(config)
    expected = model.state_dict()
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter mismatch (missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})")
    state = {}
    for name, ref in expected.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, train_cfg
