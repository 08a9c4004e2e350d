"""Checkpoint archive: a zip of ``.npy`` float32 arrays plus a JSON header.

Parameter names are the module state-dict keys with ``.`` replaced by
``/`` (``customer_encoder/lstm/weight_ih_l0``, ``latent/agent_prior/mean/0/weight``).
The header lives under ``__header__`` and carries the format version, the
model config, both vocabularies and any caller metadata.  Zip entries get a
fixed timestamp so identical parameters give byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .corpus import AGENT, CUSTOMER, SPECIALS, Vocabulary
from .model import DialogueSummarizer, ModelConfig

FORMAT_VERSION = 1
HEADER_KEY = "__header__"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, array, allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, model: DialogueSummarizer, metadata: dict | None = None, extra: dict | None = None) -> Path:
    """Write ``model`` (and optional ``extra`` name->tensor params) to ``path``."""
    path = Path(path)
    header = {
        "format": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "vocab": {r: model.vocabs[r].itos[len(SPECIALS):] for r in (CUSTOMER, AGENT)},
        "metadata": metadata or {},
    }
    arrays = {k.replace(".", "/"): v for k, v in model.state_dict().items()}
    for k, v in (extra or {}).items():
        arrays[k] = v
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(HEADER_KEY + ".npy", date_time=_EPOCH)
        raw = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        zf.writestr(info, _npy_bytes(raw))
        for name in sorted(arrays):
            tensor = arrays[name]
            data = tensor.detach().cpu().to(torch.float32).numpy() if torch.is_tensor(tensor) else np.asarray(tensor, np.float32)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), _npy_bytes(data))
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if HEADER_KEY not in arrays:
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(arrays.pop(HEADER_KEY).tobytes().decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    return header, arrays


def load_checkpoint(path) -> tuple[DialogueSummarizer, dict, dict[str, torch.Tensor]]:
    """Rebuild the model; returns (model, header, extra params not in the model)."""
    header, arrays = read_checkpoint(path)
    config = ModelConfig(**header["model"])
    vocabs = {r: Vocabulary(r, header["vocab"][r]) for r in (CUSTOMER, AGENT)}
    model = DialogueSummarizer(config, vocabs[CUSTOMER], vocabs[AGENT])
    state = model.state_dict()
    loaded = {}
    for key in state:
        name = key.replace(".", "/")
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        array = arrays.pop(name)
        if tuple(array.shape) != tuple(state[key].shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        loaded[key] = torch.from_numpy(array.copy())
    model.load_state_dict(loaded)
    model.eval()
    return model, header, {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
