"""Model checkpoints: named parameter arrays plus a JSON metadata entry in one .npz."""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.config import ModelConfig, RunConfig
from core.errors import DataError, VocabMismatchError
from core.network import SfktModel
from core.total_term import CountStats

CHECKPOINT_FORMAT = "sfkt-checkpoint/1"
META_KEY = "__meta__"


def save_checkpoint(
    path: Path,
    model: SfktModel,
    config: RunConfig,
    vocab_fingerprint: str,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write parameters and metadata (config, vocab hash, sizes, count stats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "vocab_fingerprint": vocab_fingerprint,
        "sizes": model.sizes,
        "stats": model.stats.to_dict(),
        **(extra or {}),
    }
    arrays = model.state_dict()
    arrays[META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def read_metadata(path: Path) -> Dict[str, Any]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if META_KEY not in archive.files:
            raise DataError(f"{path} is not a model checkpoint (no metadata)")
        meta = json.loads(str(archive[META_KEY]))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta


def load_checkpoint(path: Path, expected_vocab: Optional[str] = None) -> Tuple[SfktModel, Dict[str, Any]]:
    """
    Rebuild a model from a checkpoint.

    Args:
        path: checkpoint file
        expected_vocab: vocabulary fingerprint of the dataset it will run on

    Raises:
        VocabMismatchError: the checkpoint was trained on a different vocabulary
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = read_metadata(path)
    if expected_vocab is not None and meta["vocab_fingerprint"] != expected_vocab:
        raise VocabMismatchError(
            f"checkpoint vocabulary {meta['vocab_fingerprint'][:12]} does not match dataset {expected_vocab[:12]}"
        )

    config = RunConfig.from_dict(meta["config"])
    model = build_model(config.train.model, meta["sizes"], CountStats.from_dict(meta["stats"]))
    with np.load(path, allow_pickle=False) as archive:
        model.load_state_dict({name: archive[name] for name in archive.files if name != META_KEY})
    return model, meta


def build_model(config: ModelConfig, sizes: Dict[str, int], stats: Optional[CountStats] = None) -> SfktModel:
    return SfktModel(config, sizes["students"], sizes["questions"], sizes["concepts"], stats=stats)
