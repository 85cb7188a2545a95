"""
Checkpoint saving and loading for trained encoder / operator pairs.
A checkpoint is one container file holding the encoder weights, the
composite dictionary, the fitted operator, the training config and the seed.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .errors import InvalidInputError
from .koopman.core import LiftedOperator
from .koopman.encoder import MlpEncoder
from .koopman.observables import Dictionary, dictionary_from_record, dictionary_to_record
from .koopman.serialization import load_container, save_container
from .training.deep_training import TrainingConfig

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
_OPERATOR_META = ("dict_id", "dt", "residual", "rank_deficient", "rank", "version")


@dataclass
class Checkpoint:
    encoder: MlpEncoder
    operator: LiftedOperator
    dictionary: Dictionary
    config: Optional[TrainingConfig]
    seed: int


def _split(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def save_checkpoint(path: Union[str, Path], encoder: MlpEncoder, operator: LiftedOperator,
                    dictionary: Dictionary, config: Optional[TrainingConfig] = None,
                    seed: int = 0) -> Path:
    """Write encoder, operator, dictionary, config and seed to one container."""
    if operator.dict_id != dictionary.dict_id:
        raise InvalidInputError("operator was fitted with a different dictionary")
    dict_meta, dict_arrays = dictionary_to_record(dictionary)
    arrays: Dict[str, Any] = {f"dict.{k}": v for k, v in dict_arrays.items()}
    for i, (W, b) in enumerate(encoder.params()):
        arrays[f"enc.W{i}"] = W
        arrays[f"enc.b{i}"] = b
    arrays.update({"op.Gamma": operator.Gamma, "op.Delta": operator.Delta, "op.Pi": operator.Pi})
    meta = {
        "seed": int(seed),
        "config": None if config is None else config.model_dump(mode="json"),
        "encoder": {"seed": int(encoder.cfg.get("seed", 0))},
        "dictionary": dict_meta,
        "operator": {k: getattr(operator, k) for k in _OPERATOR_META},
    }
    save_container(path, CHECKPOINT_KIND, meta, arrays)
    logger.info(f"--> Saved checkpoint (operator v{operator.version}) to {path}")
    return Path(path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint."""
    meta, arrays = load_container(path, CHECKPOINT_KIND)
    enc_arrays = _split(arrays, "enc.")
    n_layers = len([k for k in enc_arrays if k.startswith("W")])
    if n_layers == 0:
        raise InvalidInputError(f"{path}: checkpoint holds no encoder layers")
    params = [(enc_arrays[f"W{i}"], enc_arrays[f"b{i}"]) for i in range(n_layers)]
    encoder = MlpEncoder.from_params(params, seed=meta["encoder"]["seed"])

    dictionary = dictionary_from_record(meta["dictionary"], _split(arrays, "dict."))
    if dictionary.dict_id != meta["dictionary"].get("dict_id"):
        raise InvalidInputError(f"{path}: dictionary id mismatch after load")
    op_arrays = _split(arrays, "op.")
    operator = LiftedOperator(Gamma=op_arrays["Gamma"], Delta=op_arrays["Delta"], Pi=op_arrays["Pi"],
                              **meta["operator"])
    config = None if meta["config"] is None else TrainingConfig(**meta["config"])
    logger.info(f"--> Loaded checkpoint {path} (operator v{operator.version})")
    return Checkpoint(encoder=encoder, operator=operator, dictionary=dictionary, config=config,
                      seed=meta["seed"])
