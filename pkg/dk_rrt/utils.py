"""
Shared helpers: YAML config loading with line-accurate errors, CSV output,
seed derivation and observation frame visualization.
"""
import logging
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import pandas as pd
import yaml
from PIL import Image, ImageDraw
from pydantic import BaseModel, ValidationError

from .config import CSV_FLOAT_FORMAT
from .errors import ConfigError

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def _locate_line(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """
    Walk a composed YAML node tree along a pydantic error location.

    Returns:
        1-based line of the deepest node reached, or None
    """
    if node is None:
        return None
    line = node.start_mark.line + 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = None
            for key_node, value_node in node.value:
                if key_node.value == str(key):
                    match = value_node
                    line = key_node.start_mark.line + 1
                    break
            if match is None:
                return line
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            if key >= len(node.value):
                return line
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def load_yaml_config(path: Union[str, Path], model_cls: Type[ModelT]) -> ModelT:
    """
    Load a YAML file and validate it against a pydantic model

    Args:
        path: YAML file path
        model_cls: pydantic model describing the schema

    Returns:
        Validated model instance
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(path, "config file not found")
    text = path.read_text()
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(path, f"unparseable YAML: {getattr(e, 'problem', e)}", line) from e
    if data is None:
        data = {}
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        line = _locate_line(root, first["loc"])
        field = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(path, f"{field}: {first['msg']}", line) from e


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def write_csv(rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]], path: Union[str, Path],
              columns: Optional[List[str]] = None) -> Path:
    """
    Write rows to CSV at fixed float precision

    Args:
        rows: DataFrame or iterable of dict rows
        path: output path, parent directories are created
        columns: optional column order (header is pinned by callers)

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        df = df.reindex(columns=columns)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def create_visualization(grid: np.ndarray, markers: Sequence[Tuple[int, int]] = (),
                         scale: int = 8) -> Image.Image:
    """
    Render an occupancy grid as an RGB image with optional cell markers

    Args:
        grid: 2-D array of cell values, roughly in [0, 1]
        markers: (row, col) cells outlined in red, e.g. the end-effector cell
        scale: pixels per cell

    Returns:
        PIL Image
    """
    pixels = (np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(pixels).convert("RGB")
    img = img.resize((grid.shape[1] * scale, grid.shape[0] * scale), Image.NEAREST)
    if markers:
        draw = ImageDraw.Draw(img)
        for row, col in markers:
            box = [col * scale, row * scale, (col + 1) * scale - 1, (row + 1) * scale - 1]
            draw.rectangle(box, outline="red", width=2)
    return img
