"""Dataset file I/O.

Both server validation sets and client-local data use the same format: a
UTF-8 JSON array of {"features": [...], "label": int} objects.
"""

from __future__ import annotations

import json
from typing import Sequence

from .errors import ConfigError
from .model import LabeledExample


def save_examples(path, examples: Sequence[LabeledExample]) -> None:
    rows = [{"features": ex.features.tolist(), "label": ex.label} for ex in examples]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh)


def load_examples(path) -> list[LabeledExample]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            rows = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dataset file {path} is not valid JSON: {exc}")
    if not isinstance(rows, list) or not rows:
        raise ConfigError(f"dataset file {path} must be a non-empty JSON array")
    examples = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "features" not in row or "label" not in row:
            raise ConfigError(f"dataset file {path} row {i} lacks features/label")
        examples.append(LabeledExample(row["features"], row["label"]))
    return examples
