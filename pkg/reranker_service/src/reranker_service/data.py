"""Loading usefulness labels from the engine's pairs file.

The engine exports one JSON object per line with at least "query" (the
retrieval key: table markdown followed by the question), "candidate" (the
condition text), and "label" (1 useful, 0 not). Extra keys are ignored so
the file format can grow without breaking this side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class LabeledPair:
    query: str
    candidate: str
    label: int


def load_labeled_pairs(path: str | Path) -> list[LabeledPair]:
    """Parse the pairs JSONL file, failing loudly on any malformed line."""
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: expected an object")
            query = obj.get("query")
            candidate = obj.get("candidate")
            label = obj.get("label")
            if not isinstance(query, str) or not isinstance(candidate, str):
                raise ValueError(f"{path}:{lineno}: query and candidate must be strings")
            if label not in (0, 1):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            pairs.append(LabeledPair(query=query, candidate=candidate, label=label))
    return pairs
