"""Core table model: canonical instances, markdown rendering, normalization.

The markdown renderer reproduces the pipe layout of a pandas dataframe print:

* a leading index column (header empty, values 0..n-1) rendered right-aligned
* a column whose cells all parse as integers is rendered as integers,
  right-aligned; a column whose cells all parse as floats is rendered with
  the "g" format, decimal-aligned then right-aligned; anything else is kept
  verbatim and left-aligned
* content width of a column is max(header length + 2, widest rendered cell)
* each cell occupies " <content> " between pipes; the alignment row uses
  "---:" for numeric columns and ":---" for the rest, at width + 2

Cells are stored as raw strings and never auto-parsed; parsing above is a
rendering concern only. Embedded newlines in cells are replaced by a single
space at render time because the pipe grid is one line per row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .errors import MalformedRecord, UnknownFormat, UnknownTokenizer

log = logging.getLogger(__name__)


class TaskKind(str, Enum):
    QA = "qa"
    FACT = "fact"


class LengthBucket(str, Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"


SHORT_LIMIT = 2000
MEDIUM_LIMIT = 4000


@dataclass
class Table:
    title: str
    columns: list[str]
    rows: list[list[str]]

    def __post_init__(self) -> None:
        if not self.columns:
            raise MalformedRecord("table has no columns")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise MalformedRecord(
                    f"row {i} has {len(row)} cells, expected {width}"
                )
            for cell in row:
                if not isinstance(cell, str):
                    raise MalformedRecord(
                        f"row {i} contains a non-string cell: {cell!r}"
                    )


@dataclass
class Instance:
    id: str
    table: Table
    query: str
    answer: str
    task: TaskKind

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "title": self.table.title,
            "columns": list(self.table.columns),
            "rows": [list(r) for r in self.table.rows],
            "query": self.query,
            "answer": self.answer,
            "task": self.task.value,
        }


def _coerce_cell(value: object) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, (int, float)):
        return str(value)
    raise MalformedRecord(f"cell has unsupported type {type(value).__name__}")


def instance_from_json_obj(obj: dict) -> Instance:
    if not isinstance(obj, dict):
        raise MalformedRecord("instance record is not an object")
    for key in ("id", "columns", "rows", "query", "answer", "task"):
        if key not in obj:
            raise MalformedRecord(f"instance record is missing {key!r}")
    instance_id = obj["id"]
    if not isinstance(instance_id, str) or not instance_id:
        raise MalformedRecord("instance id must be a non-empty string")
    raw_task = obj["task"]
    try:
        task = TaskKind(raw_task)
    except ValueError:
        raise MalformedRecord(f"unknown task kind {raw_task!r}") from None
    columns = obj["columns"]
    if not isinstance(columns, list) or not all(isinstance(c, str) for c in columns):
        raise MalformedRecord("columns must be a list of strings")
    raw_rows = obj["rows"]
    if not isinstance(raw_rows, list):
        raise MalformedRecord("rows must be a list")
    rows = []
    for row in raw_rows:
        if not isinstance(row, list):
            raise MalformedRecord("each row must be a list")
        rows.append([_coerce_cell(c) for c in row])
    answer = obj["answer"]
    if isinstance(answer, bool):
        answer = "true" if answer else "false"
    if not isinstance(answer, str):
        raise MalformedRecord("answer must be a string or boolean")
    if task is TaskKind.FACT:
        lowered = answer.strip().lower()
        if lowered not in ("true", "false"):
            raise MalformedRecord(
                f"fact instances need a true/false answer, got {answer!r}"
            )
        answer = lowered
    query = obj["query"]
    if not isinstance(query, str) or not query.strip():
        raise MalformedRecord("query must be a non-empty string")
    table = Table(
        title=str(obj.get("title", "")), columns=list(columns), rows=rows
    )
    return Instance(id=instance_id, table=table, query=query, answer=answer, task=task)


def load_instances(path: str | Path, on_malformed: str = "abort") -> list[Instance]:
    """Read a canonical JSONL dataset.

    on_malformed: "abort" raises on the first bad record, "skip" drops bad
    records (including duplicate ids) and keeps going.
    """
    if on_malformed not in ("abort", "skip"):
        raise ValueError(f"on_malformed must be abort or skip, got {on_malformed!r}")
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                instance = instance_from_json_obj(obj)
                if instance.id in seen:
                    raise MalformedRecord(f"duplicate instance id {instance.id!r}")
            except (json.JSONDecodeError, MalformedRecord) as exc:
                if on_malformed == "abort":
                    raise MalformedRecord(f"line {lineno}: {exc}") from exc
                continue
            seen.add(instance.id)
            instances.append(instance)
    return instances


def dump_instances(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json_obj(), ensure_ascii=False) + "\n")


def dataset_fingerprint(instances: Iterable[Instance]) -> str:
    digest = hashlib.sha256()
    for inst in instances:
        digest.update(inst.id.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# dataset format adapters

DATASET_FORMATS = ("canonical-jsonl", "wikitq-tsv", "tabfact-json")


def _resolve_sibling(base: Path, relative: str) -> Path:
    # dataset releases keep table files relative to either the data file's
    # directory or its parent; try both
    for root in (base.parent, base.parent.parent):
        candidate = root / relative
        if candidate.exists():
            return candidate
    raise MalformedRecord(f"referenced table file {relative!r} not found")


def _ingest_wikitq(path: Path, on_malformed: str) -> list[Instance]:
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, fields in enumerate(reader, start=1):
            if not fields:
                continue
            if lineno == 1 and fields[0] == "id":
                continue
            try:
                if len(fields) != 4:
                    raise MalformedRecord(
                        f"expected 4 tab-separated fields, got {len(fields)}"
                    )
                rid, utterance, context, target = fields
                if rid in seen:
                    raise MalformedRecord(f"duplicate instance id {rid!r}")
                table_path = _resolve_sibling(path, context)
                with open(table_path, "r", encoding="utf-8", newline="") as tfh:
                    grid = list(csv.reader(tfh))
                if not grid:
                    raise MalformedRecord(f"table file {context!r} is empty")
                table = Table(title="", columns=grid[0], rows=grid[1:])
                instance = Instance(
                    id=rid,
                    table=table,
                    query=utterance,
                    answer=", ".join(target.split("|")),
                    task=TaskKind.QA,
                )
            except MalformedRecord as exc:
                if on_malformed == "abort":
                    raise MalformedRecord(f"line {lineno}: {exc}") from exc
                log.warning("skipping %s line %d: %s", path.name, lineno, exc)
                continue
            seen.add(rid)
            instances.append(instance)
    return instances


def _ingest_tabfact(path: Path, on_malformed: str) -> list[Instance]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"{path.name}: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedRecord(f"{path.name}: expected an object keyed by table id")
    instances: list[Instance] = []
    for table_id, entry in payload.items():
        try:
            if not (isinstance(entry, list) and len(entry) >= 3):
                raise MalformedRecord("entry must be [statements, labels, caption]")
            statements, labels, caption = entry[0], entry[1], entry[2]
            if len(statements) != len(labels):
                raise MalformedRecord("statements and labels differ in length")
            table_path = _resolve_sibling(path, f"all_csv/{table_id}")
            lines = table_path.read_text(encoding="utf-8").splitlines()
            if not lines:
                raise MalformedRecord(f"table file {table_id!r} is empty")
            table = Table(
                title=str(caption),
                columns=lines[0].split("#"),
                rows=[line.split("#") for line in lines[1:]],
            )
        except MalformedRecord as exc:
            if on_malformed == "abort":
                raise MalformedRecord(f"table {table_id}: {exc}") from exc
            log.warning("skipping %s table %s: %s", path.name, table_id, exc)
            continue
        for i, (statement, label) in enumerate(zip(statements, labels)):
            instances.append(
                Instance(
                    id=f"{table_id}::{i}",
                    table=table,
                    query=str(statement),
                    answer="true" if label in (1, "1", True) else "false",
                    task=TaskKind.FACT,
                )
            )
    return instances


def ingest_dataset(
    path: str | Path,
    fmt: str = "canonical-jsonl",
    split: str = "",
    on_malformed: str = "skip",
) -> list[Instance]:
    """Load instances from one of the supported dataset layouts.

    wikitq-tsv expects the official tab-separated question files, with the
    referenced table CSVs reachable relative to the file or its parent
    directory; answers with multiple targets are joined with ", ". tabfact-json
    expects the collected statement files with tables under a sibling all_csv/
    directory. split is a provenance label used only in error messages.
    """
    if on_malformed not in ("abort", "skip"):
        raise ValueError(f"on_malformed must be abort or skip, got {on_malformed!r}")
    where = f"{split}: " if split else ""
    name = fmt.lower()
    try:
        if name == "canonical-jsonl":
            return load_instances(path, on_malformed)
        if name == "wikitq-tsv":
            return _ingest_wikitq(Path(path), on_malformed)
        if name == "tabfact-json":
            return _ingest_tabfact(Path(path), on_malformed)
    except MalformedRecord as exc:
        raise MalformedRecord(f"{where}{exc}") from exc
    raise UnknownFormat(
        f"unsupported dataset format {fmt!r}; expected one of {DATASET_FORMATS}"
    )


# ---------------------------------------------------------------------------
# markdown rendering


def _is_int(cell: str) -> bool:
    try:
        int(cell)
    except (ValueError, TypeError):
        return False
    return True


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except (ValueError, TypeError):
        return False
    return True


def _column_kind(cells: list[str]) -> str:
    if not cells:
        return "str"
    if all(_is_int(c) for c in cells):
        return "int"
    if all(_is_number(c) for c in cells):
        return "float"
    return "str"


def _format_float(cell: str) -> str:
    return format(float(cell), "g")


def _after_point(rendered: str) -> int:
    if "." in rendered:
        return len(rendered) - rendered.rfind(".") - 1
    return -1


def _decimal_pad(rendered: list[str]) -> list[str]:
    # line decimal points up by padding on the right; numbers without a
    # point get one extra space standing in for it
    afters = [_after_point(c) for c in rendered]
    longest = max(afters)
    if longest < 0:
        return rendered
    return [c + " " * (longest - a) for c, a in zip(rendered, afters)]


def to_markdown(table: Table) -> str:
    n_rows = len(table.rows)
    headers = [""] + [h.replace("\n", " ") for h in table.columns]
    raw_columns: list[list[str]] = [[str(i) for i in range(n_rows)]]
    for col_idx in range(len(table.columns)):
        raw_columns.append(
            [table.rows[r][col_idx].replace("\n", " ") for r in range(n_rows)]
        )

    rendered_columns: list[list[str]] = []
    numeric_flags: list[bool] = []
    for col_idx, cells in enumerate(raw_columns):
        if col_idx == 0:
            kind = "int"
        else:
            kind = _column_kind(cells)
        if kind == "int":
            rendered = [str(int(c)) for c in cells]
        elif kind == "float":
            rendered = _decimal_pad([_format_float(c) for c in cells])
        else:
            rendered = cells
        rendered_columns.append(rendered)
        numeric_flags.append(kind in ("int", "float"))

    widths = []
    for header, cells in zip(headers, rendered_columns):
        cell_width = max((len(c) for c in cells), default=0)
        widths.append(max(len(header) + 2, cell_width))

    def fit(text: str, width: int, right: bool) -> str:
        return text.rjust(width) if right else text.ljust(width)

    header_line = "|" + "|".join(
        f" {fit(h, w, right)} "
        for h, w, right in zip(headers, widths, numeric_flags)
    ) + "|"
    align_line = "|" + "|".join(
        "-" * (w + 1) + ":" if right else ":" + "-" * (w + 1)
        for w, right in zip(widths, numeric_flags)
    ) + "|"
    lines = [header_line, align_line]
    for r in range(n_rows):
        lines.append(
            "|" + "|".join(
                f" {fit(col[r], w, right)} "
                for col, w, right in zip(rendered_columns, widths, numeric_flags)
            ) + "|"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# answer normalization


_THOUSANDS = re.compile(r"\d{1,3}(,\d{3})+(\.\d+)?")


def normalize_answer(text: str) -> str:
    """Canonicalize an answer string for comparison.

    Lowercase, trim, collapse internal whitespace, drop all trailing
    periods, and strip thousands separators from values that are pure
    grouped numerals. Idempotent.
    """
    out = text.lower().strip()
    out = " ".join(out.split())
    out = out.rstrip(".").strip()
    if _THOUSANDS.fullmatch(out):
        out = out.replace(",", "")
    return out


def answer_is_correct(predicted: object, gold: str, task: TaskKind) -> bool:
    """Compare a predicted answer against gold. None (Unanswered) never matches."""
    if predicted is None:
        return False
    if task is TaskKind.FACT:
        if not isinstance(predicted, bool):
            return False
        return predicted is (gold.strip().lower() == "true")
    if not isinstance(predicted, str):
        predicted = str(predicted)
    return normalize_answer(predicted) == normalize_answer(gold)


# ---------------------------------------------------------------------------
# tokenizers and length buckets


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


TOKENIZERS: dict[str, Callable[[str], int]] = {
    "whitespace": _whitespace_tokens,
}


def token_count(text: str, tokenizer: str = "whitespace") -> int:
    try:
        counter = TOKENIZERS[tokenizer]
    except KeyError:
        raise UnknownTokenizer(f"no tokenizer named {tokenizer!r}") from None
    return counter(text)


def bucket_for_count(n_tokens: int) -> LengthBucket:
    if n_tokens < SHORT_LIMIT:
        return LengthBucket.SHORT
    if n_tokens < MEDIUM_LIMIT:
        return LengthBucket.MEDIUM
    return LengthBucket.LONG


def table_token_count(table: Table, tokenizer: str = "whitespace") -> int:
    return token_count(to_markdown(table), tokenizer)


def bucket_for(table: Table, tokenizer: str = "whitespace") -> LengthBucket:
    return bucket_for_count(table_token_count(table, tokenizer))


def retrieval_key(table: Table, query: str) -> str:
    """Text embedded for similarity search: rendered table, blank line, query."""
    return to_markdown(table) + "\n\n" + query
