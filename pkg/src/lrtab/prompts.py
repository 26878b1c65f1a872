"""Prompt templates for direct answering, the code agent, and correction.

Templates are assembled from paragraph blocks joined by blank lines. Empty
slots elide their whole labeled block: no "Related example:" header without
an example, no condition scaffolding without conditions.

The wording below is load-bearing; tests pin the exact bytes. Keep the
"Your task to provide" phrasing and the "``` json" fence (with the space)
as they are.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import MissingSlot
from .tables import TaskKind


class PromptKind(str, Enum):
    QA_DIRECT = "qa_direct"
    QA_AGENT = "qa_agent"
    QA_CORRECTION = "qa_correction"
    FACT_DIRECT = "fact_direct"
    FACT_AGENT = "fact_agent"
    FACT_CORRECTION = "fact_correction"


@dataclass
class PromptSlots:
    title: str | None = None
    table_markdown: str | None = None
    query: str | None = None
    conditions: tuple[str, ...] = ()
    example: str | None = None
    previous_cot: str | None = None
    gold_answer: str | None = None


CONDITIONS_HEADER = "Potentially relevant examples:"
CONDITIONS_CAVEAT = (
    "Do not let these examples limit your creativity or decision to directly "
    "answer the question vs using code."
)
EXAMPLE_CAVEAT = (
    "Do not let the example limit your creativity or decision to directly "
    "answer the question vs using code."
)

_DIRECT_PREAMBLE = (
    "You are an advanced AI capable of analyzing and understanding information "
    "within tables."
)
_CORRECTION_PREAMBLE = (
    "You are an advanced AI capable of analyzing and understanding information "
    "within tables. Your task to provide a prompt condition that could have "
    "avoided the error in the previous COT."
)

_AGENT_PREAMBLE_QA = (
    "You are working with a pandas dataframe in Python. The name of the "
    "dataframe is `df`. You may **optionally** use python code to transform "
    "the table to answer the question.\n"
    "- All cells in the table should be considered as `object` data type, "
    "regardless of their appearance."
)
_AGENT_PREAMBLE_FACT = (
    "You are working with a pandas dataframe in Python. The name of the "
    "dataframe is `df`. You may **optionally** use python code to transform "
    "the table for the table fact-checking task.\n"
    "- All cells in the table should be considered as `object` data type, "
    "regardless of their appearance."
)

_OPTIONAL_CLAUSE = "You may **optionally** use python code"
_REQUIRED_CLAUSE = "You must use python code"

_QA_ANSWER_FORMAT = (
    "```json\n"
    "{\n"
    '"Final Answer": ... (AnswerName1, AnswerName2... form, no other form. '
    "And ensure the final answer is a number or entity names, as short as "
    "possible, without any explanation.)\n"
    "}\n"
    "```"
)
_FACT_ANSWER_FORMAT = (
    "```json\n"
    "{\n"
    '"Final Answer": True/False (can only be True or False)\n'
    "}\n"
    "```"
)
_CONDITION_FORMAT = (
    "``` json\n"
    "{\n"
    '    "Condition": "..." (a prompt condition to prevent the mistake. For '
    "example: 'If the error occurred due to incorrect dataframe construction, "
    "try directly reasoning over the table instead of creating a dataframe.')\n"
    "}\n"
    "```"
)

_SCAFFOLD_HEAD = "Strictly follow the given format to respond:"
_SCAFFOLD_THOUGHT_QA = (
    "Thought: Reason step by step to answer the question. At the end, either "
    "directly provide the final answer or Action Input:"
)
_SCAFFOLD_THOUGHT_FACT = (
    "Thought: Reason step by step to fact-check the statement. At the end, "
    "either directly provide the final answer or Action Input:"
)
_SCAFFOLD_ACTION = (
    "Action Input: Optional python pandas table transformation code. You must "
    "print out the output of the code."
)
_SCAFFOLD_OBSERVATION_QA = (
    "Observation: Optional result of the action. If you get an error, just try "
    "to answer the question without fixing the error."
)
_SCAFFOLD_OBSERVATION_FACT = (
    "Observation: Optional result of the action. If you get an error, just try "
    "to fact-check the statement without fixing the error."
)
_SCAFFOLD_REPEAT = (
    "(Thought/Action Input/Observation can repeat, but use sparingly. Try to "
    "avoid repeating the same action.)"
)

_FACT_CHECK_LINE = (
    "Based on the given table, check whether the following statement is true "
    "or false:"
)

_CORRECTION_EXPLAIN_QA = (
    "You are given a previous, incorrect chain of thought for the table qa\n"
    "Correct Answer: the correct answer to the table qa. Only use this for "
    "returning a useful prompt condition. Do not refer to this specific answer "
    "in the condition."
)
_CORRECTION_EXPLAIN_FACT = (
    "You are given a previous, incorrect chain of thought for the table "
    "fact-checking task\n\n"
    "Correct Answer: the correct answer to the table qa. Only use this for "
    "returning a useful prompt condition. Do not refer to this specific answer "
    "in the condition."
)


def _require(slots: PromptSlots, kind: PromptKind, *names: str) -> None:
    for name in names:
        if getattr(slots, name) is None:
            raise MissingSlot(f"{kind.value} needs the {name} slot")


def _condition_parts(slots: PromptSlots) -> list[str]:
    if not slots.conditions:
        return []
    return [CONDITIONS_HEADER, *slots.conditions, CONDITIONS_CAVEAT]


def build_prompt(kind: PromptKind, slots: PromptSlots, require_code: bool = False) -> str:
    _require(slots, kind, "title", "table_markdown", "query")
    if kind in (PromptKind.QA_CORRECTION, PromptKind.FACT_CORRECTION):
        _require(slots, kind, "previous_cot", "gold_answer")

    parts: list[str] = []
    if kind in (PromptKind.QA_DIRECT, PromptKind.FACT_DIRECT):
        parts.append(_DIRECT_PREAMBLE)
        if slots.example is not None:
            parts.extend(["Related example:", slots.example])
        parts.extend(_condition_parts(slots))
        parts.append(f'Read the table below regarding "{slots.title}".')
        parts.append(slots.table_markdown)
        if kind is PromptKind.QA_DIRECT:
            parts.append(f"Question: {slots.query}")
        else:
            parts.extend([_FACT_CHECK_LINE, slots.query])
        parts.append(
            "Let's think step by step, and then give the final answer. Ensure "
            "the final answer is the following JSON format:"
        )
        parts.append(
            _QA_ANSWER_FORMAT if kind is PromptKind.QA_DIRECT else _FACT_ANSWER_FORMAT
        )
    elif kind in (PromptKind.QA_AGENT, PromptKind.FACT_AGENT):
        qa = kind is PromptKind.QA_AGENT
        preamble = _AGENT_PREAMBLE_QA if qa else _AGENT_PREAMBLE_FACT
        if require_code:
            preamble = preamble.replace(_OPTIONAL_CLAUSE, _REQUIRED_CLAUSE)
        parts.append(preamble)
        parts.extend(_condition_parts(slots))
        if slots.example is not None:
            parts.extend(["Related example:", slots.example, EXAMPLE_CAVEAT])
        parts.extend([
            _SCAFFOLD_HEAD,
            _SCAFFOLD_THOUGHT_QA if qa else _SCAFFOLD_THOUGHT_FACT,
            _SCAFFOLD_ACTION,
            _SCAFFOLD_OBSERVATION_QA if qa else _SCAFFOLD_OBSERVATION_FACT,
            _SCAFFOLD_REPEAT,
            _QA_ANSWER_FORMAT if qa else _FACT_ANSWER_FORMAT,
            f'You are provided with a table regarding "{slots.title}". This is '
            "the result of `print(df.to_markdown())`:",
            slots.table_markdown,
        ])
        if qa:
            parts.append(f"Question: {slots.query}")
        else:
            parts.extend([_FACT_CHECK_LINE, slots.query])
        parts.extend(["Begin!", "Thought:"])
    else:
        qa = kind is PromptKind.QA_CORRECTION
        parts.append(_CORRECTION_PREAMBLE)
        parts.append(f'You are provided with a table regarding "{slots.title}".')
        parts.append(slots.table_markdown)
        if qa:
            parts.append(f"Question: {slots.query}")
        else:
            parts.append(f"Statement to fact-check: {slots.query}")
        parts.append("Previous COT:")
        parts.append(_CORRECTION_EXPLAIN_QA if qa else _CORRECTION_EXPLAIN_FACT)
        parts.append("Previous COT:")
        parts.append(slots.previous_cot)
        parts.append(f"Correct Answer: {slots.gold_answer}")
        parts.append(
            "Reason step by step. At the end, return a prompt condition in JSON "
            "format shown below."
        )
        parts.append(_CONDITION_FORMAT)
    return "\n\n".join(parts)


def prompt_kind_for(task: TaskKind, flavor: str) -> PromptKind:
    """flavor is "direct", "agent", or "correction"."""
    table = {
        (TaskKind.QA, "direct"): PromptKind.QA_DIRECT,
        (TaskKind.QA, "agent"): PromptKind.QA_AGENT,
        (TaskKind.QA, "correction"): PromptKind.QA_CORRECTION,
        (TaskKind.FACT, "direct"): PromptKind.FACT_DIRECT,
        (TaskKind.FACT, "agent"): PromptKind.FACT_AGENT,
        (TaskKind.FACT, "correction"): PromptKind.FACT_CORRECTION,
    }
    try:
        return table[(task, flavor)]
    except KeyError:
        raise ValueError(f"no prompt for task={task!r} flavor={flavor!r}") from None


def format_retrieved_condition(
    table_markdown: str, query: str, condition_text: str, task: TaskKind
) -> str:
    """Render one retrieved condition as an in-prompt reference block."""
    label = "Example Question:" if task is TaskKind.QA else "Example Statement:"
    return (
        f"Example Table:\n\n{table_markdown}\n\n{label} {query}\n\n"
        f"What to watch out for: {condition_text}"
    )
