"""The reasoning loop: Thought / Action Input / Observation steps.

A turn's text is split into at most one thought, one code block, and one
final answer. A parseable {"Final Answer": ...} object always wins over
code appearing in the same turn; the code is not executed. Parsing never
raises on model output, however mangled.

The loop is bounded by a total model-call budget. Running out of budget
records the answer as Unanswered (None). Sandbox failures are rendered
into the Observation text verbatim so the model can react to them, and
observations are truncated to a character limit with a trailing marker.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .errors import MalformedFinalAnswer
from .gateway import ChatClient, Message
from .prompts import PromptSlots, build_prompt, prompt_kind_for
from .sandbox import SandboxFactory, SandboxResult, SandboxStatus
from .tables import Instance, TaskKind, to_markdown


class AgentMode(str, Enum):
    DIRECT = "direct"
    CODE_ALWAYS = "code"
    FLEXIBLE = "flexible"


class StepKind(str, Enum):
    THOUGHT = "thought"
    ACTION_INPUT = "action_input"
    OBSERVATION = "observation"
    FINAL_ANSWER = "final_answer"


@dataclass
class AgentStep:
    kind: StepKind
    content: str


@dataclass
class AgentTrace:
    instance_id: str
    mode: AgentMode
    steps: list[AgentStep]
    answer: str | bool | None
    code_calls: int
    llm_calls: int

    def to_json_obj(self) -> dict:
        return {
            "id": self.instance_id,
            "mode": self.mode.value,
            "steps": [{"kind": s.kind.value, "content": s.content} for s in self.steps],
            "answer": self.answer,
            "code_calls": self.code_calls,
            "llm_calls": self.llm_calls,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AgentTrace":
        return cls(
            instance_id=obj["id"],
            mode=AgentMode(obj["mode"]),
            steps=[AgentStep(StepKind(s["kind"]), s["content"]) for s in obj["steps"]],
            answer=obj["answer"],
            code_calls=int(obj["code_calls"]),
            llm_calls=int(obj["llm_calls"]),
        )


@dataclass
class ParsedTurn:
    thought: str | None = None
    code: str | None = None
    final_raw: str | None = None


_FENCE = re.compile(r"```[ \t]*(\w*)[ \t]*\r?\n(.*?)```", re.DOTALL)
_BARE_FINAL = re.compile(r"\{[^{}]*\"Final Answer\"[^{}]*\}", re.DOTALL)
_PY_BOOLS = re.compile(r"\b(True|False|None)\b")


def _loads_tolerant(fragment: str) -> object:
    try:
        return json.loads(fragment)
    except json.JSONDecodeError:
        repaired = _PY_BOOLS.sub(
            lambda m: {"True": "true", "False": "false", "None": "null"}[m.group(1)],
            fragment,
        )
        return json.loads(repaired)


def _final_answer_obj(fragment: str) -> dict | None:
    if "Final Answer" not in fragment:
        return None
    try:
        obj = _loads_tolerant(fragment.strip())
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and "Final Answer" in obj:
        return obj
    return None


def parse_step(text: str) -> ParsedTurn:
    """Split one model turn. Never raises on arbitrary input."""
    turn = ParsedTurn()
    consumed_start: int | None = None
    final_fence_span: tuple[int, int] | None = None

    fences = [(m.group(1).lower(), m.group(2), m.span()) for m in _FENCE.finditer(text)]

    for lang, body, span in fences:
        if lang in ("json", "") and _final_answer_obj(body) is not None:
            turn.final_raw = body.strip()
            final_fence_span = span
            break
    if turn.final_raw is None:
        match = _BARE_FINAL.search(text)
        if match and _final_answer_obj(match.group(0)) is not None:
            turn.final_raw = match.group(0)
            final_fence_span = match.span()

    if turn.final_raw is None:
        for lang, body, span in fences:
            if lang in ("python", "py", ""):
                turn.code = body
                consumed_start = span[0]
                break
    else:
        consumed_start = final_fence_span[0]

    head = text[:consumed_start] if consumed_start is not None else text
    head = head.strip()
    if head:
        turn.thought = head
    return turn


def _answer_fragment_to_text(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float, str)):
        return str(value)
    raise MalformedFinalAnswer(f"cannot render answer fragment {value!r}")


def extract_final_answer(final_raw: str, task: TaskKind) -> str | bool:
    try:
        obj = _loads_tolerant(final_raw.strip())
    except json.JSONDecodeError as exc:
        raise MalformedFinalAnswer(f"final answer is not JSON: {exc}") from exc
    if not isinstance(obj, dict) or "Final Answer" not in obj:
        raise MalformedFinalAnswer("no Final Answer key")
    value = obj["Final Answer"]
    if task is TaskKind.FACT:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            return value.strip().lower() == "true"
        raise MalformedFinalAnswer(f"fact answer must be boolean, got {value!r}")
    if value is None:
        raise MalformedFinalAnswer("final answer is null")
    if isinstance(value, list):
        return ", ".join(_answer_fragment_to_text(v) for v in value)
    return _answer_fragment_to_text(value)


def observation_text(result: SandboxResult, wall_ms: int) -> str:
    if result.status is SandboxStatus.OK:
        return result.stdout.rstrip("\n")
    if result.status is SandboxStatus.TIMEOUT:
        return f"TimeoutError: execution exceeded {wall_ms} ms and was terminated"
    if result.status is SandboxStatus.RUNTIME_ERROR:
        body = result.stderr.rstrip("\n")
        return body or f"execution failed with exit code {result.exit_code}"
    body = result.stdout.rstrip("\n") or result.stderr.rstrip("\n")
    return body or "execution hit a resource limit and was terminated"


def truncate_observation(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + "[truncated]"


@dataclass
class AgentConfig:
    mode: AgentMode = AgentMode.FLEXIBLE
    max_llm_calls: int = 5
    observation_limit: int = 2000


class Agent:
    def __init__(
        self,
        chat: ChatClient,
        sandbox_factory: SandboxFactory | None = None,
        config: AgentConfig | None = None,
    ) -> None:
        self.chat = chat
        self.config = config or AgentConfig()
        if self.config.mode is not AgentMode.DIRECT and sandbox_factory is None:
            raise ValueError(f"{self.config.mode.value} mode needs a sandbox factory")
        self.sandbox_factory = sandbox_factory

    def run(
        self,
        instance: Instance,
        conditions: tuple[str, ...] | list[str] = (),
        example: str | None = None,
    ) -> AgentTrace:
        slots = PromptSlots(
            title=instance.table.title,
            table_markdown=to_markdown(instance.table),
            query=instance.query,
            conditions=tuple(conditions),
            example=example,
        )
        if self.config.mode is AgentMode.DIRECT:
            return self._run_direct(instance, slots)
        return self._run_loop(instance, slots)

    def _run_direct(self, instance: Instance, slots: PromptSlots) -> AgentTrace:
        prompt = build_prompt(prompt_kind_for(instance.task, "direct"), slots)
        text = self.chat.complete([{"role": "user", "content": prompt}])
        parsed = parse_step(text)
        steps: list[AgentStep] = []
        if parsed.thought:
            steps.append(AgentStep(StepKind.THOUGHT, parsed.thought))
        answer: str | bool | None = None
        if parsed.final_raw is not None:
            steps.append(AgentStep(StepKind.FINAL_ANSWER, parsed.final_raw))
            try:
                answer = extract_final_answer(parsed.final_raw, instance.task)
            except MalformedFinalAnswer:
                answer = None
        return AgentTrace(
            instance_id=instance.id,
            mode=self.config.mode,
            steps=steps,
            answer=answer,
            code_calls=0,
            llm_calls=1,
        )

    def _run_loop(self, instance: Instance, slots: PromptSlots) -> AgentTrace:
        assert self.sandbox_factory is not None
        prompt = build_prompt(
            prompt_kind_for(instance.task, "agent"),
            slots,
            require_code=self.config.mode is AgentMode.CODE_ALWAYS,
        )
        messages: list[Message] = [{"role": "user", "content": prompt}]
        steps: list[AgentStep] = []
        answer: str | bool | None = None
        code_calls = 0
        llm_calls = 0
        session = None
        try:
            while llm_calls < self.config.max_llm_calls:
                text = self.chat.complete(messages)
                llm_calls += 1
                parsed = parse_step(text)
                if parsed.thought:
                    steps.append(AgentStep(StepKind.THOUGHT, parsed.thought))
                if parsed.final_raw is not None:
                    steps.append(AgentStep(StepKind.FINAL_ANSWER, parsed.final_raw))
                    try:
                        answer = extract_final_answer(parsed.final_raw, instance.task)
                    except MalformedFinalAnswer:
                        answer = None
                    break
                if parsed.code is not None:
                    steps.append(AgentStep(StepKind.ACTION_INPUT, parsed.code))
                    if session is None:
                        session = self.sandbox_factory.session(
                            instance.id, instance.table
                        )
                    result = session.run(parsed.code)
                    code_calls += 1
                    observation = truncate_observation(
                        observation_text(result, self.sandbox_factory.limits.wall_ms),
                        self.config.observation_limit,
                    )
                    steps.append(AgentStep(StepKind.OBSERVATION, observation))
                    messages.append({"role": "assistant", "content": text})
                    messages.append(
                        {"role": "user", "content": f"Observation:\n{observation}"}
                    )
                else:
                    # no action and no answer: nudge the model to move on
                    messages.append({"role": "assistant", "content": text})
                    messages.append({"role": "user", "content": "Continue."})
        finally:
            if session is not None:
                session.close()
        return AgentTrace(
            instance_id=instance.id,
            mode=self.config.mode,
            steps=steps,
            answer=answer,
            code_calls=code_calls,
            llm_calls=llm_calls,
        )
