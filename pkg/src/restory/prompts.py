"""Prompt assembly for the six template variants.

Variants combine a shot mode (zero, one, few) with structured reasoning
on or off. The behavioral directive always leads the prompt so the model
sees the output contract before anything else; exemplars and the target
snippet follow, each inside explicit code fences.

Wording lives in editable template files, not in code. The layout file
uses `{{directive}}`, `{{story_format_hint}}`, `{{scot_block}}`,
`{{exemplars}}` and `{{code}}` placeholders; the reasoning block must
mention all three control-flow primitives (sequence, branch, loop).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import CodeSnippet
from .errors import DataError

SHOT_MODES = ("zero", "one", "few")

PROMPT_VARIANTS = {
    "zero": ("zero", False),
    "zero-scot": ("zero", True),
    "one": ("one", False),
    "one-scot": ("one", True),
    "few": ("few", False),
    "few-scot": ("few", True),
}

SCOT_PRIMITIVES = ("sequence", "branch", "loop")


class TemplateError(DataError):
    pass


class ExemplarCountError(DataError):
    pass


class EmptySnippetError(DataError):
    pass


def _data_text(name: str) -> str:
    return (resources.files("restory") / "data" / "templates" / name).read_text(encoding="utf-8")


def estimate_tokens(text: str) -> int:
    """Rough token count: ceil(characters / 4). Monotone in length; not a
    provider-exact tokenizer."""
    if not text:
        raise DataError("cannot estimate tokens of empty text")
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class Exemplar:
    code: str
    story: str

    def __post_init__(self):
        if not self.code or not self.story:
            raise DataError("exemplar code and story must be non-empty")


def load_exemplars(path: str | Path | None = None) -> list[Exemplar]:
    """Exemplars from a JSON Lines file with `code` and `story` keys;
    defaults to the bundled fixtures."""
    if path is None:
        text = (resources.files("restory") / "data" / "exemplars.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(Exemplar(code=obj["code"], story=obj["story"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"bad exemplar on line {lineno}: {exc}") from exc
    return out


@dataclass(frozen=True)
class PromptConfig:
    shots: str  # "zero" | "one" | "few"
    scot: bool
    directive: str
    story_format_hint: str = ""
    few_k: int = 3

    def __post_init__(self):
        if self.shots not in SHOT_MODES:
            raise DataError(f"unknown shot mode {self.shots!r}")
        if not self.directive:
            raise DataError("directive must be non-empty")
        if self.few_k < 1:
            raise DataError(f"few_k must be >= 1, got {self.few_k}")

    @property
    def expected_exemplars(self) -> int:
        return {"zero": 0, "one": 1, "few": self.few_k}[self.shots]

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "shots": self.shots,
                "k": self.expected_exemplars,
                "scot": self.scot,
                "directive": self.directive,
                "hint": self.story_format_hint,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def default_prompt_config(variant: str, few_k: int = 3) -> PromptConfig:
    """Build one of the six named variants with the bundled directive/hint."""
    if variant not in PROMPT_VARIANTS:
        raise DataError(
            f"undefined prompt variant {variant!r}; choose one of: "
            + ", ".join(sorted(PROMPT_VARIANTS))
        )
    shots, scot = PROMPT_VARIANTS[variant]
    return PromptConfig(
        shots=shots,
        scot=scot,
        directive=_data_text("directive.txt").strip(),
        story_format_hint=_data_text("story_hint.txt").strip(),
        few_k=few_k,
    )


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    estimated_tokens: int
    config_fingerprint: str

    def __post_init__(self):
        if self.estimated_tokens < 1:
            raise DataError("estimated_tokens must be positive")


_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")
_KNOWN_PLACEHOLDERS = {"directive", "story_format_hint", "scot_block", "exemplars", "code"}


def load_layout(path: str | Path | None, config: PromptConfig) -> str:
    """Read a layout template and reject it if a placeholder the chosen
    config needs is missing (or an unknown one is present)."""
    text = _data_text("layout.txt") if path is None else Path(path).read_text(encoding="utf-8")
    found = set(_PLACEHOLDER_RE.findall(text))
    unknown = found - _KNOWN_PLACEHOLDERS
    if unknown:
        raise TemplateError("unknown placeholders: " + ", ".join(sorted(unknown)))
    required = {"directive", "code"}
    if config.scot:
        required.add("scot_block")
    if config.expected_exemplars:
        required.add("exemplars")
    missing = required - found
    if missing:
        raise TemplateError("template missing placeholders: " + ", ".join(sorted(missing)))
    if not text.startswith("{{directive}}"):
        raise TemplateError("template must start with {{directive}}")
    return text


def load_scot_block(path: str | Path | None = None) -> str:
    text = _data_text("scot_block.txt") if path is None else Path(path).read_text(encoding="utf-8")
    lowered = text.lower()
    missing = [p for p in SCOT_PRIMITIVES if p not in lowered]
    if missing:
        raise TemplateError("reasoning block missing primitives: " + ", ".join(missing))
    return text.strip()


def _exemplar_block(exemplars: Sequence[Exemplar], language_tag: str) -> str:
    parts = []
    for i, ex in enumerate(exemplars, start=1):
        parts.append(
            f"Example {i}:\n```{language_tag}\n{ex.code.rstrip()}\n```\nUser story: {ex.story}"
        )
    return "\n\n".join(parts)


def render_prompt(
    config: PromptConfig,
    snippet: CodeSnippet,
    exemplars: Sequence[Exemplar] = (),
    layout_path: str | Path | None = None,
    scot_block_path: str | Path | None = None,
) -> RenderedPrompt:
    """Assemble the prompt text for one snippet. Pure: identical inputs give
    byte-identical text."""
    if len(exemplars) != config.expected_exemplars:
        raise ExemplarCountError(
            f"exemplar count mismatch: config {config.shots!r} expects "
            f"{config.expected_exemplars}, got {len(exemplars)}"
        )
    if not snippet.source_text.strip():
        raise EmptySnippetError(f"snippet {snippet.id} has empty source")

    layout = load_layout(layout_path, config)
    scot = load_scot_block(scot_block_path) if config.scot else ""
    substitutions = {
        "directive": config.directive,
        "story_format_hint": config.story_format_hint,
        "scot_block": scot,
        "exemplars": _exemplar_block(exemplars, snippet.language_tag),
        "code": f"```{snippet.language_tag}\n{snippet.source_text.rstrip()}\n```",
    }
    text = _PLACEHOLDER_RE.sub(lambda m: substitutions[m.group(1)], layout)
    text = re.sub(r"\n{3,}", "\n\n", text).strip() + "\n"
    if not text.startswith(config.directive):
        raise TemplateError("rendered prompt does not begin with the directive")
    return RenderedPrompt(
        text=text,
        estimated_tokens=estimate_tokens(text),
        config_fingerprint=config.fingerprint(),
    )
