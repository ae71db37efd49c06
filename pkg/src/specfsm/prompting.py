"""Prompt assembly for the state and transition extraction phases."""

from __future__ import annotations

import enum
import hashlib
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Collection, Iterable, Mapping, Sequence

from .errors import EmptyCatalog
from .preproc import Window, word_count

log = logging.getLogger(__name__)

DEFAULT_CONTEXT_BUDGET = 400
DEFAULT_TAIL = 10
DEFAULT_REF_BUDGET = 200
DEFAULT_MAX_REFS = 3

TEMPLATE_FILES = (
    "state_system.txt",
    "state_user.txt",
    "state_style_state_oriented.txt",
    "state_style_procedure_oriented.txt",
    "transition_system.txt",
    "transition_user.txt",
    "few_shot_transitions.txt",
)

_PLACEHOLDER = re.compile(r"\{\{([A-Z_]+)\}\}")

_NUM = r"(\d+(?:\.\d+)*|[A-Z](?:\.\d+)+)"
_REFERENCE = re.compile(
    rf"(?i:\b(?:sub)?clauses?|\bsections?)\s+{_NUM}"
    r"|(?i:\bannex(?:es)?)\s+([A-Z](?:\.\d+)*)\b"
)


class Style(str, enum.Enum):
    STATE_ORIENTED = "state_oriented"
    PROCEDURE_ORIENTED = "procedure_oriented"


class Phase(str, enum.Enum):
    STATES = "state_extraction"
    TRANSITIONS = "transition_extraction"


@dataclass(frozen=True)
class ProtocolProfile:
    protocol: str
    style: Style = Style.STATE_ORIENTED
    known_prefixes: tuple[str, ...] = ()
    layer_tags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "style", Style(self.style))


@dataclass(frozen=True)
class ContextDigest:
    prior_states: tuple[str, ...] = ()
    prior_tail: tuple[tuple[str, str], ...] = ()
    prior_summary: str = ""
    budget: int = DEFAULT_CONTEXT_BUDGET
    tail_size: int = DEFAULT_TAIL

    def render(self) -> str:
        lines = []
        if self.prior_states:
            lines.append("Known states: " + ", ".join(self.prior_states))
        if self.prior_tail:
            lines.append("Recent transitions: " + "; ".join(f"{a} -> {b}" for a, b in self.prior_tail))
        if self.prior_summary:
            lines.append("Sections already processed: " + self.prior_summary)
        return "\n".join(lines)

    @property
    def words(self) -> int:
        return word_count(self.render())


@dataclass(frozen=True)
class PromptBundle:
    phase: Phase
    window_id: int
    system_text: str
    user_text: str
    context_digest: str = ""
    resolved_refs: tuple[tuple[str, str], ...] = field(default=())

    @property
    def prompt_text(self) -> str:
        return self.system_text + "\n" + self.user_text

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.prompt_text.encode("utf-8")).hexdigest()


class TemplateSet:
    """Prompt templates loaded from a directory (package defaults otherwise)."""

    def __init__(self, texts: Mapping[str, str]):
        missing = [name for name in TEMPLATE_FILES if name not in texts]
        if missing:
            raise FileNotFoundError(f"missing prompt templates: {', '.join(missing)}")
        self.texts = dict(texts)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "TemplateSet":
        if directory is None:
            base = resources.files("specfsm") / "templates"
            return cls({name: (base / name).read_text(encoding="utf-8") for name in TEMPLATE_FILES})
        base = Path(directory)
        return cls({name: (base / name).read_text(encoding="utf-8") for name in TEMPLATE_FILES})

    def __getitem__(self, name: str) -> str:
        return self.texts[name]

    def render(self, name: str, **values: str) -> str:
        def fill(m: re.Match) -> str:
            key = m.group(1)
            if key not in values:
                raise KeyError(f"template {name} needs a value for {{{{{key}}}}}")
            return values[key]

        # single pass, so substituted text is never rescanned
        return _PLACEHOLDER.sub(fill, self.texts[name]).rstrip("\n")


_default_templates: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _default_templates
    if _default_templates is None:
        _default_templates = TemplateSet.load()
    return _default_templates


# ---------------------------------------------------------------- context


def update_context(
    ctx: ContextDigest,
    accepted_states: Iterable[str] = (),
    accepted_transitions: Iterable = (),
    sections: Iterable[str] = (),
) -> ContextDigest:
    """Fold newly accepted results into the digest, then trim to budget.

    Trimming drops the processed-section summary first, then the oldest
    states, then the oldest transition pairs.
    """
    states = list(ctx.prior_states)
    for s in accepted_states:
        if s not in states:
            states.append(s)
    tail = list(ctx.prior_tail)
    tail.extend((t.source, t.target) for t in accepted_transitions)
    tail = tail[-ctx.tail_size:] if ctx.tail_size > 0 else []
    summary = " ".join([*ctx.prior_summary.split(), *sections])

    digest = ContextDigest(tuple(states), tuple(tail), summary, ctx.budget, ctx.tail_size)
    while digest.words > digest.budget:
        if digest.prior_summary:
            digest = _with(digest, prior_summary=" ".join(digest.prior_summary.split()[1:]))
        elif digest.prior_states:
            digest = _with(digest, prior_states=digest.prior_states[1:])
        elif digest.prior_tail:
            digest = _with(digest, prior_tail=digest.prior_tail[1:])
        else:
            break
    return digest


def _with(ctx: ContextDigest, **changes) -> ContextDigest:
    values = dict(
        prior_states=ctx.prior_states,
        prior_tail=ctx.prior_tail,
        prior_summary=ctx.prior_summary,
        budget=ctx.budget,
        tail_size=ctx.tail_size,
    )
    values.update(changes)
    return ContextDigest(**values)


# ---------------------------------------------------------------- references


def find_references(text: str) -> list[str]:
    """Section numbers referenced in ``text``, first occurrence order, deduplicated."""
    found: list[str] = []
    for m in _REFERENCE.finditer(text):
        number = m.group(1) or m.group(2)
        if number not in found:
            found.append(number)
    return found


def resolve_cross_references(
    window: Window,
    index: Mapping[str, str],
    max_refs: int = DEFAULT_MAX_REFS,
    budget: int = DEFAULT_REF_BUDGET,
) -> list[tuple[str, str]]:
    """Look up referenced sections and return ``(number, excerpt)`` pairs.

    Sections already inside the window are skipped. Excerpts are cut to
    ``budget`` words; numbers missing from ``index`` get an empty excerpt.
    """
    own = set(window.section_numbers)
    numbers = [n for n in find_references(window.text) if n not in own][:max_refs]
    resolved = []
    for number in numbers:
        text = index.get(number)
        if text is None:
            log.info("window %d: reference to section %s not found", window.window_id, number)
            resolved.append((number, ""))
        else:
            resolved.append((number, " ".join(text.split()[:budget])))
    return resolved


def _render_refs(refs: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(
        f"[{number}]\n{excerpt}" if excerpt else f"[{number}] (not available)"
        for number, excerpt in refs
    )


def render_catalog(catalog: Collection[str]) -> str:
    return "\n".join(f"- {name}" for name in sorted(catalog))


# ---------------------------------------------------------------- builders


def _common(window: Window, profile: ProtocolProfile, ctx: ContextDigest | None, refs) -> dict:
    return {
        "PROTOCOL": profile.protocol,
        "CONTEXT": (ctx or ContextDigest()).render(),
        "REFERENCES": _render_refs(refs),
        "SECTIONS": ", ".join(window.section_numbers) or "preamble",
        "WINDOW_TEXT": window.text,
    }


def _refs(window, index, max_refs, ref_budget):
    if index is None:
        return []
    return resolve_cross_references(window, index, max_refs, ref_budget)


def build_state_prompt(
    window: Window,
    profile: ProtocolProfile,
    ctx: ContextDigest | None = None,
    *,
    templates: TemplateSet | None = None,
    index: Mapping[str, str] | None = None,
    max_refs: int = DEFAULT_MAX_REFS,
    ref_budget: int = DEFAULT_REF_BUDGET,
) -> PromptBundle:
    if not window.text.strip():
        raise ValueError(f"window {window.window_id} is empty")
    tpl = templates or default_templates()
    refs = _refs(window, index, max_refs, ref_budget)
    values = _common(window, profile, ctx, refs)
    values["STYLE_GUIDANCE"] = tpl[f"state_style_{profile.style.value}.txt"].strip()
    values["PREFIXES"] = ", ".join(profile.known_prefixes) or "(none)"
    return PromptBundle(
        phase=Phase.STATES,
        window_id=window.window_id,
        system_text=tpl.render("state_system.txt", **values),
        user_text=tpl.render("state_user.txt", **values),
        context_digest=values["CONTEXT"],
        resolved_refs=tuple(refs),
    )


def build_transition_prompt(
    window: Window,
    profile: ProtocolProfile,
    catalog: Collection[str],
    ctx: ContextDigest | None = None,
    *,
    templates: TemplateSet | None = None,
    index: Mapping[str, str] | None = None,
    max_refs: int = DEFAULT_MAX_REFS,
    ref_budget: int = DEFAULT_REF_BUDGET,
) -> PromptBundle:
    if not catalog:
        raise EmptyCatalog("transition prompts need a non-empty state catalog")
    tpl = templates or default_templates()
    refs = _refs(window, index, max_refs, ref_budget)
    values = _common(window, profile, ctx, refs)
    values["CATALOG"] = render_catalog(catalog)
    values["FEW_SHOT"] = tpl["few_shot_transitions.txt"].strip()
    return PromptBundle(
        phase=Phase.TRANSITIONS,
        window_id=window.window_id,
        system_text=tpl.render("transition_system.txt", **values),
        user_text=tpl.render("transition_user.txt", **values),
        context_digest=values["CONTEXT"],
        resolved_refs=tuple(refs),
    )
