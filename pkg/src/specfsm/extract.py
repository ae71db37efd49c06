"""Per-provider extraction: state phase, transition phase, validation."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Collection, Iterable, Mapping, Sequence

from .errors import AmbiguousSubstate, EmptyCatalog, ProviderError
from .fsm import DEFAULT_DENYLIST, is_pseudo_state, normalize_state_name, qualify_state
from .preproc import Window
from .prompting import (
    DEFAULT_CONTEXT_BUDGET,
    DEFAULT_MAX_REFS,
    DEFAULT_REF_BUDGET,
    DEFAULT_TAIL,
    ContextDigest,
    Phase,
    ProtocolProfile,
    TemplateSet,
    build_state_prompt,
    build_transition_prompt,
    update_context,
)
from .providers import ExchangeLog, Limiter, Provider

log = logging.getLogger(__name__)

_FENCE = re.compile(r"```[a-zA-Z]*\s*(.*?)```", re.DOTALL)
_decoder = json.JSONDecoder()


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


def is_grounded(span: str, window_text: str) -> bool:
    """Whitespace-insensitive verbatim containment."""
    return normalize_ws(span) in normalize_ws(window_text)


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class CandidateState:
    name: str
    initial: bool
    final: bool
    evidence: str
    window_id: int
    provider: str
    qualified: str = ""


@dataclass(frozen=True)
class CandidateTransition:
    source: str
    target: str
    condition: str
    action: str
    inferred: bool
    window_id: int
    provider: str
    from_raw: str = ""
    to_raw: str = ""
    ambiguous: bool = False
    off_catalog: bool = False

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.source, self.target, self.condition, self.action)


@dataclass(frozen=True)
class Dropped:
    kind: str  # "state" or "transition"
    window_id: int
    reason: str
    item: dict


@dataclass
class CandidateSet:
    provider: str
    catalog: list[str] = field(default_factory=list)
    states: list[CandidateState] = field(default_factory=list)
    transitions: list[CandidateTransition] = field(default_factory=list)
    parse_failures: list[tuple[int, str]] = field(default_factory=list)
    dropped: list[Dropped] = field(default_factory=list)
    raw_transition_count: int = 0

    def flagged(self, attr: str) -> set[str]:
        return {s.qualified for s in self.states if s.qualified and getattr(s, attr)}

    def to_dict(self) -> dict:
        return {
            "provider": self.provider,
            "catalog": sorted(self.catalog),
            "states": [asdict(s) for s in self.states],
            "transitions": [asdict(t) for t in self.transitions],
            "parse_failures": [list(f) for f in self.parse_failures],
            "dropped": [asdict(d) for d in self.dropped],
            "raw_transition_count": self.raw_transition_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateSet":
        return cls(
            provider=data["provider"],
            catalog=list(data.get("catalog", [])),
            states=[CandidateState(**s) for s in data.get("states", [])],
            transitions=[CandidateTransition(**t) for t in data.get("transitions", [])],
            parse_failures=[(int(w), r) for w, r in data.get("parse_failures", [])],
            dropped=[Dropped(**d) for d in data.get("dropped", [])],
            raw_transition_count=int(data.get("raw_transition_count", 0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class ExtractionSettings:
    templates: TemplateSet | None = None
    index: Mapping[str, str] | None = None
    max_refs: int = DEFAULT_MAX_REFS
    ref_budget: int = DEFAULT_REF_BUDGET
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    tail_size: int = DEFAULT_TAIL
    denylist: frozenset[str] = DEFAULT_DENYLIST
    limiter: Limiter | None = None
    log_sink: ExchangeLog | None = None
    state_workers: int = 2

    def call(self, provider: Provider, bundle):
        if self.limiter is not None:
            return self.limiter.call(provider, bundle, self.log_sink)
        return provider.complete(bundle, self.log_sink)


# ---------------------------------------------------------------- parsing


@dataclass
class ParseResult:
    candidates: list[dict]
    failures: list[str]


def _first_array(text: str) -> list | None:
    sources = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for source in sources:
        pos = source.find("[")
        while pos != -1:
            try:
                value, _ = _decoder.raw_decode(source, pos)
            except json.JSONDecodeError:
                value = None
            if isinstance(value, list):
                return value
            pos = source.find("[", pos + 1)
    return None


def _check_state(item: Any) -> dict | str:
    if not isinstance(item, dict):
        return f"state element is {type(item).__name__}, not an object"
    name = item.get("name")
    if not isinstance(name, str):
        return "state element lacks a string 'name'"
    for key in ("initial", "final"):
        if key in item and not isinstance(item[key], bool):
            return f"state {name!r}: '{key}' must be a boolean"
    evidence = item.get("evidence", "")
    if not isinstance(evidence, str):
        return f"state {name!r}: 'evidence' must be a string"
    return {
        "name": name,
        "initial": item.get("initial", False),
        "final": item.get("final", False),
        "evidence": evidence,
    }


def _check_transition(item: Any) -> dict | str:
    if not isinstance(item, dict):
        return f"transition element is {type(item).__name__}, not an object"
    for key in ("from", "to"):
        if not isinstance(item.get(key), str):
            return f"transition element lacks a string '{key}'"
    for key in ("condition", "action"):
        if key in item and not isinstance(item[key], str):
            return f"transition '{key}' must be a string"
    if "inferred" in item and not isinstance(item["inferred"], bool):
        return "transition 'inferred' must be a boolean"
    condition, action = item.get("condition", ""), item.get("action", "")
    if not condition.strip() and not action.strip():
        return "transition has neither condition nor action"
    return {
        "from": item["from"],
        "to": item["to"],
        "condition": condition,
        "action": action,
        "inferred": item.get("inferred", False),
    }


def parse_model_output(response_text: str, phase: Phase | str) -> ParseResult:
    """Pull the first JSON array out of a model reply and validate its elements.

    Never raises: a reply without an array yields one failure, and each
    element that violates the phase schema is dropped with its own failure.
    """
    phase = Phase(phase)
    array = _first_array(response_text or "")
    if array is None:
        snippet = normalize_ws(response_text or "")[:80]
        return ParseResult([], [f"no JSON array in response: {snippet!r}"])
    check = _check_state if phase is Phase.STATES else _check_transition
    result = ParseResult([], [])
    for item in array:
        checked = check(item)
        if isinstance(checked, str):
            result.failures.append(checked)
        else:
            result.candidates.append(checked)
    return result


# ---------------------------------------------------------------- phases


def _qualify_catalog(names: Iterable[str]) -> dict[str, str]:
    """Map each name to its qualified form using the dotted names present."""
    names = set(names)
    dotted = {n for n in names if "." in n}
    mapping = {}
    for name in names:
        mapping[name] = name
        if "." in name or not dotted:
            continue
        try:
            mapping[name] = qualify_state(name, dotted)
        except AmbiguousSubstate as exc:
            log.info("%s", exc)
    return mapping


def run_state_phase(
    windows: Sequence[Window],
    profile: ProtocolProfile,
    provider: Provider,
    settings: ExtractionSettings | None = None,
) -> tuple[set[str], list[CandidateState], list[tuple[int, str]], list[Dropped]]:
    """Extract states from every window and build this provider's catalog.

    Returns ``(catalog, candidates, parse_failures, dropped)``.
    """
    settings = settings or ExtractionSettings()
    ctx = ContextDigest(budget=settings.context_budget, tail_size=settings.tail_size)
    bundles = [
        build_state_prompt(
            w, profile, ctx,
            templates=settings.templates, index=settings.index,
            max_refs=settings.max_refs, ref_budget=settings.ref_budget,
        )
        for w in windows
    ]
    with ThreadPoolExecutor(max_workers=max(1, settings.state_workers)) as pool:
        exchanges = list(pool.map(lambda b: settings.call(provider, b), bundles))

    failures: list[tuple[int, str]] = []
    dropped: list[Dropped] = []
    kept: list[CandidateState] = []
    for window, exchange in zip(windows, exchanges):
        parsed = parse_model_output(exchange.response_text, Phase.STATES)
        failures.extend((window.window_id, reason) for reason in parsed.failures)
        for item in parsed.candidates:
            if is_pseudo_state(item["name"], settings.denylist):
                dropped.append(Dropped("state", window.window_id, "pseudo or empty state", item))
                continue
            evidence = item["evidence"]
            if evidence and not is_grounded(evidence, window.text):
                log.debug("window %d: evidence for %s not found verbatim", window.window_id, item["name"])
                evidence = ""
            kept.append(
                CandidateState(
                    name=item["name"],
                    initial=item["initial"],
                    final=item["final"],
                    evidence=evidence,
                    window_id=window.window_id,
                    provider=provider.name,
                )
            )

    mapping = _qualify_catalog(normalize_state_name(c.name) for c in kept)
    kept = [replace(c, qualified=mapping[normalize_state_name(c.name)]) for c in kept]
    catalog = {c.qualified for c in kept}
    return catalog, kept, failures, dropped


def _resolve_endpoint(raw: str, catalog: Collection[str]) -> tuple[str, bool]:
    try:
        return qualify_state(raw, catalog), False
    except AmbiguousSubstate:
        return normalize_state_name(raw), True


def run_transition_phase(
    windows: Sequence[Window],
    profile: ProtocolProfile,
    catalog: Collection[str],
    provider: Provider,
    settings: ExtractionSettings | None = None,
) -> tuple[list[CandidateTransition], list[tuple[int, str]], list[Dropped], int]:
    """Extract transitions window by window, threading the context digest.

    Returns ``(candidates, parse_failures, dropped, raw_count)`` where
    ``raw_count`` counts schema-valid elements before grounding checks.
    """
    if not catalog:
        raise EmptyCatalog(f"{provider.name}: state phase produced no states")
    settings = settings or ExtractionSettings()
    ctx = ContextDigest(budget=settings.context_budget, tail_size=settings.tail_size)
    out: list[CandidateTransition] = []
    failures: list[tuple[int, str]] = []
    dropped: list[Dropped] = []
    raw_count = 0

    for window in windows:
        bundle = build_transition_prompt(
            window, profile, catalog, ctx,
            templates=settings.templates, index=settings.index,
            max_refs=settings.max_refs, ref_budget=settings.ref_budget,
        )
        exchange = settings.call(provider, bundle)
        parsed = parse_model_output(exchange.response_text, Phase.TRANSITIONS)
        failures.extend((window.window_id, reason) for reason in parsed.failures)
        raw_count += len(parsed.candidates)

        accepted: list[CandidateTransition] = []
        for item in parsed.candidates:
            source, amb_s = _resolve_endpoint(item["from"], catalog)
            target, amb_t = _resolve_endpoint(item["to"], catalog)
            cand = CandidateTransition(
                source=source,
                target=target,
                condition=normalize_ws(item["condition"]),
                action=normalize_ws(item["action"]),
                inferred=item["inferred"],
                window_id=window.window_id,
                provider=provider.name,
                from_raw=item["from"],
                to_raw=item["to"],
                ambiguous=amb_s or amb_t,
                off_catalog=not (amb_s or amb_t) and (source not in catalog or target not in catalog),
            )
            reason = _grounding_problem(cand, catalog, window.text)
            if reason:
                dropped.append(Dropped("transition", window.window_id, reason, item))
            else:
                accepted.append(cand)

        out.extend(accepted)
        usable = [
            t for t in accepted
            if not is_pseudo_state(t.source, settings.denylist)
            and not is_pseudo_state(t.target, settings.denylist)
        ]
        ctx = update_context(
            ctx,
            [s for t in usable for s in (t.source, t.target)],
            usable,
            window.section_numbers,
        )
    return out, failures, dropped, raw_count


def _grounding_problem(cand: CandidateTransition, catalog: Collection[str], window_text: str) -> str:
    cond_ok = not cand.condition or is_grounded(cand.condition, window_text)
    act_ok = not cand.action or is_grounded(cand.action, window_text)
    if cand.inferred:
        if cand.source not in catalog or cand.target not in catalog:
            return "inferred transition with endpoint outside the catalog"
        if not ((cand.condition and cond_ok) or (cand.action and act_ok)):
            return "inferred transition without a span from the window"
        return ""
    if not cond_ok:
        return "condition not found in window"
    if not act_ok:
        return "action not found in window"
    return ""


def postprocess(
    candidates: Iterable[CandidateTransition],
    denylist: Collection[str] = DEFAULT_DENYLIST,
) -> tuple[list[CandidateTransition], list[Dropped]]:
    """Drop pseudo/empty endpoints and per-provider duplicates (earliest window wins)."""
    survivors: list[CandidateTransition] = []
    dropped: list[Dropped] = []
    seen: dict[tuple, int] = {}
    ordered = sorted(candidates, key=lambda c: c.window_id)  # stable
    for cand in ordered:
        cand = replace(cand, condition=normalize_ws(cand.condition), action=normalize_ws(cand.action))
        if is_pseudo_state(cand.source, denylist) or is_pseudo_state(cand.target, denylist):
            dropped.append(Dropped("transition", cand.window_id, "pseudo or empty endpoint", asdict(cand)))
            continue
        key = (cand.provider, *cand.key)
        if key in seen:
            dropped.append(
                Dropped("transition", cand.window_id, f"duplicate of window {seen[key]}", asdict(cand))
            )
            continue
        seen[key] = cand.window_id
        survivors.append(cand)
    return survivors, dropped


def extract_provider(
    windows: Sequence[Window],
    profile: ProtocolProfile,
    provider: Provider,
    settings: ExtractionSettings | None = None,
) -> CandidateSet:
    """Run both phases plus post-processing for one provider."""
    settings = settings or ExtractionSettings()
    catalog, states, failures, dropped = run_state_phase(windows, profile, provider, settings)
    result = CandidateSet(
        provider=provider.name,
        catalog=sorted(catalog),
        states=states,
        parse_failures=failures,
        dropped=dropped,
    )
    if not catalog:
        result.parse_failures.append((-1, "empty state catalog; transition phase skipped"))
        return result
    raw, t_failures, t_dropped, raw_count = run_transition_phase(
        windows, profile, catalog, provider, settings
    )
    survivors, pp_dropped = postprocess(raw, settings.denylist)
    result.transitions = survivors
    result.parse_failures.extend(t_failures)
    result.dropped.extend(t_dropped + pp_dropped)
    result.raw_transition_count = raw_count
    return result


def extract_all(
    windows: Sequence[Window],
    profile: ProtocolProfile,
    providers: Sequence[Provider],
    settings: ExtractionSettings | None = None,
) -> tuple[dict[str, CandidateSet], dict[str, ProviderError]]:
    """Run every provider concurrently; hard failures are returned, not raised."""
    settings = settings or ExtractionSettings()
    results: dict[str, CandidateSet] = {}
    errors: dict[str, ProviderError] = {}
    with ThreadPoolExecutor(max_workers=max(1, len(providers))) as pool:
        futures = {p.name: pool.submit(extract_provider, windows, profile, p, settings) for p in providers}
        for name in sorted(futures):
            try:
                results[name] = futures[name].result()
            except ProviderError as exc:
                log.error("provider %s failed: %s", name, exc)
                errors[name] = exc
    return results, errors
