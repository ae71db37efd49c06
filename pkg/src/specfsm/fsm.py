"""Protocol state machine model: states, labelled transitions, export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Collection, Iterable

from .errors import AmbiguousSubstate, PseudoState, SchemaError

DEFAULT_DENYLIST: frozenset[str] = frozenset(
    {"UNKNOWN", "UNDEFINED", "ANY STATE", "SOME STATE", "N/A", ""}
)

DOT_LABEL_LIMIT = 60


def normalize_state_name(value: str) -> str:
    """Canonical form: trimmed, internal whitespace collapsed, uppercased."""
    return " ".join(value.split()).upper()


def is_pseudo_state(value: str, denylist: Collection[str] = DEFAULT_DENYLIST) -> bool:
    name = normalize_state_name(value)
    return name in {normalize_state_name(d) for d in denylist}


def canonical_state(value: str, denylist: Collection[str] = DEFAULT_DENYLIST) -> str:
    """Normalize ``value`` and reject pseudo-states."""
    name = normalize_state_name(value)
    if is_pseudo_state(name, denylist):
        raise PseudoState(value)
    return name


def qualify_state(candidate: str, catalog: Collection[str]) -> str:
    """Resolve a possibly abbreviated state name against ``catalog``.

    Exact matches win; otherwise a name equal to the last dotted component of
    exactly one catalog entry expands to that entry ("PLMN-SEARCH" ->
    "5GMM-REGISTERED.PLMN-SEARCH"). Anything else comes back normalized, and
    callers detect it as out-of-catalog by membership.
    """
    if not catalog:
        raise ValueError("catalog must not be empty")
    name = normalize_state_name(candidate)
    if name in catalog:
        return name
    matches = sorted(c for c in catalog if "." in c and c.rsplit(".", 1)[1] == name)
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        raise AmbiguousSubstate(name, matches)
    return name


@dataclass(frozen=True)
class Provenance:
    providers: frozenset[str] = frozenset()
    window_ids: frozenset[int] = frozenset()
    inferred: bool = False

    @property
    def votes(self) -> int:
        return len(self.providers)

    def merge(self, other: "Provenance") -> "Provenance":
        return Provenance(
            providers=self.providers | other.providers,
            window_ids=self.window_ids | other.window_ids,
            # one explicit sighting is enough to call the transition explicit
            inferred=self.inferred and other.inferred,
        )


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    condition: str = ""
    action: str = ""
    provenance: Provenance = field(default_factory=Provenance, compare=False)

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.source, self.target, self.condition, self.action)

    @property
    def label(self) -> tuple[str, str]:
        return (self.condition, self.action)


@dataclass
class StateInfo:
    initial: bool = False
    final: bool = False


@dataclass
class Fsm:
    """The quintuple as a state catalog plus condition/action-labelled edges.

    The input alphabet is the set of (condition, action) labels; initial and
    final states are flags on catalog entries.
    """

    protocol: str = ""
    spec_version: str = ""
    states: dict[str, StateInfo] = field(default_factory=dict)
    transitions: list[Transition] = field(default_factory=list)
    denylist: frozenset[str] = field(default=DEFAULT_DENYLIST, repr=False, compare=False)

    def add_state(self, name: str, initial: bool = False, final: bool = False) -> str:
        name = canonical_state(name, self.denylist)
        info = self.states.setdefault(name, StateInfo())
        info.initial |= initial
        info.final |= final
        return name

    def add_transition(self, t: Transition) -> "Fsm":
        """Insert ``t``; an exact duplicate merges provenance instead."""
        source = canonical_state(t.source, self.denylist)
        target = canonical_state(t.target, self.denylist)
        t = Transition(source, target, t.condition, t.action, t.provenance)
        for i, existing in enumerate(self.transitions):
            if existing.key == t.key:
                merged = existing.provenance.merge(t.provenance)
                self.transitions[i] = Transition(*t.key, provenance=merged)
                return self
        self.add_state(t.source)
        self.add_state(t.target)
        self.transitions.append(t)
        return self

    @property
    def initial_states(self) -> set[str]:
        return {n for n, s in self.states.items() if s.initial}

    @property
    def final_states(self) -> set[str]:
        return {n for n, s in self.states.items() if s.final}

    @property
    def alphabet(self) -> set[tuple[str, str]]:
        return {t.label for t in self.transitions}

    def sorted_transitions(self) -> list[Transition]:
        return sorted(self.transitions, key=lambda t: t.key)

    # ------------------------------------------------------------ export

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "spec_version": self.spec_version,
            "states": [
                {"name": n, "initial": s.initial, "final": s.final}
                for n, s in sorted(self.states.items())
            ],
            "transitions": [
                {
                    "from": t.source,
                    "to": t.target,
                    "condition": t.condition,
                    "action": t.action,
                    "votes": t.provenance.votes,
                    "providers": sorted(t.provenance.providers),
                    "window_ids": sorted(t.provenance.window_ids),
                    "inferred": t.provenance.inferred,
                }
                for t in self.sorted_transitions()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, denylist: Iterable[str] = DEFAULT_DENYLIST) -> "Fsm":
        try:
            fsm = cls(
                protocol=data.get("protocol", ""),
                spec_version=data.get("spec_version", ""),
                denylist=frozenset(denylist),
            )
            for s in data["states"]:
                fsm.add_state(s["name"], bool(s.get("initial")), bool(s.get("final")))
            for t in data["transitions"]:
                source, target = normalize_state_name(t["from"]), normalize_state_name(t["to"])
                if source not in fsm.states or target not in fsm.states:
                    raise SchemaError(
                        f"transition {source} -> {target} uses a state missing from 'states'"
                    )
                prov = Provenance(
                    providers=frozenset(t.get("providers", ())),
                    window_ids=frozenset(int(w) for w in t.get("window_ids", ())),
                    inferred=bool(t.get("inferred", False)),
                )
                fsm.add_transition(
                    Transition(source, target, t.get("condition", ""), t.get("action", ""), prov)
                )
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise SchemaError(f"malformed FSM document: {exc!r}") from exc
        return fsm

    def structurally_equal(self, other: "Fsm") -> bool:
        return self.to_dict() == other.to_dict()


def export_json(fsm: Fsm) -> bytes:
    text = json.dumps(fsm.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def load_json(data: bytes | str, denylist: Iterable[str] = DEFAULT_DENYLIST) -> Fsm:
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"FSM file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("FSM document must be a JSON object")
    return Fsm.from_dict(raw, denylist)


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ") + '"'


def edge_label(t: Transition, limit: int = DOT_LABEL_LIMIT) -> str:
    label = f"{t.condition} / {t.action}"
    if len(label) > limit:
        label = label[: limit - 3] + "..."
    return label


def export_dot(fsm: Fsm) -> str:
    """Render as a Graphviz digraph (initial states get a start arrow)."""
    if not fsm.states:
        return "digraph { }\n"
    lines = ["digraph {", "  rankdir=LR;"]
    names = sorted(fsm.states)
    for name in names:
        shape = "doublecircle" if fsm.states[name].final else "circle"
        lines.append(f"  {_dot_quote(name)} [shape={shape}];")
    for i, name in enumerate(n for n in names if fsm.states[n].initial):
        start = _dot_quote(f"__start{i}")
        lines.append(f"  {start} [shape=point];")
        lines.append(f"  {start} -> {_dot_quote(name)};")
    for t in fsm.sorted_transitions():
        lines.append(
            f"  {_dot_quote(t.source)} -> {_dot_quote(t.target)} "
            f"[label={_dot_quote(edge_label(t))}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"
