"""Cross-provider alignment of candidate transitions and majority voting."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Iterable, Mapping, Sequence

from .extract import CandidateSet, CandidateTransition
from .fsm import DEFAULT_DENYLIST, Fsm, Provenance, Transition

DEFAULT_THETA = 0.75

_PUNCT = string.punctuation + "“”‘’«»–—…"


def span_tokens(text: str) -> list[str]:
    """Case-folded whitespace tokens with surrounding punctuation stripped."""
    tokens = (word.strip(_PUNCT) for word in text.casefold().split())
    return [t for t in tokens if t]


def span_overlap(a: str, b: str) -> float:
    """Multiset token intersection over the shorter span's length.

    Two empty spans overlap fully; an empty span against a non-empty one
    does not overlap at all.
    """
    ta, tb = span_tokens(a), span_tokens(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    shared = sum((Counter(ta) & Counter(tb)).values())
    return shared / min(len(ta), len(tb))


def pair_score(t1, t2) -> float:
    return span_overlap(t1.action, t2.action) + span_overlap(t1.condition, t2.condition)


def transitions_aligned(t1, t2, theta: float = DEFAULT_THETA) -> bool:
    """Same endpoints and both action and condition overlap at least ``theta``."""
    return (
        t1.source == t2.source
        and t1.target == t2.target
        and span_overlap(t1.action, t2.action) >= theta
        and span_overlap(t1.condition, t2.condition) >= theta
    )


@dataclass(frozen=True)
class AlignmentParams:
    theta: float = DEFAULT_THETA
    vote_threshold: int | None = None

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")
        if self.vote_threshold is not None and self.vote_threshold < 1:
            raise ValueError("vote_threshold must be >= 1")

    def threshold(self, k: int) -> int:
        """Votes needed with ``k`` providers (strict majority unless overridden)."""
        if k < 1:
            raise ValueError("need at least one provider")
        if self.vote_threshold is None:
            return k // 2 + 1
        if self.vote_threshold > k:
            raise ValueError(f"vote_threshold {self.vote_threshold} exceeds provider count {k}")
        return self.vote_threshold


@dataclass
class TransitionCluster:
    members: list[CandidateTransition]
    representative: CandidateTransition

    @property
    def votes(self) -> int:
        return len({m.provider for m in self.members})

    @property
    def providers(self) -> frozenset[str]:
        return frozenset(m.provider for m in self.members)


def _order_key(c: CandidateTransition) -> tuple:
    return (c.window_id, c.source, c.target, c.condition, c.action)


def _as_mapping(per_provider) -> dict[str, list[CandidateTransition]]:
    if isinstance(per_provider, Mapping):
        return {name: list(cands) for name, cands in per_provider.items()}
    return {cs.provider: list(cs.transitions) for cs in per_provider}


def medoid(members: Sequence[CandidateTransition], theta: float = DEFAULT_THETA) -> CandidateTransition:
    """Member with the largest summed overlap against the others.

    Only members aligned with every other member qualify, so the
    representative stays aligned with the whole cluster.
    """
    eligible = [
        m for m in members
        if all(o is m or transitions_aligned(m, o, theta) for o in members)
    ] or list(members)

    def rank(m: CandidateTransition):
        total = sum(pair_score(m, o) for o in members if o is not m)
        return (-total, m.provider, _order_key(m))

    return min(eligible, key=rank)


def cluster_candidates(
    per_provider: Mapping[str, Sequence[CandidateTransition]] | Iterable[CandidateSet],
    params: AlignmentParams | None = None,
) -> list[TransitionCluster]:
    """Greedy seeded clustering, at most one member per provider per cluster.

    Candidates seed clusters in order of support (how many other providers
    have an aligned candidate), then provider name, window and tuple. Each
    other provider contributes its best-aligned unclustered candidate. The
    result does not depend on input ordering.
    """
    params = params or AlignmentParams()
    pools = {
        name: sorted(cands, key=_order_key)
        for name, cands in sorted(_as_mapping(per_provider).items())
    }
    flat = [(name, i, c) for name, cands in pools.items() for i, c in enumerate(cands)]
    partners: dict[tuple[str, int], dict[str, list[int]]] = {}
    for name, i, c in flat:
        links: dict[str, list[int]] = {}
        for other, j, d in flat:
            if other != name and transitions_aligned(c, d, params.theta):
                links.setdefault(other, []).append(j)
        partners[(name, i)] = links

    seeds = sorted(
        ((name, i) for name, i, _ in flat),
        key=lambda k: (-len(partners[k]), k[0], _order_key(pools[k[0]][k[1]])),
    )
    used: set[tuple[str, int]] = set()
    clusters: list[TransitionCluster] = []
    for name, i in seeds:
        if (name, i) in used:
            continue
        used.add((name, i))
        seed = pools[name][i]
        members = [seed]
        for other, js in sorted(partners[(name, i)].items()):
            best, best_score = None, -1.0
            for j in js:
                if (other, j) in used:
                    continue
                score = pair_score(seed, pools[other][j])
                if score > best_score:
                    best, best_score = j, score
            if best is not None:
                used.add((other, best))
                members.append(pools[other][best])
        clusters.append(TransitionCluster(members, medoid(members, params.theta)))
    return clusters


# ---------------------------------------------------------------- voting


@dataclass
class StateTally:
    providers: set[str] = field(default_factory=set)
    initial: set[str] = field(default_factory=set)
    final: set[str] = field(default_factory=set)


def tally_states(candidate_sets: Iterable[CandidateSet]) -> dict[str, StateTally]:
    tallies: dict[str, StateTally] = {}
    for cs in candidate_sets:
        for state in cs.states:
            if not state.qualified:
                continue
            tally = tallies.setdefault(state.qualified, StateTally())
            tally.providers.add(cs.provider)
            if state.initial:
                tally.initial.add(cs.provider)
            if state.final:
                tally.final.add(cs.provider)
    return tallies


def majority_vote(
    clusters: Iterable[TransitionCluster],
    params: AlignmentParams,
    state_votes: Mapping[str, StateTally],
    n_providers: int,
    *,
    protocol: str = "",
    spec_version: str = "",
    denylist: Collection[str] = DEFAULT_DENYLIST,
) -> Fsm:
    """Keep clusters and states backed by at least the vote threshold."""
    need = params.threshold(n_providers)
    fsm = Fsm(protocol=protocol, spec_version=spec_version, denylist=frozenset(denylist))
    for name in sorted(state_votes):
        tally = state_votes[name]
        if len(tally.providers) >= need:
            fsm.add_state(name)
    for cluster in clusters:
        if cluster.votes < need:
            continue
        rep = cluster.representative
        prov = Provenance(
            providers=cluster.providers,
            window_ids=frozenset(m.window_id for m in cluster.members),
            inferred=all(m.inferred for m in cluster.members),
        )
        fsm.add_transition(Transition(rep.source, rep.target, rep.condition, rep.action, prov))
    for name, tally in state_votes.items():
        if name in fsm.states:
            fsm.states[name].initial = len(tally.initial) >= need
            fsm.states[name].final = len(tally.final) >= need
    return fsm


def ensemble(
    candidate_sets: Sequence[CandidateSet],
    params: AlignmentParams | None = None,
    *,
    protocol: str = "",
    spec_version: str = "",
    denylist: Collection[str] = DEFAULT_DENYLIST,
) -> Fsm:
    """Cluster every provider's candidates and vote them into one FSM."""
    params = params or AlignmentParams()
    clusters = cluster_candidates(candidate_sets, params)
    return majority_vote(
        clusters,
        params,
        tally_states(candidate_sets),
        len(candidate_sets),
        protocol=protocol,
        spec_version=spec_version,
        denylist=denylist,
    )
