from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from specfsm.ensemble import (
    AlignmentParams,
    cluster_candidates,
    ensemble,
    majority_vote,
    medoid,
    span_overlap,
    span_tokens,
    tally_states,
    transitions_aligned,
)
from specfsm.extract import CandidateSet, CandidateState
from specfsm.fsm import export_json
from synth import STATES, candidate, planted_candidates, random_span

PROVIDERS = ("p1", "p2", "p3", "p4", "p5")


def sets_from(per) -> list[CandidateSet]:
    return [CandidateSet(provider=p, transitions=list(cs)) for p, cs in per.items()]


# ---------------------------------------------------------------- span overlap


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ("the UE shall start the initial registration procedure",
         "the UE shall start the initial registration procedure", 1.0),
        ("alpha beta", "gamma delta", 0.0),
        ("UE shall start the initial registration",
         "the UE shall start the initial registration procedure", 1.0),
        ("a b c d", "a b x y", 0.5),
        ("", "", 1.0),
        ("", "a", 0.0),
        ("Timer T3510, (expires).", "timer t3510 expires", 1.0),
        ("a a b", "a b b", 2 / 3),
    ],
)
def test_span_overlap_examples(a, b, expected):
    assert span_overlap(a, b) == pytest.approx(expected)


def test_tokens_strip_punctuation():
    assert span_tokens("“Hello,” (World) -- ok.") == ["hello", "world", "ok"]


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32))
def test_overlap_matches_oracle(seed):
    rng = random.Random(seed)
    a, b = random_span(rng), random_span(rng)
    assert span_overlap(a, b) == oracles.overlap(a, b)


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=40), st.text(max_size=40))
def test_overlap_symmetric_and_bounded(a, b):
    v = span_overlap(a, b)
    assert v == span_overlap(b, a)
    assert 0.0 <= v <= 1.0
    if span_tokens(a):
        assert span_overlap(a, a) == 1.0


# ---------------------------------------------------------------- alignment

T = candidate("S-A", "S-B", "upon receipt of the accept message", "the UE shall stop the timer", "p1")


def test_alignment_examples():
    assert transitions_aligned(T, T)
    other_src = candidate("S-X", "S-B", T.condition, T.action, "p2")
    assert not transitions_aligned(T, other_src)
    half = candidate("S-A", "S-B", "upon receipt of the accept message", "a b", "p2")
    t2 = candidate("S-A", "S-B", "upon receipt of the accept message", "a b c d", "p2")
    t3 = candidate("S-A", "S-B", "upon receipt of the accept message", "a b x y", "p3")
    assert span_overlap(t2.action, t3.action) == 0.5
    assert not transitions_aligned(t2, t3, 0.75)
    assert transitions_aligned(half, t2)


span = st.lists(st.sampled_from(["a", "b", "c", "d", "timer", "stop"]), max_size=6).map(" ".join)
cand = st.builds(
    lambda s, t, c, a: candidate(s, t, c, a, "p"),
    st.sampled_from(STATES[:2]), st.sampled_from(STATES[:2]), span, span,
)


@settings(max_examples=500, deadline=None)
@given(cand, cand, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_alignment_properties(t1, t2, th1, th2):
    assert transitions_aligned(t1, t2, th1) == transitions_aligned(t2, t1, th1)
    assert transitions_aligned(t1, t1, th1)
    lo, hi = sorted((th1, th2))
    if transitions_aligned(t1, t2, hi):
        assert transitions_aligned(t1, t2, lo)
    expected = (
        t1.source == t2.source and t1.target == t2.target
        and oracles.overlap(t1.action, t2.action) >= th1
        and oracles.overlap(t1.condition, t2.condition) >= th1
    )
    assert transitions_aligned(t1, t2, th1) == expected


def test_params_validation():
    assert AlignmentParams().threshold(5) == 3
    assert AlignmentParams().threshold(4) == 3
    assert AlignmentParams().threshold(1) == 1
    assert AlignmentParams(vote_threshold=2).threshold(5) == 2
    for bad in (dict(theta=0), dict(theta=1.5), dict(vote_threshold=0)):
        with pytest.raises(ValueError):
            AlignmentParams(**bad)
    with pytest.raises(ValueError):
        AlignmentParams(vote_threshold=6).threshold(5)


# ---------------------------------------------------------------- clustering


def test_identical_tuple_five_providers():
    per = {p: [candidate("S-A", "S-B", "c d e", "x y z", p)] for p in PROVIDERS}
    (cluster,) = cluster_candidates(per)
    assert cluster.votes == 5


def test_nothing_aligns():
    per = {"p1": [candidate("S-A", "S-B", "c", "x", "p1")], "p2": [candidate("S-A", "S-B", "d", "y", "p2")]}
    assert [c.votes for c in cluster_candidates(per)] == [1, 1]


def test_three_of_five_plus_noise():
    shared = ("S-A", "S-B", "upon receipt of accept", "the UE shall stop timer")
    per = {p: [candidate(*shared, p)] for p in PROVIDERS[:3]}
    per["p4"] = [candidate("S-A", "S-C", "something else", "other action", "p4")]
    per["p5"] = [candidate("S-B", "S-A", "upon receipt of accept", "the UE shall stop timer", "p5")]
    clusters = cluster_candidates(per)
    assert sorted(c.votes for c in clusters) == [1, 1, 3]
    # brute-force all-pairs alignment agrees
    flat = [c for cs in per.values() for c in cs]
    pairs = {(a.provider, b.provider) for a, b in itertools.combinations(flat, 2) if oracles.aligned(a, b, 0.75)}
    assert pairs == {("p1", "p2"), ("p1", "p3"), ("p2", "p3")}


def test_one_member_per_provider_best_aligned():
    seed = candidate("S-A", "S-B", "a b c d", "w x y z", "p1")
    weak = candidate("S-A", "S-B", "a b c q", "w x y q", "p2", window_id=0)
    strong = candidate("S-A", "S-B", "a b c d", "w x y z", "p2", window_id=5)
    clusters = cluster_candidates({"p1": [seed], "p2": [weak, strong]})
    big = max(clusters, key=lambda c: c.votes)
    assert big.votes == 2 and strong in big.members


def test_medoid_prefers_central_member_and_breaks_ties_by_provider():
    a = candidate("S-A", "S-B", "a b c d", "w x y z", "p2")
    b = candidate("S-A", "S-B", "a b c d", "w x y z", "p1")
    assert medoid([a, b]) is b
    far = candidate("S-A", "S-B", "a b c e", "w x y e", "p3")
    mid = candidate("S-A", "S-B", "a b c d", "w x y z", "p4")
    assert medoid([far, mid, a]).provider in ("p2", "p4")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_cluster_invariants(seed):
    rng = random.Random(seed)
    per, _ = planted_candidates(rng, n_planted=rng.randint(0, 6), n_noise=rng.randint(0, 5), near_misses=rng.randint(0, 4))
    clusters = cluster_candidates(per)
    assert sum(len(c.members) for c in clusters) == sum(len(v) for v in per.values())
    for c in clusters:
        assert c.votes == len(c.members) <= len(PROVIDERS)
        for m in c.members:
            assert transitions_aligned(m, c.representative)


def test_greedy_matches_exhaustive_oracle_small():
    for seed in range(150):
        rng = random.Random(seed)
        per, _ = planted_candidates(rng, n_planted=rng.randint(1, 6), n_noise=rng.randint(0, 4),
                                    near_misses=rng.randint(0, 6), max_total=30)
        accepted = [c.representative for c in cluster_candidates(per) if c.votes >= 3]
        groups = oracles.best_grouping([c for cs in per.values() for c in cs], 0.75, 3)
        for rep in accepted:
            assert any(oracles.aligned(rep, m, 0.75) for g in groups for m in g), seed
        for g in groups:
            assert any(oracles.aligned(rep, m, 0.75) for rep in accepted for m in g), seed


# ---------------------------------------------------------------- voting


def test_vote_threshold_keeps_and_drops():
    keep = {p: [candidate("S-A", "S-B", "c d", "x y", p)] for p in PROVIDERS[:3]}
    drop = {p: [candidate("S-B", "S-C", "e f", "u v", p)] for p in PROVIDERS[3:]}
    per = {p: keep.get(p, []) + drop.get(p, []) for p in PROVIDERS}
    fsm = majority_vote(cluster_candidates(per), AlignmentParams(), {}, 5)
    assert [t.key for t in fsm.transitions] == [("S-A", "S-B", "c d", "x y")]
    assert fsm.transitions[0].provenance.votes == 3
    assert set(fsm.states) == {"S-A", "S-B"}


def test_single_provider_passthrough():
    cs = CandidateSet("solo", transitions=[candidate("S-A", "S-B", "c", "x", "solo"),
                                           candidate("S-B", "S-A", "d", "y", "solo")])
    fsm = ensemble([cs])
    assert len(fsm.transitions) == 2


def state(name, provider, initial=False, final=False):
    return CandidateState(name, initial, final, "", 0, provider, qualified=name)


def test_state_votes_and_flags():
    sets = []
    for i, p in enumerate(PROVIDERS):
        states = [state("S-A", p, initial=i < 3), state("S-B", p, final=i < 2)]
        if i < 2:
            states.append(state("S-RARE", p))
        sets.append(CandidateSet(p, states=states))
    fsm = majority_vote([], AlignmentParams(), tally_states(sets), 5)
    assert set(fsm.states) == {"S-A", "S-B"}
    assert fsm.states["S-A"].initial and not fsm.states["S-B"].final


def test_planted_consensus_exact():
    rng = random.Random(11)
    per, bases = planted_candidates(rng, n_planted=8, n_noise=4)
    fsm = ensemble(sets_from(per), AlignmentParams(0.75, 3))
    assert len(fsm.transitions) == 8
    for src, dst, cond, act in bases:
        probe = candidate(src, dst, cond, act, "truth")
        assert any(transitions_aligned(probe, t) for t in fsm.transitions)


def test_provider_order_does_not_matter():
    rng = random.Random(5)
    per, _ = planted_candidates(rng, n_planted=8, n_noise=4, near_misses=3)
    base = export_json(ensemble(sets_from(per)))
    for perm in itertools.islice(itertools.permutations(PROVIDERS), 0, 120, 7):
        shuffled = {p: list(reversed(per[p])) for p in perm}
        assert export_json(ensemble(sets_from(shuffled))) == base


def test_theta_one_keeps_only_exact_consensus():
    per = {p: [candidate("S-A", "S-B", "a b c d", "w x y z", p)] for p in PROVIDERS[:3]}
    per["p4"] = [candidate("S-A", "S-C", "a b c d", "w x y z", "p4")]
    per["p5"] = [candidate("S-A", "S-C", "a b c e", "w x y z", "p5")]
    per["p1"].append(candidate("S-A", "S-C", "a b c f", "w x y z", "p1"))
    strict = ensemble(sets_from(per), AlignmentParams(theta=1.0))
    assert [t.target for t in strict.transitions] == ["S-B"]
    loose = ensemble(sets_from(per), AlignmentParams(theta=0.75))
    assert [t.target for t in loose.sorted_transitions()] == ["S-B", "S-C"]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.3, 1.0), st.floats(0.3, 1.0))
def test_raising_theta_never_adds_aligned_pairs(seed, th1, th2):
    rng = random.Random(seed)
    per, _ = planted_candidates(rng, n_planted=3, n_noise=2, near_misses=3)
    flat = [c for cs in per.values() for c in cs]
    lo, hi = sorted((th1, th2))
    pairs = lambda th: {(i, j) for i, a in enumerate(flat) for j, b in enumerate(flat) if transitions_aligned(a, b, th)}
    assert pairs(hi) <= pairs(lo)
