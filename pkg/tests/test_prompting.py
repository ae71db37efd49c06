from __future__ import annotations

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specfsm.errors import EmptyCatalog
from specfsm.fsm import Transition
from specfsm.preproc import Window
from specfsm.prompting import (
    ContextDigest,
    Phase,
    ProtocolProfile,
    Style,
    TemplateSet,
    build_state_prompt,
    build_transition_prompt,
    default_templates,
    find_references,
    resolve_cross_references,
    update_context,
)

NAS = ProtocolProfile("NAS", "state_oriented", ("5GMM-",))
PFCP = ProtocolProfile("PFCP", Style.PROCEDURE_ORIENTED)


def window(text: str, numbers=("5.5.1",), wid: int = 0) -> Window:
    return Window(wid, tuple(numbers), text, len(text.split()), (text,))


NAS_TEXT = "5.5.1 Registration\n\nThe UE in state 5GMM-REGISTERED shall stop timer T3510."


# ---------------------------------------------------------------- profile


def test_profile_style_is_validated():
    assert NAS.style is Style.STATE_ORIENTED
    with pytest.raises(ValueError):
        ProtocolProfile("X", "object_oriented")


# ---------------------------------------------------------------- state prompts


def test_state_prompt_state_oriented():
    b = build_state_prompt(window(NAS_TEXT), NAS)
    assert b.phase is Phase.STATES
    assert b.user_text.count(NAS_TEXT) == 1
    assert "standard state identifiers" in b.user_text
    assert "descriptive phrases" in b.user_text
    assert "5GMM-REGISTERED.PLMN-SEARCH" in b.user_text  # substate qualification
    assert '{"name": string, "initial": boolean, "final": boolean, "evidence": string}' in b.user_text
    assert "Established connection with SMF" not in b.user_text


def test_state_prompt_procedure_oriented():
    b = build_state_prompt(window("7.2 Association\n\nThe CP function sends a request."), PFCP)
    assert "Established connection with SMF" in b.user_text
    assert "completion of a procedure step" in b.user_text


def test_empty_context_keeps_structure():
    plain = build_state_prompt(window(NAS_TEXT), NAS)
    ctx = ContextDigest(prior_states=("5GMM-NULL",))
    with_ctx = build_state_prompt(window(NAS_TEXT), NAS, ctx)
    assert plain.context_digest == ""
    assert "Known states: 5GMM-NULL" in with_ctx.user_text
    assert with_ctx.user_text.replace("Known states: 5GMM-NULL", "") == plain.user_text


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        build_state_prompt(window("   "), NAS)


# ---------------------------------------------------------------- transition prompts


def test_transition_prompt_contents():
    text = "No 5GMM context has been established. The UE shall start the initial registration procedure."
    b = build_transition_prompt(window(text), NAS, {"5GMM-DEREGISTERED", "5GMM-REGISTERED-INITIATED"})
    assert b.phase is Phase.TRANSITIONS
    assert b.user_text.count(text) == 2  # once in the window, once in the fixed few-shot corpus
    assert '"condition": "No 5GMM context has been established"' in b.user_text
    assert '"action": "The UE shall start the initial registration procedure"' in b.user_text
    assert b.user_text.count("Output: {") >= 2
    assert "word for word" in b.user_text
    assert '"inferred": true' in b.user_text
    assert "- 5GMM-DEREGISTERED\n- 5GMM-REGISTERED-INITIATED" in b.user_text


def test_transition_prompt_single_state_catalog():
    b = build_transition_prompt(window(NAS_TEXT), NAS, {"5GMM-REGISTERED"})
    catalog_block = b.user_text.split("State catalog:\n", 1)[1].split("\n\n", 1)[0]
    assert catalog_block == "- 5GMM-REGISTERED"
    assert "Use only states from the catalog" in b.user_text


def test_transition_prompt_needs_catalog():
    with pytest.raises(EmptyCatalog):
        build_transition_prompt(window(NAS_TEXT), NAS, set())


def test_few_shot_never_depends_on_window():
    few = default_templates()["few_shot_transitions.txt"].strip()
    for text in ["A. B.", NAS_TEXT, "Upon receipt of X the UE shall do Y."]:
        b = build_transition_prompt(window(text), NAS, {"S"})
        assert few in b.user_text


def test_planted_reference_resolves():
    index = {"9.9": "9.9 Timers\n\nTimer T3510 is started on registration."}
    b = build_transition_prompt(
        window("The UE starts T3510, see subclause 9.9 for values."), NAS, {"S"}, index=index
    )
    assert b.resolved_refs == (("9.9", "9.9 Timers Timer T3510 is started on registration."),)
    assert "[9.9]" in b.user_text


# ---------------------------------------------------------------- determinism and hashing


def test_prompt_determinism_and_hash():
    a = build_transition_prompt(window(NAS_TEXT), NAS, {"B", "A"}, ContextDigest(("A",)))
    b = build_transition_prompt(window(NAS_TEXT), NAS, ["A", "B"], ContextDigest(("A",)))
    assert a == b
    expected = hashlib.sha256((a.system_text + "\n" + a.user_text).encode()).hexdigest()
    assert a.sha256 == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["zeta", "omega", "kappa", "T3510", "shall"]), min_size=1, max_size=60))
def test_window_text_appears_once(tokens):
    text = "WINDOW-START " + " ".join(tokens) + " WINDOW-END"
    for b in (build_state_prompt(window(text), NAS), build_transition_prompt(window(text), NAS, {"S"})):
        assert b.user_text.count(text) == 1


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 300),
    st.lists(st.text(alphabet="ABCDEF-", min_size=1, max_size=8), min_size=1, max_size=20),
    st.integers(0, 5),
)
def test_budget_safety(n_words, catalog, n_refs):
    refs = " ".join(f"see subclause 9.{i}" for i in range(n_refs))
    text = " ".join(["word"] * n_words) + " " + refs
    index = {f"9.{i}": " ".join(["ref"] * 500) for i in range(n_refs)}
    ctx = update_context(ContextDigest(budget=50), [f"S{i}" for i in range(100)])
    w = window(text)
    template_words = len(default_templates()["transition_user.txt"].split()) + len(
        default_templates()["few_shot_transitions.txt"].split()
    )
    b = build_transition_prompt(w, NAS, set(catalog), ctx, index=index, ref_budget=200)
    bound = w.word_count + 2 * len(set(catalog)) + 50 + 3 * (200 + 1) + template_words
    assert len(b.user_text.split()) <= bound


# ---------------------------------------------------------------- references


def test_reference_patterns():
    text = "as in subclause 5.5.1, clause 4.2, section 3, Annex A and sub-clause 9? also clauses 6.1.2 and annex B.2."
    assert find_references(text) == ["5.5.1", "4.2", "3", "A", "9", "6.1.2", "B.2"]


def test_resolve_direct_lookup():
    w = window("as specified in subclause 5.5.1", numbers=("4",))
    assert resolve_cross_references(w, {"5.5.1": "5.5.1 Reg\n\nbody"}) == [("5.5.1", "5.5.1 Reg body")]


def test_resolve_absent_reference():
    assert resolve_cross_references(window("see clause 8.1", numbers=("4",)), {}) == [("8.1", "")]


def test_resolve_caps_at_three():
    text = "see clause 1.1, clause 1.2, clause 1.3, clause 1.4 and clause 1.5"
    index = {f"1.{i}": f"text {i}" for i in range(1, 6)}
    got = resolve_cross_references(window(text, numbers=("9",)), index)
    assert [n for n, _ in got] == ["1.1", "1.2", "1.3"]


def test_resolve_budget_and_self_reference():
    index = {"2": " ".join(["w"] * 300), "9": "self"}
    got = resolve_cross_references(window("see clause 2 and clause 9", numbers=("9",)), index, budget=200)
    assert got == [("2", " ".join(["w"] * 200))]


# ---------------------------------------------------------------- context digest


def test_context_two_states():
    ctx = update_context(ContextDigest(), ["A", "B"])
    assert ctx.prior_states == ("A", "B")
    assert ctx.render() == "Known states: A, B"


def test_context_evicts_oldest_states():
    ctx = update_context(ContextDigest(budget=6), ["S1", "S2", "S3", "S4"])
    assert ctx.words <= 6
    ctx = update_context(ctx, ["S5"])
    assert ctx.words <= 6
    assert ctx.prior_states[-1] == "S5"
    assert "S1" not in ctx.prior_states


def test_context_tail_keeps_last_ten():
    ts = [Transition(f"A{i}", f"B{i}") for i in range(12)]
    ctx = update_context(ContextDigest(budget=1000), [], ts)
    assert ctx.prior_tail == tuple((f"A{i}", f"B{i}") for i in range(2, 12))


def test_context_summary_dropped_before_states():
    ctx = update_context(ContextDigest(budget=8), ["A", "B"], [], ["1", "2", "3", "4", "5"])
    assert ctx.prior_states == ("A", "B")
    assert ctx.words <= 8


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 60),
    st.lists(st.lists(st.sampled_from(["A", "B-C", "D.E", "F"]), max_size=5), max_size=8),
)
def test_context_budget_property(budget, batches):
    ctx = ContextDigest(budget=budget)
    for batch in batches:
        ctx = update_context(ctx, batch, [Transition(s, s) for s in batch], batch)
        assert ctx.words <= budget
        assert len(ctx.prior_tail) <= ctx.tail_size


# ---------------------------------------------------------------- templates


def test_custom_template_directory(tmp_path):
    for name, text in default_templates().texts.items():
        (tmp_path / name).write_text(text.replace("Task:", "TASK:"))
    tpl = TemplateSet.load(tmp_path)
    b = build_state_prompt(window(NAS_TEXT), NAS, templates=tpl)
    assert b.user_text.startswith("TASK:")


def test_missing_template_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        TemplateSet.load(tmp_path)


def test_placeholder_values_are_not_rescanned():
    text = "literal {{CATALOG}} inside the window"
    b = build_transition_prompt(window(text), NAS, {"S"})
    assert text in b.user_text
