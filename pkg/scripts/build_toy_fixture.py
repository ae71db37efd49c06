"""Regenerate the bundled toy-protocol fixture.

Writes ``truth.json``, ``config.json`` and the replay fixtures under
``src/specfsm/data/toy``. Five scripted providers answer every prompt of a
real pipeline run; their answers mix faithful extractions, trimmed span
variants and planted noise. Rerun after editing templates or the toy text,
since fixture file names are prompt hashes.
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

from specfsm.extract import ExtractionSettings, extract_all
from specfsm.preproc import RawDocument, build_section_index, segment
from specfsm.prompting import Phase, ProtocolProfile
from specfsm.providers import CallbackProvider, RecordingProvider

TOY = Path(__file__).resolve().parents[1] / "src" / "specfsm" / "data" / "toy"
PROVIDERS = ("alpha", "bravo", "charlie", "delta", "echo")

NULL, DEREG, REG_INIT, REG, DEREG_INIT = (
    "TMM-NULL",
    "TMM-DEREGISTERED",
    "TMM-REGISTERED-INITIATED",
    "TMM-REGISTERED",
    "TMM-DEREGISTERED-INITIATED",
)

# (from, to, condition, action, first section of the describing window)
TRUTH = [
    (NULL, DEREG, "When the UE is switched on", "the UE shall activate the TMM sublayer", "5"),
    (DEREG, REG_INIT, "If no TMM context has been established",
     "the UE shall send a REGISTRATION REQUEST message to the network and start timer T9510", "5.2"),
    (REG_INIT, REG, "Upon receipt of a REGISTRATION ACCEPT message",
     "the UE shall stop timer T9510 and reset the registration attempt counter", "5.2"),
    (REG_INIT, DEREG, "Upon receipt of a REGISTRATION REJECT message",
     "the UE shall stop timer T9510 and delete the stored TMM context", "5.2"),
    (REG_INIT, DEREG, "If timer T9510 expires",
     "the UE shall abort the registration procedure and increment the registration attempt counter", "5.2"),
    (REG, DEREG_INIT, "If the UE is to be switched off",
     "the UE shall send a DEREGISTRATION REQUEST message and start timer T9521", "5.3"),
    (DEREG_INIT, DEREG, "Upon receipt of a DEREGISTRATION ACCEPT message",
     "the UE shall stop timer T9521 and release the TMM context", "5.3"),
    (REG, DEREG, "Upon receipt of a DEREGISTRATION REQUEST message from the network",
     "the UE shall send a DEREGISTRATION ACCEPT message", "5.3"),
]

STATE_EVIDENCE = {
    NULL: "TMM-NULL is the initial state of the UE.",
    DEREG: "In the state TMM-DEREGISTERED no TMM context has been established.",
    REG_INIT: "The UE enters TMM-REGISTERED-INITIATED",
    REG: "In the state TMM-REGISTERED a TMM context has been established.",
    DEREG_INIT: "The UE enters TMM-DEREGISTERED-INITIATED",
}

# truth indices each provider misses
MISSES = {"alpha": {4}, "bravo": {7}, "charlie": set(), "delta": set(), "echo": {0}}


def _trim(action: str) -> str:
    return action.removeprefix("the UE shall ")


def _variant(provider: str, i: int, t) -> dict:
    src, dst, cond, act, _ = t
    if provider == "bravo":
        act = _trim(act)
    elif provider == "charlie" and i % 2 == 0:
        cond = cond.replace("Upon receipt of", "receipt of")
    elif provider == "echo":
        act = f"{act}."
    return {"from": src, "to": dst, "condition": cond, "action": act, "inferred": False}


NOISE = {
    # minority hallucination (grounded, single vote)
    ("charlie", "5.3"): [
        {"from": REG, "to": NULL, "condition": "If the UE is to be switched off",
         "action": "the UE shall send a DEREGISTRATION REQUEST message", "inferred": False},
    ],
    # paraphrased span, rejected by grounding
    ("delta", "5.2"): [
        {"from": REG_INIT, "to": REG, "condition": "When the network accepts the registration",
         "action": "the UE stops the timer", "inferred": False},
    ],
    # pseudo-state endpoint and an inferred single-vote guess
    ("echo", "5.3"): [
        {"from": "Unknown", "to": DEREG, "condition": "Upon receipt of a DEREGISTRATION ACCEPT message",
         "action": "", "inferred": False},
        {"from": DEREG_INIT, "to": NULL, "condition": "If the UE is to be switched off",
         "action": "", "inferred": True},
    ],
}
# two-vote self loop, below the three-vote majority
for _p in ("bravo", "charlie"):
    NOISE.setdefault((_p, "5.2"), []).append(
        {"from": REG_INIT, "to": REG_INIT, "condition": "If timer T9510 expires",
         "action": "the UE shall abort the registration procedure", "inferred": False}
    )


def _fenced(payload) -> str:
    return "Here is what I found.\n```json\n" + json.dumps(payload, indent=2) + "\n```\n"


def _state_answer(provider: str, window) -> str:
    if provider == "delta" and window.section_numbers[0] == "1":
        return "I could not find any state in this section."
    found = [s for s in STATE_EVIDENCE if s in window.text]
    if window.section_numbers[0] == "4.2":
        found = list(STATE_EVIDENCE)
    items = [
        {
            "name": name,
            "initial": name == NULL and provider != "bravo",
            "final": name == DEREG and provider == "echo",
            "evidence": STATE_EVIDENCE[name] if STATE_EVIDENCE[name] in window.text else "",
        }
        for name in found
    ]
    if provider == "charlie" and window.section_numbers[0] == "4.2":
        items.append({"name": "Unknown", "initial": False, "final": False, "evidence": ""})
    if provider == "echo" and window.section_numbers[0] == "4.2":
        items.append({"name": "TMM-SUSPENDED", "initial": False, "final": False, "evidence": ""})
    return _fenced(items) if provider in ("bravo", "delta") else json.dumps(items)


def _transition_answer(provider: str, window) -> str:
    head = window.section_numbers[0]
    if provider == "delta" and head == "5.3":
        return '[{"from": "TMM-REGISTERED", "to": "TMM-DEREGISTERED-INITIATED", "condition": "If the UE'
    items = [
        _variant(provider, i, t)
        for i, t in enumerate(TRUTH)
        if t[4] == head and i not in MISSES[provider]
    ]
    items += NOISE.get((provider, head), [])
    if provider == "charlie":
        return "Transitions:\n" + json.dumps(items) + "\nLet me know if you need more."
    return json.dumps(items)


def _responder(provider: str, windows):
    by_id = {w.window_id: w for w in windows}

    def respond(bundle) -> str:
        window = by_id[bundle.window_id]
        if bundle.phase is Phase.STATES:
            return _state_answer(provider, window)
        return _transition_answer(provider, window)

    return respond


def truth_document() -> dict:
    return {
        "protocol": "TMM",
        "spec_version": "17.0.0",
        "states": [{"name": s, "initial": s == NULL, "final": False} for s in STATE_EVIDENCE],
        "transitions": [
            {"from": a, "to": b, "condition": c, "action": d} for a, b, c, d, _ in TRUTH
        ],
    }


def config_document() -> dict:
    return {
        "document": "toy_spec.txt",
        "doc_id": "toy",
        "spec_version": "17.0.0",
        "protocol": {"name": "TMM", "style": "state_oriented", "known_prefixes": ["TMM-"]},
        "providers": [
            {
                "name": name,
                "endpoint_url": "https://llm.invalid/v1",
                "model_id": f"{name}-model",
                "api_key_env": f"{name.upper()}_API_KEY",
            }
            for name in PROVIDERS
        ],
        "ground_truth": "truth.json",
        "output_dir": "out",
    }


def main() -> int:
    text = (TOY / "toy_spec.txt").read_text(encoding="utf-8")
    windows, root = segment(RawDocument("toy", text, "TMM", "17.0.0"))
    profile = ProtocolProfile("TMM", "state_oriented", ("TMM-",))
    replay = TOY / "replay"
    shutil.rmtree(replay, ignore_errors=True)
    providers = [
        RecordingProvider(CallbackProvider(name, _responder(name, windows)), replay / name)
        for name in PROVIDERS
    ]
    settings = ExtractionSettings(index=build_section_index(root))
    results, errors = extract_all(windows, profile, providers, settings)
    if errors:
        print(errors, file=sys.stderr)
        return 1
    (TOY / "truth.json").write_text(json.dumps(truth_document(), indent=2) + "\n", encoding="utf-8")
    (TOY / "config.json").write_text(json.dumps(config_document(), indent=2) + "\n", encoding="utf-8")
    for name, cs in results.items():
        print(f"{name}: {len(cs.catalog)} states, {len(cs.transitions)} transitions, "
              f"{len(cs.parse_failures)} parse failures, {len(cs.dropped)} dropped")
    return 0


if __name__ == "__main__":
    sys.exit(main())
