"""Scoring extracted FSMs against annotated ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Collection, Iterable, Sequence

from .ensemble import DEFAULT_THETA, pair_score, transitions_aligned
from .errors import SchemaError
from .fsm import Fsm, StateInfo, normalize_state_name

UNLAYERED = "unlayered"


@dataclass(frozen=True)
class TruthTransition:
    source: str
    target: str
    condition: str = ""
    action: str = ""
    layer: str | None = None


@dataclass
class GroundTruth:
    protocol: str = ""
    spec_version: str = ""
    states: dict[str, StateInfo] = field(default_factory=dict)
    transitions: list[TruthTransition] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict, layer_tags: Collection[str] | None = None) -> "GroundTruth":
        try:
            gt = cls(protocol=data.get("protocol", ""), spec_version=data.get("spec_version", ""))
            for s in data["states"]:
                gt.states[normalize_state_name(s["name"])] = StateInfo(
                    bool(s.get("initial")), bool(s.get("final"))
                )
            for t in data["transitions"]:
                tt = TruthTransition(
                    normalize_state_name(t["from"]),
                    normalize_state_name(t["to"]),
                    t.get("condition", ""),
                    t.get("action", ""),
                    t.get("layer"),
                )
                if tt.source not in gt.states or tt.target not in gt.states:
                    raise SchemaError(f"ground-truth transition {tt.source} -> {tt.target} uses an unknown state")
                if layer_tags and tt.layer is not None and tt.layer not in layer_tags:
                    raise SchemaError(f"layer {tt.layer!r} is not one of {sorted(layer_tags)}")
                gt.transitions.append(tt)
        except (KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"malformed ground-truth document: {exc!r}") from exc
        return gt

    @classmethod
    def from_fsm(cls, fsm: Fsm) -> "GroundTruth":
        return cls(
            protocol=fsm.protocol,
            spec_version=fsm.spec_version,
            states={n: StateInfo(s.initial, s.final) for n, s in fsm.states.items()},
            transitions=[
                TruthTransition(t.source, t.target, t.condition, t.action)
                for t in fsm.sorted_transitions()
            ],
        )


def load_ground_truth(data: bytes | str, layer_tags: Collection[str] | None = None) -> GroundTruth:
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"ground truth is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("ground truth must be a JSON object")
    return GroundTruth.from_dict(raw, layer_tags)


# ---------------------------------------------------------------- matching


@dataclass
class Matching:
    predictions: list
    truths: list
    pairs: list[tuple[int, int]]
    unmatched_predictions: list[int]
    unmatched_truths: list[int]
    theta: float = DEFAULT_THETA


def _transitions(x) -> list:
    if isinstance(x, Fsm):
        return x.sorted_transitions()
    if isinstance(x, GroundTruth):
        return list(x.transitions)
    return list(x)


def match_transitions(pred, truth, theta: float = DEFAULT_THETA) -> Matching:
    """One-to-one matching of predictions to ground truth.

    Candidate pairs must align at ``theta``. They are first accepted greedily
    by descending summed condition/action overlap (ties by truth, then
    prediction index). Augmenting paths from each unmatched truth then
    enlarge the matching to maximum size; a path prefers higher-scoring
    predictions.
    """
    preds, truths = _transitions(pred), _transitions(truth)
    candidates = [
        (-pair_score(p, t), ti, pi)
        for pi, p in enumerate(preds)
        for ti, t in enumerate(truths)
        if transitions_aligned(p, t, theta)
    ]
    candidates.sort()
    truth_of: dict[int, int] = {}
    pred_of: dict[int, int] = {}
    options: dict[int, list[int]] = {}
    for _, ti, pi in candidates:
        options.setdefault(ti, []).append(pi)
        if pi in truth_of or ti in pred_of:
            continue
        truth_of[pi] = ti
        pred_of[ti] = pi

    def augment(ti: int, visited: set[int]) -> bool:
        for pi in options.get(ti, ()):
            if pi in visited:
                continue
            visited.add(pi)
            if pi not in truth_of or augment(truth_of[pi], visited):
                truth_of[pi] = ti
                pred_of[ti] = pi
                return True
        return False

    for ti in range(len(truths)):
        if ti not in pred_of and ti in options:
            augment(ti, set())

    pairs = sorted(truth_of.items())
    return Matching(
        predictions=preds,
        truths=truths,
        pairs=pairs,
        unmatched_predictions=[i for i in range(len(preds)) if i not in truth_of],
        unmatched_truths=[i for i in range(len(truths)) if i not in pred_of],
        theta=theta,
    )


# ---------------------------------------------------------------- scoring


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class LayerScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    undefined: list[str] = field(default_factory=list)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "LayerScore":
        undefined = []
        if tp + fp == 0:
            undefined.append("precision")
        if tp + fn == 0:
            undefined.append("recall")
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        if p + r == 0:
            undefined.append("f1")
        return cls(tp, fp, fn, p, r, f1_score(p, r), undefined)


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    undefined: list[str] = field(default_factory=list)
    per_layer: dict[str, LayerScore] = field(default_factory=dict)
    matched_pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_predictions: list[int] = field(default_factory=list)
    unmatched_truths: list[int] = field(default_factory=list)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, **extra) -> "EvalReport":
        s = LayerScore.from_counts(tp, fp, fn)
        return cls(s.tp, s.fp, s.fn, s.precision, s.recall, s.f1, s.undefined, **extra)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "undefined": list(self.undefined),
            "per_layer": {k: vars(v) for k, v in sorted(self.per_layer.items())},
            "matched_pairs": [list(p) for p in self.matched_pairs],
            "unmatched_predictions": list(self.unmatched_predictions),
            "unmatched_truths": list(self.unmatched_truths),
        }

    def format_table(self, label: str = "all") -> str:
        rows = [(label, self)]
        rows += [(f"{label.split('-')[0]}-{name}", s) for name, s in sorted(self.per_layer.items())]
        header = ("Protocol", "Precision (%)", "Recall (%)", "F1-score (%)")
        body = [
            (name, f"{s.precision * 100:.2f}", f"{s.recall * 100:.2f}", f"{s.f1 * 100:.2f}")
            for name, s in rows
        ]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(4)]
        lines = [
            "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
            for r in [header, *body]
        ]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _nearest_truth(pred, truths: Sequence, theta: float) -> int | None:
    best, best_score = None, -1.0
    for i, t in enumerate(truths):
        if transitions_aligned(pred, t, theta):
            score = pair_score(pred, t)
            if score > best_score:
                best, best_score = i, score
    return best


def score(matching: Matching) -> EvalReport:
    """Precision, recall and F1 overall and per ground-truth layer.

    A false positive is charged to the layer of the truth it aligns with best
    (it lost that truth to a better prediction), or to ``unlayered``.
    """
    tp, fp, fn = len(matching.pairs), len(matching.unmatched_predictions), len(matching.unmatched_truths)
    report = EvalReport.from_counts(
        tp,
        fp,
        fn,
        matched_pairs=list(matching.pairs),
        unmatched_predictions=list(matching.unmatched_predictions),
        unmatched_truths=list(matching.unmatched_truths),
    )

    def layer_of(ti: int | None) -> str:
        if ti is None:
            return UNLAYERED
        return getattr(matching.truths[ti], "layer", None) or UNLAYERED

    if not any(getattr(t, "layer", None) for t in matching.truths):
        return report
    counts: dict[str, list[int]] = {}
    for _, ti in matching.pairs:
        counts.setdefault(layer_of(ti), [0, 0, 0])[0] += 1
    for pi in matching.unmatched_predictions:
        ti = _nearest_truth(matching.predictions[pi], matching.truths, matching.theta)
        counts.setdefault(layer_of(ti), [0, 0, 0])[1] += 1
    for ti in matching.unmatched_truths:
        counts.setdefault(layer_of(ti), [0, 0, 0])[2] += 1
    report.per_layer = {name: LayerScore.from_counts(*c) for name, c in counts.items()}
    return report


def evaluate(pred, truth, theta: float = DEFAULT_THETA) -> EvalReport:
    return score(match_transitions(pred, truth, theta))


def state_score(pred_states: Iterable[str], truth_states: Iterable[str]) -> EvalReport:
    """Exact-name set comparison of state catalogs."""
    pred = sorted({normalize_state_name(s) for s in pred_states})
    truth = sorted({normalize_state_name(s) for s in truth_states})
    t_index = {name: i for i, name in enumerate(truth)}
    pairs = [(pi, t_index[name]) for pi, name in enumerate(pred) if name in t_index]
    matched_t = {ti for _, ti in pairs}
    return EvalReport.from_counts(
        len(pairs),
        len(pred) - len(pairs),
        len(truth) - len(pairs),
        matched_pairs=pairs,
        unmatched_predictions=[i for i, n in enumerate(pred) if n not in t_index],
        unmatched_truths=[i for i in range(len(truth)) if i not in matched_t],
    )
