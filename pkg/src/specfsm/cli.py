"""Command-line entry point: segment, extract, ensemble, eval, cost, run."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .ensemble import AlignmentParams, ensemble
from .errors import (
    ConfigError,
    EmptyAfterClean,
    NoSectionsFound,
    ProviderError,
    SchemaError,
)
from .evalkit import evaluate, load_ground_truth, state_score
from .extract import CandidateSet, ExtractionSettings, extract_all
from .fsm import DEFAULT_DENYLIST, export_dot, export_json, load_json
from .preproc import RawDocument, build_section_index, segment
from .prompting import TemplateSet
from .providers import ExchangeLog, Limiter, cost_report, format_cost_table, make_provider, read_exchange_log

log = logging.getLogger("specfsm")

EXIT_OK, EXIT_USAGE, EXIT_PROVIDER, EXIT_SCHEMA = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(cfg: RunConfig | None, args) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return cfg.output_dir
    return Path("out")


def _load(args, required: bool = True) -> RunConfig | None:
    if not args.config:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    cfg = load_config(args.config)
    return cfg.with_overrides(
        theta=args.theta,
        vote_threshold=args.votes,
        max_words=args.max_words,
        dump=True if args.dump else None,
    )


def _read_document(cfg: RunConfig) -> RawDocument:
    text = cfg.document.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyAfterClean(f"document {cfg.document} is empty")
    return RawDocument(cfg.doc_id, text, cfg.profile.protocol, cfg.spec_version)


def _segment(cfg: RunConfig):
    return segment(_read_document(cfg), cfg.max_words, cfg.clean_rules)


def _write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")


def _windows_json(windows) -> str:
    return json.dumps([w.to_dict() for w in windows], indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- commands


def cmd_segment(cfg: RunConfig, out: Path) -> int:
    windows, _ = _segment(cfg)
    _write(out / "windows.json", _windows_json(windows))
    print(f"{len(windows)} windows")
    return EXIT_OK


def cmd_extract(cfg: RunConfig, out: Path, replay: str | None = None) -> int:
    windows, root = _segment(cfg)
    if cfg.dump:
        _write(out / "windows.json", _windows_json(windows))
    log_path = out / "exchanges.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("", encoding="utf-8")
    settings = ExtractionSettings(
        templates=TemplateSet.load(cfg.templates_dir) if cfg.templates_dir else None,
        index=build_section_index(root),
        max_refs=cfg.max_references,
        ref_budget=cfg.reference_budget,
        context_budget=cfg.context_budget,
        tail_size=cfg.context_tail,
        denylist=cfg.denylist,
        limiter=Limiter(cfg.global_cap, cfg.per_provider_cap),
        log_sink=ExchangeLog(log_path),
        state_workers=cfg.per_provider_cap,
    )
    providers = [make_provider(p, replay) for p in cfg.providers]
    results, errors = extract_all(windows, cfg.profile, providers, settings)

    cand_dir = out / "candidates"
    for stale in cand_dir.glob("*.json") if cand_dir.is_dir() else ():
        stale.unlink()
    for name, cs in results.items():
        _write(cand_dir / f"{name}.json", cs.dumps())
        print(
            f"{name}: {len(cs.catalog)} states, {len(cs.transitions)} transitions, "
            f"{len(cs.parse_failures)} parse failures, {len(cs.dropped)} dropped"
        )
    for name, exc in errors.items():
        print(f"{name}: FAILED ({type(exc).__name__}: {exc})", file=sys.stderr)
    return EXIT_PROVIDER if errors else EXIT_OK


def _candidate_files(out: Path, files) -> list[Path]:
    if files:
        return [Path(f) for f in files]
    return sorted((out / "candidates").glob("*.json"))


def cmd_ensemble(cfg: RunConfig | None, out: Path, files=None, theta=None, votes=None) -> int:
    paths = _candidate_files(out, files)
    if not paths:
        raise ConfigError(f"no candidate files found under {out / 'candidates'}")
    sets = [CandidateSet.from_dict(json.loads(p.read_text(encoding="utf-8"))) for p in paths]
    params = AlignmentParams(
        theta=theta if theta is not None else (cfg.theta if cfg else AlignmentParams().theta),
        vote_threshold=votes if votes is not None else (cfg.vote_threshold if cfg else None),
    )
    fsm = ensemble(
        sets,
        params,
        protocol=cfg.profile.protocol if cfg else "",
        spec_version=cfg.spec_version if cfg else "",
        denylist=cfg.denylist if cfg else DEFAULT_DENYLIST,
    )
    _write(out / "fsm.json", export_json(fsm))
    _write(out / "fsm.dot", export_dot(fsm))
    print(f"{len(fsm.states)} states, {len(fsm.transitions)} transitions")
    return EXIT_OK


def cmd_eval(cfg: RunConfig | None, out: Path, fsm_path=None, truth_path=None, theta=None) -> int:
    fsm_path = Path(fsm_path) if fsm_path else out / "fsm.json"
    if truth_path is None:
        if cfg is None or cfg.ground_truth is None:
            raise ConfigError("no ground truth given (use --truth or set ground_truth in the config)")
        truth_path = cfg.ground_truth
    layer_tags = cfg.profile.layer_tags if cfg and cfg.profile.layer_tags else None
    pred = load_json(Path(fsm_path).read_bytes())
    truth = load_ground_truth(Path(truth_path).read_bytes(), layer_tags)
    theta = theta if theta is not None else (cfg.theta if cfg else AlignmentParams().theta)

    report = evaluate(pred, truth, theta)
    states = state_score(pred.states, truth.states)
    payload = {"theta": theta, "transitions": report.to_dict(), "states": states.to_dict()}
    label = f"{truth.protocol or pred.protocol or 'FSM'}-all"
    table = report.format_table(label)
    _write(out / "report.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write(out / "report.txt", table + "\n")
    print(table)
    print(f"states: P={states.precision:.4f} R={states.recall:.4f} F1={states.f1:.4f}")
    return EXIT_OK


def cmd_cost(out: Path, log_path=None) -> int:
    path = Path(log_path) if log_path else out / "exchanges.jsonl"
    if not path.is_file():
        raise ConfigError(f"exchange log not found: {path}")
    table = format_cost_table(cost_report(read_exchange_log(path)))
    _write(out / "cost.txt", table + "\n")
    print(table)
    return EXIT_OK


def cmd_run(cfg: RunConfig, out: Path, replay: str | None = None) -> int:
    code = cmd_extract(cfg, out, replay)
    if code != EXIT_OK:
        return code
    cmd_ensemble(cfg, out)
    if cfg.ground_truth is not None:
        cmd_eval(cfg, out)
    cmd_cost(out)
    return EXIT_OK


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (JSON)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--theta", type=float, help="span overlap threshold")
    common.add_argument("--votes", type=int, help="votes needed to keep a transition")
    common.add_argument("--max-words", type=int, dest="max_words", help="window size cap")
    common.add_argument("--dump", action="store_true", help="write intermediate artifacts")
    common.add_argument("--replay", help="serve model responses from this fixture directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="specfsm", description="Extract protocol state machines from specifications.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("segment", parents=[common], help="clean and segment the document")
    sub.add_parser("extract", parents=[common], help="query providers for candidates")
    p = sub.add_parser("ensemble", parents=[common], help="align and vote candidates into fsm.json")
    p.add_argument("candidates", nargs="*", help="candidate files (default: <out>/candidates/*.json)")
    p = sub.add_parser("eval", parents=[common], help="score fsm.json against ground truth")
    p.add_argument("--fsm", help="predicted FSM (default: <out>/fsm.json)")
    p.add_argument("--truth", help="ground-truth FSM (default: from config)")
    p = sub.add_parser("cost", parents=[common], help="token and time summary per provider")
    p.add_argument("--log", help="exchange log (default: <out>/exchanges.jsonl)")
    sub.add_parser("run", parents=[common], help="extract, ensemble, eval and cost in one go")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "segment":
            cfg = _load(args)
            return cmd_segment(cfg, _out(cfg, args))
        if args.command == "extract":
            cfg = _load(args)
            return cmd_extract(cfg, _out(cfg, args), args.replay)
        if args.command == "ensemble":
            cfg = _load(args, required=False)
            return cmd_ensemble(cfg, _out(cfg, args), args.candidates, args.theta, args.votes)
        if args.command == "eval":
            cfg = _load(args, required=False)
            return cmd_eval(cfg, _out(cfg, args), args.fsm, args.truth, args.theta)
        if args.command == "cost":
            cfg = _load(args, required=False)
            return cmd_cost(_out(cfg, args), args.log)
        cfg = _load(args)
        return cmd_run(cfg, _out(cfg, args), args.replay)
    except (ConfigError, EmptyAfterClean, NoSectionsFound, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
