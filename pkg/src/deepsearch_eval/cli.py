"""``dseval`` operator CLI: ingest, build, serve, eval, score, report, sweep.

Exit codes: 0 ok, 2 input error, 3 runtime or bind error, 4 endpoint
failure. Every failure prints one JSON error line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import signal
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .agents.evidenceloop import LoopConfig, run_evidenceloop
from .agents.react import DEFAULT_CONTEXT_TOKENS, run_react
from .agents.scripted import run_ground_truth, run_refuse_all
from .chainbuilder import build_question, dataset_stats, format_stats, read_records, write_records
from .corpus import dump_corpus, load_corpus
from .errors import DeepSearchError, EndpointError, SandboxError
from .metrics import TABLE_COLUMNS, ScoreReport, classify_profile, format_table, score_traces
from .mocks import make_endpoint
from .sandbox import DEFAULT_BUDGET, FORMAT_VERSION, LocalSession, Sandbox, Trace, canonical_json

log = logging.getLogger("dseval")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_ENDPOINT = 0, 2, 3, 4
AGENTS = ("scripted", "refuse", "react", "evidenceloop")
SWEEP_AXES = ("context", "breadth", "iteration")


class CliError(Exception):
    def __init__(self, exit_code: int, code: str, message: str):
        super().__init__(message)
        self.exit_code = exit_code
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_INPUT, "usage", f"{self.prog}: {message}")


def _emit_error(exit_code: int, code: str, message: str) -> None:
    line = {"format_version": FORMAT_VERSION, "error": {"code": code, "message": message, "exit": exit_code}}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _existing(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(EXIT_INPUT, "missing_input", f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_INPUT, "missing_input", f"{what} not found: {path}")
    return p


def _load_store(path):
    store, _ = load_corpus(_existing(path, "corpus/store file"))
    return store


def _load_records(path):
    try:
        return read_records(_existing(path, "records file"))
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, "bad_records", f"cannot parse records: {exc}") from exc


def _endpoint(spec, model, store=None, **params):
    if not spec:
        return None
    try:
        return make_endpoint(spec, model or "", store, **params)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, "bad_endpoint", str(exc)) from exc


class _Counting:
    """Proxy that counts endpoint successes and failures."""

    def __init__(self, inner):
        self.inner = inner
        self.ok = 0
        self.failed = 0

    def chat(self, messages, **overrides):
        try:
            out = self.inner.chat(messages, **overrides)
        except EndpointError:
            self.failed += 1
            raise
        self.ok += 1
        return out

    def __getattr__(self, name):
        return getattr(self.inner, name)


# ---------------------------------------------------------------- ingest

def cmd_ingest(args) -> int:
    store, report = load_corpus(_existing(args.corpus, "corpus file"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_corpus(store, out)
    _write_json(out.with_name(out.name + ".report.json"), report.to_dict())
    print(report.summary())
    for dup in report.duplicates:
        print(f"warning: duplicate id {dup!r} rejected", file=sys.stderr)
    for bad in report.malformed:
        print(f"warning: malformed record {bad['line']} skipped: {bad['reason']}", file=sys.stderr)
    for d in report.dangling:
        print(f"warning: dangling link {d['source']} -> {d['target']}", file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------- build

def _read_seeds(path: Path) -> list[dict]:
    seeds = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                seed = json.loads(line)
            except ValueError as exc:
                raise CliError(EXIT_INPUT, "bad_seed", f"seed line {i}: {exc}") from exc
            if not isinstance(seed, dict) or not all(isinstance(seed.get(k), str) for k in ("v0", "question", "vn")):
                raise CliError(EXIT_INPUT, "bad_seed", f"seed line {i}: needs string fields v0, question, vn")
            seeds.append(seed)
    return seeds


def cmd_build(args) -> int:
    store = _load_store(args.store)
    seeds = _read_seeds(_existing(args.seed_pairs, "seed-pairs file"))
    oracle = _endpoint(args.oracle_endpoint, args.oracle_model, store)
    if oracle is None:
        log.warning("no oracle endpoint: records are written unverified")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outcomes, accepted = [], []
    halted = False
    for seed in seeds:
        if halted:
            outcomes.append({"seed": seed, "status": "not_attempted", "reason": "build halted"})
            continue
        result = build_question(store, seed, oracle, args.max_hops)
        outcomes.append(result.to_dict())
        if result.status == "incomplete":
            halted = True
        elif result.status in ("accepted", "unverified"):
            accepted.append(result.record)
    write_records(accepted, out)
    with open(out.with_name(out.name + ".status.jsonl"), "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps({"format_version": FORMAT_VERSION, **o}, sort_keys=True) + "\n")
    stats = dataset_stats(accepted)
    _write_json(out.with_name(out.name + ".stats.json"), stats)
    print(format_stats(stats), end="")
    counts: dict[str, int] = {}
    for o in outcomes:
        counts[o["status"]] = counts.get(o["status"], 0) + 1
    print("status: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    if halted:
        raise CliError(EXIT_ENDPOINT, "oracle_unreachable", "oracle endpoint failed; build halted, statuses preserved")
    return EXIT_OK


# ----------------------------------------------------------------- serve

def _parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise CliError(EXIT_INPUT, "bad_bind", f"--bind must be host:port, got {bind!r}") from None


def cmd_serve(args) -> int:
    from .server import start_server

    store = _load_store(args.store)
    records = _load_records(args.records)
    host, port = _parse_bind(args.bind)
    trace_dir = Path(args.trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    sandbox = Sandbox(store, records, args.budget, args.allow_unverified, trace_dir)
    try:
        server = start_server(sandbox, host, port)
    except OSError as exc:
        raise CliError(EXIT_RUNTIME, "bind_failed", f"cannot bind {args.bind}: {exc}") from exc
    print(json.dumps({"format_version": FORMAT_VERSION, "listening": server.url}), flush=True)

    def _stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _stop)
    try:
        signal.pause() if hasattr(signal, "pause") else input()
    except KeyboardInterrupt:
        pass
    finally:
        flushed = server.close()
        print(json.dumps({"format_version": FORMAT_VERSION, "shutdown": True, "flushed": len(flushed)}), flush=True)
    return EXIT_OK


# ------------------------------------------------------------------ eval

@dataclass
class RunConfig:
    records: str
    store: str | None = None
    serve_addr: str | None = None
    agent: str = "scripted"
    endpoint: str | None = None
    model: str | None = None
    verifier_endpoint: str | None = None
    budget: int = DEFAULT_BUDGET
    context_tokens: int = DEFAULT_CONTEXT_TOKENS
    breadth: int = 3
    iterations: int = 3
    solver_budget: int | None = None
    n: int | None = None
    parallel: int = 1
    seed: int = 0
    allow_unverified: bool = False
    out: str = "run"
    label: str = ""
    endpoint_config: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(
            records=args.records, store=args.store, serve_addr=args.serve_addr, agent=args.agent,
            endpoint=args.endpoint or os.getenv("DS_AGENT_ENDPOINT"),
            model=args.model or os.getenv("DS_AGENT_MODEL"),
            verifier_endpoint=args.verifier_endpoint or os.getenv("DS_VERIFIER_ENDPOINT"),
            budget=args.budget, context_tokens=args.context_tokens, breadth=args.breadth,
            iterations=args.iterations, solver_budget=args.solver_budget, n=args.n,
            parallel=args.parallel, seed=args.seed, allow_unverified=args.allow_unverified,
            out=args.out, label=args.label or args.agent,
        )

    def loop_config(self) -> LoopConfig:
        try:
            return LoopConfig(self.breadth, self.iterations, self.solver_budget, self.budget, concurrent=True)
        except ValueError as exc:
            raise CliError(EXIT_INPUT, "bad_loop_config", str(exc)) from exc


def _select(records, n, seed):
    if n is None or n >= len(records):
        return list(records)
    picked = random.Random(seed).sample(range(len(records)), n)
    return [records[i] for i in sorted(picked)]


def run_eval(cfg: RunConfig) -> dict:
    """Run one agent over the selected records; returns the manifest."""
    records = _load_records(cfg.records)
    if not records:
        raise CliError(EXIT_INPUT, "no_records", "records file is empty")
    chosen = _select(records, cfg.n, cfg.seed)
    store = None
    if cfg.serve_addr is None:
        store = _load_store(cfg.store)
    endpoint = verifier = None
    if cfg.agent in ("react", "evidenceloop"):
        if not cfg.endpoint:
            raise CliError(EXIT_INPUT, "missing_endpoint", f"agent {cfg.agent} needs --endpoint or DS_AGENT_ENDPOINT")
        endpoint = _Counting(_endpoint(cfg.endpoint, cfg.model, store))
        if cfg.verifier_endpoint:
            verifier = _Counting(_endpoint(cfg.verifier_endpoint, cfg.model, store))
        cfg.endpoint_config = endpoint.config() if hasattr(endpoint.inner, "config") else {}
    loop = cfg.loop_config() if cfg.agent == "evidenceloop" else None

    out = Path(cfg.out)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    sandbox = None
    if store is not None:
        sandbox = Sandbox(store, records, cfg.budget, cfg.allow_unverified)

    def session_for(record):
        if sandbox is not None:
            return LocalSession(sandbox.start(record.id))
        from .server import RemoteSession

        return RemoteSession(cfg.serve_addr, record.id)

    def one(record) -> Trace:
        session = session_for(record)
        if cfg.agent == "scripted":
            return run_ground_truth(session, record)
        if cfg.agent == "refuse":
            return run_refuse_all(session)
        if cfg.agent == "react":
            return run_react(endpoint, session, max_calls=cfg.budget, context_tokens=cfg.context_tokens)
        return run_evidenceloop(endpoint, session, loop, verifier).trace

    try:
        with ThreadPoolExecutor(max_workers=max(1, cfg.parallel)) as pool:
            traces = list(pool.map(one, chosen))
    except SandboxError as exc:
        code = EXIT_INPUT if exc.code in ("unverified", "unknown_question") else EXIT_RUNTIME
        raise CliError(code, exc.code, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_RUNTIME, "sandbox_unreachable", str(exc)) from exc

    for record, trace in zip(chosen, traces):
        trace.write(trace_dir / f"{record.id}.jsonl")
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": {k: v for k, v in asdict(cfg).items()},
        "loop_config": asdict(loop) | {"solver_budget": loop.budget} if loop else None,
        "questions": [r.id for r in chosen],
        "endpoint_calls": {"ok": endpoint.ok, "failed": endpoint.failed} if endpoint else None,
    }
    _write_json(out / "manifest.json", manifest)
    transcripts = getattr(endpoint.inner, "transcripts", None) if endpoint else None
    if transcripts:
        with open(out / "transcripts.jsonl", "w", encoding="utf-8") as fh:
            for t in transcripts:
                fh.write(json.dumps(t, ensure_ascii=False, default=str) + "\n")
    if endpoint is not None and endpoint.failed and not endpoint.ok:
        raise CliError(EXIT_ENDPOINT, "endpoint_unreachable", f"agent endpoint failed on every call ({endpoint.failed})")
    return manifest


def cmd_eval(args) -> int:
    cfg = RunConfig.from_args(args)
    if cfg.serve_addr is None and not cfg.store:
        raise CliError(EXIT_INPUT, "missing_input", "in-process eval needs --store (or use --serve-addr)")
    manifest = run_eval(cfg)
    print(f"{len(manifest['questions'])} trace(s) written to {Path(cfg.out) / 'traces'}")
    return EXIT_OK


# ----------------------------------------------------------------- score

def _read_traces(path: Path) -> list[Trace]:
    files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
    if not files:
        raise CliError(EXIT_INPUT, "no_traces", f"no trace files in {path}")
    traces = []
    for f in files:
        try:
            traces.append(Trace.read(f))
        except (ValueError, KeyError, StopIteration) as exc:
            raise CliError(EXIT_INPUT, "bad_trace", f"{f}: {exc}") from exc
    return traces


def score_run(traces_path, records_path, prober=None, judge=None, degradation=None, label="", config=None) -> dict:
    traces = _read_traces(_existing(traces_path, "traces"))
    records = {r.id: r for r in _load_records(records_path)}
    missing = sorted({t.question_id for t in traces} - set(records))
    if missing:
        raise CliError(EXIT_INPUT, "unknown_question", f"traces reference unknown records: {', '.join(missing)}")
    counted = [_Counting(e) if e is not None else None for e in (prober, judge, degradation)]
    try:
        report, outcomes, excluded = score_traces(traces, records, *counted)
    except DeepSearchError as exc:
        if counted[0] is not None and counted[0].failed:
            raise CliError(EXIT_ENDPOINT, "prober_unreachable", "prober failed on every instance") from exc
        raise
    return {
        "format_version": FORMAT_VERSION,
        "label": label,
        "config": config or {},
        "profile": classify_profile(report),
        "report": report.to_dict(),
        "instances": [o.to_dict() for o in outcomes],
        "excluded": [o.question_id for o in excluded],
    }


def cmd_score(args) -> int:
    store = _load_store(args.store) if args.store else None
    prober = _endpoint(args.prober_endpoint or os.getenv("DS_PROBER_ENDPOINT"), args.model, store)
    judge = _endpoint(args.judge_endpoint or os.getenv("DS_JUDGE_ENDPOINT"), args.model, store)
    degr = _endpoint(args.degradation_endpoint or os.getenv("DS_DEGRADATION_ENDPOINT"), args.model, store)
    doc = score_run(args.traces, args.records, prober, judge, degr, args.label or Path(args.traces).name)
    _write_json(Path(args.out), doc)
    report = ScoreReport.from_dict(doc["report"])
    print(format_table([(doc["label"], report)]), end="")
    for flag in report.flags:
        print(f"note: {flag}")
    return EXIT_OK


# ---------------------------------------------------------------- report

def _load_score_docs(paths: Sequence[str]) -> list[dict]:
    docs = []
    for p in paths:
        try:
            data = json.loads(_existing(p, "score file").read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CliError(EXIT_INPUT, "bad_scores", f"{p}: {exc}") from exc
        if "rows" in data:  # sweep file
            docs.extend(data["rows"])
        elif "report" in data:
            docs.append(data)
        else:
            raise CliError(EXIT_INPUT, "bad_scores", f"{p}: not a score or sweep file")
    return docs


def plot_series(docs: Sequence[dict]) -> dict:
    """One (x, y) series per table column; x is the config label of each run."""
    series = []
    for key, title in TABLE_COLUMNS:
        points = [{"x": d.get("label", ""), "y": d["report"].get(key)} for d in docs]
        series.append({"metric": key, "title": title, "points": points})
    axis = next((d["config"].get("axis") for d in docs if d.get("config", {}).get("axis")), None)
    return {"format_version": FORMAT_VERSION, "x_axis": axis or "run", "series": series}


def cmd_report(args) -> int:
    docs = _load_score_docs(args.scores)
    if args.format == "plotdata":
        print(json.dumps(plot_series(docs), indent=2, sort_keys=True))
        return EXIT_OK
    rows = [(d.get("label") or f"run{i}", ScoreReport.from_dict(d["report"])) for i, d in enumerate(docs)]
    rows.sort(key=lambda r: -r[1].pass_at_1)
    print(format_table(rows), end="")
    for label, rep in rows:
        print(f"{label}: {classify_profile(rep)}")
    return EXIT_OK


# ----------------------------------------------------------------- sweep

def _sweep_value(axis: str, raw: str) -> int:
    text = raw.strip().upper()
    mult = 1
    if axis == "context" and text.endswith("K"):
        text, mult = text[:-1], 1000
    try:
        value = int(text) * mult
    except ValueError:
        raise CliError(EXIT_INPUT, "usage", f"bad --values entry {raw!r} for axis {axis}") from None
    if value < 1:
        raise CliError(EXIT_INPUT, "usage", f"--values entries must be positive, got {raw!r}")
    return value


def cmd_sweep(args) -> int:
    base = RunConfig.from_args(args)
    if base.serve_addr is None and not base.store:
        raise CliError(EXIT_INPUT, "missing_input", "in-process sweep needs --store (or use --serve-addr)")
    store = _load_store(args.store) if args.store else None
    prober = _endpoint(args.prober_endpoint or os.getenv("DS_PROBER_ENDPOINT"), args.model, store)
    rows = []
    for raw in args.values:
        value = _sweep_value(args.axis, raw)
        field_name = {"context": "context_tokens", "breadth": "breadth", "iteration": "iterations"}[args.axis]
        label = f"{args.axis}={raw}"
        cfg = RunConfig(**{**asdict(base), field_name: value, "out": str(Path(args.out) / label), "label": label})
        run_eval(cfg)
        doc = score_run(Path(cfg.out) / "traces", cfg.records, prober, label=label,
                        config={"axis": args.axis, "value": value, field_name: value})
        _write_json(Path(cfg.out) / "scores.json", doc)
        rows.append(doc)
    _write_json(Path(args.out) / "sweep.json", {"format_version": FORMAT_VERSION, "axis": args.axis, "rows": rows})
    print(format_table([(d["label"], ScoreReport.from_dict(d["report"])) for d in rows]), end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_eval_args(p):
    p.add_argument("--records", required=True)
    p.add_argument("--store", help="corpus or ingested store (in-process mode)")
    p.add_argument("--serve-addr", help="base URL of a running sandbox server")
    p.add_argument("--in-process", action="store_true", help="run against an in-process sandbox (default)")
    p.add_argument("--agent", choices=AGENTS, default="scripted")
    p.add_argument("--endpoint", help="agent endpoint URL or mock:<name> (env DS_AGENT_ENDPOINT)")
    p.add_argument("--model", help="model name (env DS_AGENT_MODEL)")
    p.add_argument("--verifier-endpoint", help="EvidenceLoop verifier (env DS_VERIFIER_ENDPOINT)")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="tool calls per episode")
    p.add_argument("--context-tokens", type=int, default=DEFAULT_CONTEXT_TOKENS)
    p.add_argument("--breadth", type=int, default=3, help="EvidenceLoop solvers per round")
    p.add_argument("--iterations", type=int, default=3, help="EvidenceLoop rounds")
    p.add_argument("--solver-budget", type=int, help="actions per solver (default: even split)")
    p.add_argument("--n", type=int, help="number of questions (seeded sample)")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-unverified", action="store_true")
    p.add_argument("--label", default="")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dseval", description="Hint-free multi-hop deep search evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="ingest a page-record JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="build and verify question records from seed triples")
    p.add_argument("--store", required=True)
    p.add_argument("--seed-pairs", required=True)
    p.add_argument("--oracle-endpoint", default=os.getenv("DS_ORACLE_ENDPOINT"))
    p.add_argument("--oracle-model", default=os.getenv("DS_ORACLE_MODEL"))
    p.add_argument("--max-hops", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("serve", help="serve the sandbox over HTTP")
    p.add_argument("--store", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--bind", default="127.0.0.1:8700")
    p.add_argument("--trace-dir", default="traces")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--allow-unverified", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="run an agent over the records")
    _add_eval_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score a directory of traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--store", help="needed only for mock:chain endpoints")
    p.add_argument("--prober-endpoint", help="env DS_PROBER_ENDPOINT; omit for search-only sufficiency")
    p.add_argument("--judge-endpoint", help="env DS_JUDGE_ENDPOINT; omit for alias matching")
    p.add_argument("--degradation-endpoint", help="env DS_DEGRADATION_ENDPOINT")
    p.add_argument("--model")
    p.add_argument("--label", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="merge score files into a table or plot series")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--format", choices=("table", "plotdata"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="eval and score across one config axis")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--prober-endpoint")
    _add_eval_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.exit_code, exc.code, str(exc))
        return exc.exit_code
    except EndpointError as exc:
        _emit_error(EXIT_ENDPOINT, "endpoint_failure", str(exc))
        return EXIT_ENDPOINT
    except (OSError, ValueError) as exc:
        _emit_error(EXIT_INPUT, "input_error", str(exc))
        return EXIT_INPUT
    except DeepSearchError as exc:
        _emit_error(EXIT_RUNTIME, type(exc).__name__, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
