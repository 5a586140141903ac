"""Command line entry point: ``aisearch <command> ...``.

Failures print one JSON object ``{"error": ..., "type": ...}`` to stderr and exit with status 1
(2 for argument errors, as argparse does).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

from . import ranking, rewards
from .core import Document, Query, RankedList
from .gateway import Gateway
from .service import DATA, Runtime, ServiceConfig, serve
from .tools.clustering import cluster_registry
from .tools.draft import refine_documentation
from .tools.registry import ToolManifest


class CliError(Exception):
    pass


def _config(args, **overrides) -> ServiceConfig:
    return ServiceConfig.load(args.config, trace_dir=args.trace_dir, cache_file=args.cache_file,
                              registry=getattr(args, "registry", None), **overrides)


def _out(obj: Any) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


# -- commands ---------------------------------------------------------------------

def cmd_search(args) -> None:
    rt = Runtime(_config(args))
    context = [tuple(t) for t in json.loads(args.context)] if args.context else []
    result = rt.search(Query(args.text, context=tuple(context)))
    if args.json:
        _out(result)
    else:
        print(result["answer_text"])
        print(f"# config={result['config_used']} trace_id={result['trace_id']} cached={result['cached']}",
              file=sys.stderr)


def cmd_tools_list(args) -> None:
    rt = Runtime(_config(args, toolkits_k=0))
    for m in rt.registry.manifests():
        print(f"{m.tool_id}\t{m.semantic_role}\t{m.name}")


def cmd_tools_register(args) -> None:
    cfg = _config(args, toolkits_k=0)
    rt = Runtime(cfg)
    raw = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    tool_id = rt.registry.register(ToolManifest.from_wire(raw))
    rt.registry.save(cfg.registry)
    _out({"tool_id": tool_id, "registry": cfg.registry})


def cmd_tools_refine(args) -> None:
    cfg = _config(args, toolkits_k=0)
    rt = Runtime(cfg)
    result = refine_documentation(rt.registry, Gateway(rt.provider), args.tool_id, max_iters=args.max_iters,
                                  phi=args.phi, tau=args.tau, prompts=rt.prompts)
    if args.save:
        rt.registry.save(cfg.registry)
    _out({"tool_id": args.tool_id, "revision": result.doc.revision, "documentation": result.doc.current,
          "deltas": result.deltas, "converged": result.converged,
          "explorations": [asdict(r) for r in result.records], "errors": result.errors})


def cmd_tools_cluster(args) -> None:
    rt = Runtime(_config(args, toolkits_k=0))
    kits = cluster_registry(rt.registry, Gateway(rt.provider), k=args.k, seed=args.seed)
    for kit in kits:
        print(f"{kit.toolkit_id}\t{kit.label}\t{','.join(sorted(kit.member_tool_ids))}")


def _load_docs(path: str) -> tuple[list[Document], dict[str, float]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    docs = [Document(**{k: v for k, v in d.items() if k != "gain"}) for d in raw["documents"]]
    gains = {d["id"]: float(d["gain"]) for d in raw["documents"] if "gain" in d}
    return docs, gains


def cmd_rank_run(args) -> None:
    docs, gains = _load_docs(args.docs)
    if args.qrels:
        gains = {k: float(v) for k, v in json.loads(Path(args.qrels).read_text(encoding="utf-8")).items()}
    if not gains:
        raise CliError("no relevance available: pass --qrels or include 'gain' in the documents")
    oracle = ranking.MockOracle(gains)
    if args.method == "sliding":
        ranked = ranking.sliding_window_rank(docs, args.w, args.s, oracle, args.query)
    elif args.method == "tournament":
        cfg = ranking.TournamentConfig(args.groups, args.advance, args.rounds, args.seed)
        ranked = ranking.tournament_rank(docs, cfg, oracle, args.query)
    elif args.method == "pairwise":
        ranked = ranking.pairwise_rank(args.query, docs, oracle, args.strategy)
    else:
        scores = ranking.pointwise_scores(args.query, docs, oracle)
        order = sorted(range(len(docs)), key=lambda i: (-scores[docs[i].id], i))
        ranked = RankedList(tuple(docs[i].id for i in order), "pointwise", scores)
    sys.stdout.write(ranked.to_tsv(args.query_id))
    if args.ndcg:
        print(f"# ndcg@{args.ndcg}={ranking.ndcg(ranked, gains, args.ndcg):.6f}", file=sys.stderr)


REWARD_COLUMNS = ["episode", "group", "answer", "feedback", "format", "execution", "total", "advantage"]


def cmd_rewards_eval(args) -> None:
    rows = []
    with open(args.episodes, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ep = json.loads(line)
                br = rewards.planner_reward(bool(ep["correct"]), ep.get("feedback"),
                                            bool(ep.get("well_formatted", True)), ep.get("exec_scores", []))
            except (KeyError, ValueError, TypeError) as exc:
                raise CliError(f"line {n}: {exc}") from exc
            rows.append({"episode": ep.get("id", str(n)), "group": ep.get("group", ""), **br.to_row()})
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(str(row["group"]), []).append(row)
    for members in groups.values():
        for row, adv in zip(members, rewards.grpo_advantages([r["total"] for r in members])):
            row["advantage"] = adv
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=REWARD_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_cache_stats(args) -> None:
    cfg = _config(args, toolkits_k=0)
    rt = Runtime(cfg)
    _out({**rt.cache.stats(), "file": cfg.cache_file, "tau": cfg.cache_tau, "capacity": cfg.cache_capacity})


def cmd_trace_show(args) -> None:
    cfg = _config(args, toolkits_k=0)
    if not cfg.trace_dir:
        raise CliError("trace show needs --trace-dir or trace_dir in the service config")
    rt = Runtime(cfg)
    if args.trace_id not in rt.store:
        raise CliError(f"unknown trace {args.trace_id}")
    for event in rt.store.get(args.trace_id):
        print(json.dumps(event, sort_keys=True, ensure_ascii=False, default=str))


def cmd_serve(args) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    serve(_config(args, host=args.host, port=args.port))


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aisearch", description="Multi-agent search pipeline")
    p.add_argument("--config", help="service config JSON (default: $SERVICE_CONFIG or bundled fixtures)")
    p.add_argument("--trace-dir", help="directory for per-day JSONL traces")
    p.add_argument("--cache-file", help="persistent semantic cache file")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run one episode")
    s.add_argument("text")
    s.add_argument("--context", help='JSON list of [query, answer] turns')
    s.add_argument("--json", action="store_true", help="print the full response object")
    s.set_defaults(func=cmd_search)

    tools = sub.add_parser("tools", help="tool registry administration").add_subparsers(dest="tools_cmd",
                                                                                         required=True)
    t = tools.add_parser("list")
    t.add_argument("--registry")
    t.set_defaults(func=cmd_tools_list)
    t = tools.add_parser("register")
    t.add_argument("manifest", help="manifest JSON file")
    t.add_argument("--registry", help="registry file to update")
    t.set_defaults(func=cmd_tools_register)
    t = tools.add_parser("refine")
    t.add_argument("tool_id")
    t.add_argument("--registry")
    t.add_argument("--max-iters", type=int, default=8)
    t.add_argument("--phi", type=float, default=0.9)
    t.add_argument("--tau", type=float, default=0.9)
    t.add_argument("--save", action="store_true", help="write the refined documentation back")
    t.set_defaults(func=cmd_tools_refine)
    t = tools.add_parser("cluster")
    t.add_argument("--registry")
    t.add_argument("--k", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_tools_cluster)

    rank = sub.add_parser("rank", help="ranking lab").add_subparsers(dest="rank_cmd", required=True)
    r = rank.add_parser("run", help="rank a document file and print a TSV run")
    r.add_argument("--method", choices=["sliding", "tournament", "pairwise", "pointwise"], required=True)
    r.add_argument("--docs", default=str(DATA / "docs_100.json"))
    r.add_argument("--qrels", help="JSON id -> gain (default: 'gain' fields of the documents)")
    r.add_argument("--query", default="")
    r.add_argument("--query-id", default="q0")
    r.add_argument("--w", type=int, default=20)
    r.add_argument("--s", type=int, default=10)
    r.add_argument("--groups", type=int, default=10, help="tournament group size")
    r.add_argument("--advance", type=int, default=5)
    r.add_argument("--rounds", type=int, default=3)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--strategy", default="AllPairs", choices=[s.value for s in ranking.PairwiseStrategy])
    r.add_argument("--ndcg", type=int, metavar="K", help="also report NDCG@K on stderr")
    r.set_defaults(func=cmd_rank_run)

    rw = sub.add_parser("rewards", help="reward arithmetic").add_subparsers(dest="rewards_cmd", required=True)
    e = rw.add_parser("eval", help="JSONL episodes in, CSV reward breakdown out")
    e.add_argument("episodes")
    e.add_argument("--out")
    e.set_defaults(func=cmd_rewards_eval)

    c = sub.add_parser("cache").add_subparsers(dest="cache_cmd", required=True)
    c.add_parser("stats").set_defaults(func=cmd_cache_stats)

    tr = sub.add_parser("trace").add_subparsers(dest="trace_cmd", required=True)
    x = tr.add_parser("show")
    x.add_argument("trace_id")
    x.set_defaults(func=cmd_trace_show)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host")
    sv.add_argument("--port", type=int)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes one machine-readable line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
