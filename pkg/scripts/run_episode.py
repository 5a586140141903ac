"""Run the showcase queries through the full pipeline against the bundled fixtures and print each episode."""

import argparse
import json

from aisearch.core import Query
from aisearch.executor import layers
from aisearch.service import Runtime, ServiceConfig

SHOWCASE = [
    "What is the name of Emperor Han-Wu?",
    "Is Beijing's weather good for going out today?",
    "Who is elder, Emperor Han-Wu or Emperor Caesar, by how many years?",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("queries", nargs="*", default=SHOWCASE)
    ap.add_argument("--config", help="service config JSON")
    ap.add_argument("--events", action="store_true", help="also dump the trace events")
    args = ap.parse_args()
    rt = Runtime(ServiceConfig.load(args.config))
    for text in args.queries:
        ep = rt.orchestrator().run_episode(Query(text))
        print(f"query:  {text}")
        print(f"config: {ep.config.value}")
        if ep.dag is not None:
            print(f"layers: {layers(ep.dag)}")
            for vid, v in ep.dag.vertices.items():
                print(f"  {vid} [{v.status.value}] {v.tool or 'no tool'}: {v.description}")
        print(f"answer: {ep.answer.text}")
        if args.events:
            for e in rt.store.get(ep.trace_id):
                print("   ", json.dumps(e, ensure_ascii=False, default=str))
        print()


if __name__ == "__main__":
    main()
