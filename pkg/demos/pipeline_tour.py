"""A tour of the workflow engine with a toy word-count recipe.

    python demos/pipeline_tour.py

Shows activity and recipe declaration, DAG serialization, both local
executors, incremental re-runs and the generated command-line interface.
"""

from __future__ import annotations

import argparse
import json
import tempfile
import time
from collections import Counter
from pathlib import Path

from skillnlu.pipeline import (
    ParallelExecutor,
    SequentialExecutor,
    activity,
    capture_recipe,
    execute,
    generate_cli,
    recipe,
    serialize_dag,
)


@activity(inputs="text", outputs="counts")
def count_words(text, counts, lowercase: bool = True):
    words = text.fetch_text().split()
    counts.put_json(Counter(w.lower() if lowercase else w for w in words))


@activity(inputs=("left", "right"), outputs="merged")
def merge_counts(left, right, merged):
    total = Counter(left.fetch_json()) + Counter(right.fetch_json())
    merged.put_json(dict(total.most_common()))


@activity(inputs="counts", outputs="report")
def slow_report(counts, report, delay_ms: int = 300):
    time.sleep(delay_ms / 1000)
    top = list(counts.fetch_json().items())[:3]
    report.put(", ".join(f"{w}={n}" for w, n in top))


@recipe
def word_count(first: str, second: str, delay_ms: int = 300, executor=None):
    """Count words in two files and report the most common ones."""
    a, b = executor.new_artifact(first, name="first"), executor.new_artifact(second, name="second")
    ca, cb = executor.new_artifact(name="counts_a"), executor.new_artifact(name="counts_b")
    merged, r1, r2 = (executor.new_artifact(name=n) for n in ("merged", "report_a", "report_b"))
    count_words(a, ca)
    count_words(b, cb)
    merge_counts(ca, cb, merged)
    slow_report(ca, r1, delay_ms=delay_ms)
    slow_report(cb, r2, delay_ms=delay_ms)
    executor.output(merged, r1, r2)


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "a.txt").write_text("the cat sat on the mat the end")
        (tmp / "b.txt").write_text("The dog ate the cat food")
        params = {"first": str(tmp / "a.txt"), "second": str(tmp / "b.txt")}

        dag = capture_recipe(word_count)
        print("topological order:", dag.topological_order())
        print("serialized DAG is", len(serialize_dag(dag)), "bytes of JSON\n")

        # incremental runs stamp their outputs so a later incremental run can reuse them
        seq = execute(dag, SequentialExecutor(work_dir=tmp / "seq", incremental=True), params=params)
        par = execute(dag, ParallelExecutor(4, work_dir=tmp / "par"), params=params)
        print(seq.summary(), "\n")
        print(par.summary(), "\n")
        print("same outputs:", seq.digests == par.digests)
        print("merged counts:", json.loads(seq.fetch("merged")))

        again = execute(dag, SequentialExecutor(work_dir=tmp / "seq", incremental=True), params=params)
        print("\nincremental re-run statuses:", {n: r.status for n, r in again.nodes.items()})

        spec = generate_cli(word_count)
        print("\ngenerated command:", spec.usage())
        parser = argparse.ArgumentParser(prog="demo")
        spec.add_to(parser.add_subparsers(dest="cmd"))
        ns = parser.parse_args(["word-count", "--first", "x.txt", "--second", "y.txt", "--delay-ms", "5"])
        # values stay strings here; binding the DAG converts them to the declared types
        print("parsed parameters:", spec.split_args(ns)[0])
        bound = capture_recipe(word_count).bind(spec.split_args(ns)[0])
        print("slow_report params after binding:", bound.node("slow_report").params)


if __name__ == "__main__":
    main()
