"""Executors that run a captured DAG and report on it."""

from __future__ import annotations

import hashlib
import json
import logging
import tempfile
import threading
import time
import traceback
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .artifacts import Artifact, ArtifactError, digest_bytes
from .dag import PipelineError, Recipe, RecipeDAG, capture_recipe, get_activity

__all__ = [
    "RetryPolicy",
    "NodeReport",
    "RunReport",
    "Executor",
    "SequentialExecutor",
    "ParallelExecutor",
    "RemoteExecutor",
    "make_executor",
    "execute",
    "InputHandle",
    "OutputHandle",
]

log = logging.getLogger("skillnlu.pipeline")

SUCCESS, FAILED, SKIPPED, CACHED, CANCELLED = "success", "failed", "skipped", "cached", "cancelled"


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 0
    backoff: float = 0.0

    def __post_init__(self):
        if self.max_retries < 0 or self.backoff < 0:
            raise ValueError("retry counts and backoff must be >= 0")


@dataclass
class NodeReport:
    node: str
    activity: str
    status: str = "pending"
    wall_time: float = 0.0
    retries: int = 0
    error: str | None = None
    logs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"node": self.node, "activity": self.activity, "status": self.status,
                "wall_time": self.wall_time, "retries": self.retries, "error": self.error}


@dataclass
class RunReport:
    recipe: str
    executor: str
    nodes: dict[str, NodeReport] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    artifacts: dict[str, str] = field(default_factory=dict)  # artifact id -> uri
    digests: dict[str, str] = field(default_factory=dict)  # recipe output id -> sha256
    interrupted: bool = False
    logs: list[str] = field(default_factory=list)
    # bytes of outputs that only existed in the temporary run directory
    retained: dict[str, bytes] = field(default_factory=dict, repr=False)

    def fetch(self, artifact_id: str) -> bytes:
        """Contents of a recipe output, including outputs the executor vended itself."""
        if artifact_id in self.retained:
            return self.retained[artifact_id]
        if artifact_id not in self.digests:
            raise KeyError(f"{artifact_id!r} is not a completed output of this run")
        return Artifact(self.artifacts[artifact_id]).fetch()

    @property
    def ok(self) -> bool:
        return not self.interrupted and all(n.status in (SUCCESS, CACHED) for n in self.nodes.values())

    def status(self, node: str) -> str:
        return self.nodes[node].status

    def summary(self) -> str:
        lines = [f"recipe {self.recipe} [{self.executor}] {'ok' if self.ok else 'FAILED'} in {self.wall_time:.2f}s"]
        for nid in self.order:
            n = self.nodes[nid]
            extra = f" retries={n.retries}" if n.retries else ""
            err = f" error={n.error.splitlines()[0]}" if n.error else ""
            lines.append(f"  {n.status:<9} {nid:<32} {n.wall_time:7.3f}s{extra}{err}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe,
            "executor": self.executor,
            "ok": self.ok,
            "interrupted": self.interrupted,
            "wall_time": self.wall_time,
            "order": self.order,
            "nodes": {k: v.to_dict() for k, v in self.nodes.items()},
            "digests": self.digests,
        }


class InputHandle:
    """Read-only view of an input artifact."""

    def __init__(self, artifact: Artifact):
        self._a = artifact
        self.uri = artifact.uri

    def fetch(self) -> bytes:
        return self._a.fetch()

    def fetch_text(self) -> str:
        return self._a.fetch_text()

    def fetch_json(self):
        return self._a.fetch_json()

    def fetch_object(self):
        return self._a.fetch_object()

    @property
    def path(self):
        return self._a.path

    def __repr__(self) -> str:
        return f"InputHandle({self.uri!r})"


class OutputHandle:
    """Write-once staging buffer; the executor commits it only if the activity succeeds."""

    def __init__(self, artifact: Artifact):
        self._a = artifact
        self.uri = artifact.uri
        self.data: bytes | None = None

    def put(self, data: Any) -> None:
        from .artifacts import encode_payload

        if self.data is not None:
            raise ArtifactError(f"artifact {self.uri} was already written in this execution")
        self.data = encode_payload(data)

    def put_json(self, obj: Any) -> None:
        self.put(json.dumps(obj, sort_keys=True, indent=1).encode("utf-8"))

    def __repr__(self) -> str:
        return f"OutputHandle({self.uri!r})"


def _event(report: RunReport, sink: Callable[[str], None] | None, **fields) -> str:
    fields = {"ts": round(time.time(), 6), "recipe": report.recipe, **fields}
    line = json.dumps(fields, sort_keys=True)
    report.logs.append(line)
    log.info(line)
    if sink is not None:
        sink(line)
    return line


class Executor:
    """Runs a DAG; subclasses decide how many activities run at once."""

    name = "base"
    max_workers = 1

    def __init__(self, retry: RetryPolicy | None = None, work_dir: str | Path | None = None,
                 incremental: bool = False, log_sink: Callable[[str], None] | None = None):
        self.retry = retry or RetryPolicy()
        self.work_dir = Path(work_dir) if work_dir is not None else None
        self.incremental = incremental
        self.log_sink = log_sink
        self._stop = threading.Event()
        self._lock = threading.Lock()

    def shutdown(self) -> None:
        """Stop scheduling new activities; running ones finish and the report is partial."""
        self._stop.set()

    # artifacts vended for intermediates --------------------------------
    def _vend(self, dag: RecipeDAG, run_dir: Path) -> dict[str, Artifact]:
        arts = {}
        for aid, spec in dag.artifacts.items():
            if spec.uri is None:
                arts[aid] = Artifact(f"file://{run_dir / aid}")
            else:
                arts[aid] = Artifact(spec.uri)
        return arts

    def _node_key(self, node, arts) -> str:
        act = get_activity(node.activity)
        doc = {
            "activity": node.activity,
            "version": act.version,
            "params": node.params,
            "inputs": {slot: arts[a].digest() for slot, a in sorted(node.inputs.items())},
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()

    def _run_node(self, node, arts, report: RunReport) -> None:
        nr = report.nodes[node.id]
        act = get_activity(node.activity)
        start = time.perf_counter()
        key = None
        if self.incremental:
            key = self._node_key(node, arts)
            outs = [arts[a] for a in node.outputs.values()]
            if all(o.exists() and o.meta().get("producer_key") == key for o in outs):
                nr.status = CACHED
                nr.wall_time = time.perf_counter() - start
                nr.logs.append(_event(report, self.log_sink, event="cached", node=node.id, activity=node.activity))
                return
        attempt = 0
        while True:
            nr.logs.append(_event(report, self.log_sink, event="start", node=node.id,
                                  activity=node.activity, attempt=attempt))
            t0 = time.perf_counter()
            try:
                ins = {slot: InputHandle(arts[a]) for slot, a in node.inputs.items()}
                outs = {slot: OutputHandle(arts[a]) for slot, a in node.outputs.items()}
                act.invoke(ins, outs, node.params)
                for slot, h in outs.items():
                    if h.data is None:
                        raise PipelineError(f"activity {node.activity!r} did not write output {slot!r}")
                meta = {"producer": node.id, **({"producer_key": key} if key else {})}
                for h in outs.values():
                    h._a.put(h.data, meta)
            except Exception as e:  # noqa: BLE001 - activity code is arbitrary
                err = f"{type(e).__name__}: {e}"
                nr.logs.append(_event(report, self.log_sink, event="error", node=node.id, activity=node.activity,
                                      attempt=attempt, error=err, elapsed=time.perf_counter() - t0))
                if attempt < self.retry.max_retries and not self._stop.is_set():
                    attempt += 1
                    nr.retries = attempt
                    if self.retry.backoff:
                        time.sleep(self.retry.backoff * attempt)
                    continue
                nr.status = FAILED
                nr.error = err + "\n" + traceback.format_exc()
                break
            nr.status = SUCCESS
            break
        nr.wall_time = time.perf_counter() - start
        nr.logs.append(_event(report, self.log_sink, event=nr.status, node=node.id, activity=node.activity,
                              elapsed=nr.wall_time, retries=nr.retries))

    def run(self, dag: RecipeDAG, params: Mapping[str, Any] | None = None) -> RunReport:
        dag = dag.bind(params).validate()
        report = RunReport(dag.name, self.describe())
        for n in dag.nodes:
            report.nodes[n.id] = NodeReport(n.id, n.activity)
        tmp = None
        if self.work_dir is None:
            tmp = tempfile.TemporaryDirectory(prefix="skillnlu-run-")
            run_dir = Path(tmp.name)
        else:
            run_dir = self.work_dir / dag.name
        arts = self._vend(dag, run_dir)
        report.artifacts = {k: v.uri for k, v in arts.items()}
        for a in dag.sources():
            if not arts[a].exists():
                if tmp is not None:
                    tmp.cleanup()
                raise PipelineError(f"missing source artifact {a!r} at {arts[a].uri}")
        t0 = time.perf_counter()
        _event(report, self.log_sink, event="run_start", executor=self.describe(), nodes=len(dag.nodes))
        try:
            self._schedule(dag, arts, report)
            report.wall_time = time.perf_counter() - t0
            for a in dag.outputs:
                if arts[a].exists() and all(
                    report.nodes[n].status in (SUCCESS, CACHED) for n in [dag.producers()[a]]
                ):
                    data = arts[a].fetch()
                    report.digests[a] = digest_bytes(data)
                    if tmp is not None and dag.artifacts[a].uri is None:
                        report.retained[a] = data
        finally:
            if tmp is not None:
                tmp.cleanup()
        _event(report, self.log_sink, event="run_end", ok=report.ok, elapsed=report.wall_time)
        return report

    def _skip_dependents(self, failed: str, dependents, report: RunReport) -> None:
        stack = list(dependents[failed])
        while stack:
            d = stack.pop()
            if report.nodes[d].status == "pending":
                report.nodes[d].status = SKIPPED
                report.order.append(d)
                report.nodes[d].logs.append(_event(report, self.log_sink, event="skipped", node=d,
                                                   activity=report.nodes[d].activity, because=failed))
                stack.extend(dependents[d])

    def _schedule(self, dag, arts, report) -> None:
        raise NotImplementedError

    def describe(self) -> str:
        return self.name


class SequentialExecutor(Executor):
    name = "local"

    def _schedule(self, dag, arts, report):
        deps, dependents = dag.dependencies(), dag.dependents()
        for nid in dag.topological_order():
            nr = report.nodes[nid]
            if nr.status != "pending":
                continue
            if self._stop.is_set():
                report.interrupted = True
                nr.status = CANCELLED
                report.order.append(nid)
                continue
            if any(report.nodes[d].status not in (SUCCESS, CACHED) for d in deps[nid]):
                nr.status = SKIPPED
                report.order.append(nid)
                continue
            self._run_node(dag.node(nid), arts, report)
            report.order.append(nid)
            if nr.status == FAILED:
                self._skip_dependents(nid, dependents, report)


class ParallelExecutor(Executor):
    """Runs every activity whose producers have succeeded on a bounded thread pool."""

    name = "parallel"

    def __init__(self, max_workers: int = 4, **kw):
        super().__init__(**kw)
        if max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        self.max_workers = max_workers

    def describe(self) -> str:
        return f"parallel:{self.max_workers}"

    def _schedule(self, dag, arts, report):
        deps, dependents = dag.dependencies(), dag.dependents()
        remaining = {nid: set(d) for nid, d in deps.items()}
        # keep a stable submission order: the static topological order
        rank = {nid: i for i, nid in enumerate(dag.topological_order())}
        ready = sorted((n for n, d in remaining.items() if not d), key=rank.get)
        running: dict[Future, str] = {}
        with ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="skillnlu") as pool:
            while ready or running:
                while ready and len(running) < self.max_workers and not self._stop.is_set():
                    nid = ready.pop(0)
                    if report.nodes[nid].status != "pending":
                        continue
                    running[pool.submit(self._run_node, dag.node(nid), arts, report)] = nid
                if self._stop.is_set() and not running:
                    break
                if not running:
                    break
                done, _ = wait(list(running), return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: rank[running[f]]):
                    nid = running.pop(fut)
                    fut.result()
                    report.order.append(nid)
                    if report.nodes[nid].status == FAILED:
                        self._skip_dependents(nid, dependents, report)
                        continue
                    for d in sorted(dependents[nid], key=rank.get):
                        remaining[d].discard(nid)
                        if not remaining[d] and report.nodes[d].status == "pending":
                            ready.append(d)
                    ready.sort(key=rank.get)
        for nid, nr in report.nodes.items():
            if nr.status == "pending":
                nr.status = CANCELLED
                report.order.append(nid)
                report.interrupted = True


class RemoteExecutor(Executor):
    """Placeholder with the executor interface; cluster execution is not available here."""

    name = "remote"

    def _schedule(self, dag, arts, report):
        raise PipelineError("remote execution is not available in this toolkit; use local or parallel")


def make_executor(spec: str | Executor | None = None, **kw) -> Executor:
    """Executor from a spec string: ``local``, ``sequential``, ``parallel`` or ``parallel:N``."""
    if isinstance(spec, Executor):
        return spec
    spec = (spec or "local").strip().lower()
    if spec in ("local", "sequential"):
        return SequentialExecutor(**kw)
    if spec.startswith("parallel"):
        _, _, n = spec.partition(":")
        try:
            workers = int(n) if n else 4
        except ValueError:
            raise ValueError(f"bad worker count in executor spec {spec!r}") from None
        return ParallelExecutor(workers, **kw)
    if spec == "remote":
        return RemoteExecutor(**kw)
    raise ValueError(f"unknown executor {spec!r}; expected local or parallel[:N]")


def execute(dag: RecipeDAG | Recipe, executor: str | Executor | None = None, params: Mapping[str, Any] | None = None,
            retry: RetryPolicy | None = None, **kw) -> RunReport:
    """Run a DAG (or a recipe, captured on the fly) and return its report.

    ``kw`` holds executor options (``work_dir``, ``incremental``, ``log_sink``);
    they are applied to an executor instance too.
    """
    if isinstance(dag, Recipe):
        dag = capture_recipe(dag)
    if isinstance(executor, Executor):
        if retry is not None:
            executor.retry = retry
        for key, value in kw.items():
            if key not in ("work_dir", "incremental", "log_sink"):
                raise TypeError(f"unknown executor option {key!r}")
            setattr(executor, key, Path(value) if key == "work_dir" and value is not None else value)
        ex = executor
    else:
        ex = make_executor(executor, retry=retry, **kw)
    return ex.run(dag, params)
