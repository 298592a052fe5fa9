import json
import time

import pytest

import pipeline_activities as acts
from dag_cases import random_dag
from skillnlu.pipeline.artifacts import Artifact, ArtifactError, atomic_write, kv_artifact, new_mem_uri
from skillnlu.pipeline.cli_gen import generate_cli, kebab
from skillnlu.pipeline.dag import (
    CycleError,
    NodeSpec,
    ArtifactSpec,
    PipelineError,
    ProducerConflictError,
    RecipeDAG,
    SchemaVersionError,
    UnknownActivityError,
    activity,
    capture_recipe,
    deserialize_dag,
    get_recipe,
    recipe,
    serialize_dag,
)
from skillnlu.pipeline.executors import (
    ParallelExecutor,
    RetryPolicy,
    SequentialExecutor,
    execute,
    make_executor,
)


@pytest.fixture()
def data_file(tmp_path):
    p = tmp_path / "data.txt"
    p.write_text("open the door open the window")
    return str(p)


class TestCapture:
    def test_build_ic_model_chain(self):
        dag = capture_recipe(acts.build_ic_model)
        assert [n.activity for n in dag.nodes] == ["extract_features", "train_classifier"]
        assert dag.dependencies() == {"extract_features": set(), "train_classifier": {"extract_features"}}
        assert dag.outputs == ["model"]
        assert [p.name for p in dag.params] == ["data_file"]

    def test_empty_recipe(self):
        dag = capture_recipe(acts.empty_recipe)
        assert dag.nodes == [] and dag.outputs == []
        report = execute(dag)
        assert report.ok and report.order == []

    def test_cycle_rejected(self):
        dag = RecipeDAG(
            "cyc",
            artifacts=[ArtifactSpec("x"), ArtifactSpec("y")],
            nodes=[NodeSpec("a", "upper", {"src": "y"}, {"out": "x"}), NodeSpec("b", "upper", {"src": "x"}, {"out": "y"})],
        )
        with pytest.raises(CycleError):
            dag.validate()

    def test_two_producers_rejected(self):
        def bad(executor):
            out = executor.new_artifact()
            acts.emit(out, value=1)
            acts.emit(out, value=2)

        with pytest.raises(ProducerConflictError):
            capture_recipe(bad)

    def test_unregistered_activity(self):
        from skillnlu.pipeline.dag import Activity

        rogue = Activity(lambda out: None, (), ("out",), name="rogue")

        def uses_rogue(executor):
            rogue(executor.new_artifact())

        with pytest.raises(UnknownActivityError):
            capture_recipe(uses_rogue)

    def test_activity_outside_recipe_is_plain_function(self):
        class Box:
            def put(self, data):
                self.data = data

        box = Box()
        acts.emit.fn(box, value="x")
        assert box.data == b"x"

    def test_bound_parameters_baked_in(self, data_file):
        dag = capture_recipe(acts.build_ic_model, data_file=data_file)
        assert dag.params == [] and dag.artifacts["data.txt"].uri == data_file

    def test_unknown_binding(self):
        with pytest.raises(PipelineError):
            capture_recipe(acts.build_ic_model, nope=1)

    def test_bad_activity_declaration(self):
        with pytest.raises(PipelineError):
            activity(inputs="missing")(lambda out: None)
        with pytest.raises(PipelineError):
            activity(inputs="x", outputs="x")(lambda x: None)

    def test_non_json_param(self):
        def bad(executor):
            acts.emit(executor.new_artifact(), value=object())

        with pytest.raises(PipelineError, match="JSON"):
            capture_recipe(bad)


class TestSerialization:
    def test_build_ic_model_round_trip(self):
        dag = capture_recipe(acts.build_ic_model)
        assert deserialize_dag(serialize_dag(dag)) == dag

    def test_unknown_activity_named(self):
        doc = capture_recipe(acts.build_ic_model).to_dict()
        doc["nodes"][0]["activity"] = "teleport"
        with pytest.raises(UnknownActivityError, match="teleport"):
            deserialize_dag(json.dumps(doc))

    def test_schema_version_mismatch(self):
        doc = capture_recipe(acts.build_ic_model).to_dict()
        doc["schema_version"] = 99
        with pytest.raises(SchemaVersionError):
            deserialize_dag(json.dumps(doc))

    @pytest.mark.parametrize("text", ["[]", "{not json", '{"schema_version": 1}'])
    def test_malformed(self, text):
        with pytest.raises(PipelineError):
            deserialize_dag(text)

    @pytest.mark.parametrize("seed", range(25))
    def test_random_round_trip(self, seed):
        dag = random_dag(seed)
        again = deserialize_dag(serialize_dag(dag), check_activities=False)
        assert again == dag
        assert serialize_dag(again) == serialize_dag(dag)
        assert [n.id for n in again.nodes] == [n.id for n in dag.nodes]


class TestExecution:
    def test_chain_runs(self, data_file):
        report = acts.build_ic_model(data_file=data_file)
        assert report.ok and report.order == ["extract_features", "train_classifier"]
        model = json.loads(report.fetch("model"))
        assert model == {"epochs": 10, "vocab": ["door", "open", "the", "window"]}

    def test_diamond_topology(self):
        def diamond(executor):
            a, b, c, d = (executor.new_artifact(name=n) for n in "abcd")
            acts.emit(a, value="x")
            acts.upper(a, b)
            acts.record_order(a, c, name="c")
            acts.join(b, c, d)

        dag = capture_recipe(diamond)
        for ex in ("local", "parallel:2"):
            report = execute(dag, ex)
            assert report.order[0] == "emit" and report.order[-1] == "join"
            assert report.fetch("d") == b"X|xc"

    def test_missing_source(self):
        with pytest.raises(PipelineError, match="missing source"):
            acts.build_ic_model(data_file="/nonexistent/file.txt")

    def test_missing_param(self):
        with pytest.raises(PipelineError, match="missing value"):
            execute(capture_recipe(acts.build_ic_model))

    def test_retries_then_success(self):
        key = f"retry-{time.time_ns()}"

        def r(executor):
            out = executor.new_artifact(name="out")
            acts.flaky(out, key=key, failures=2)
            acts.upper(out, executor.new_artifact(name="up"))

        report = execute(capture_recipe(r), retry=RetryPolicy(max_retries=2))
        assert report.ok
        assert report.nodes["flaky"].retries == 2 and report.status("upper") == "success"
        assert report.fetch("up") == b"FINALLY"

    def test_failure_skips_transitive_dependents(self):
        key = f"fail-{time.time_ns()}"

        def r(executor):
            a, b, c, side = (executor.new_artifact(name=n) for n in ("a", "b", "c", "side"))
            acts.flaky(a, key=key, failures=5)
            acts.upper(a, b)
            acts.upper(b, c)
            acts.emit(side, value="independent")

        for ex in ("local", "parallel:3"):
            report = execute(capture_recipe(r), ex, retry=RetryPolicy(max_retries=1))
            assert not report.ok
            assert report.status("flaky") == "failed" and report.nodes["flaky"].retries == 1
            assert report.status("upper") == report.status("upper#2") == "skipped"
            assert report.status("emit") == "success"
            assert "side" in report.digests and "c" not in report.digests

    def test_failed_activity_leaves_no_output(self):
        uri = new_mem_uri("crash")

        def r(executor):
            src = executor.new_artifact(name="src")
            acts.emit(src, value="in")
            acts.explode(src, executor.artifact(uri, name="boom"))

        report = execute(capture_recipe(r))
        assert report.status("explode") == "failed" and "boom" in report.nodes["explode"].error
        assert not Artifact(uri).exists()

    def test_write_once_and_missing_output(self):
        def r(executor):
            acts.double_put(executor.new_artifact(name="a"))
            acts.forgetful(executor.new_artifact(name="b"))

        report = execute(capture_recipe(r))
        assert "already written" in report.nodes["double_put"].error
        assert "did not write" in report.nodes["forgetful"].error

    def test_structured_logs(self, data_file):
        lines = []
        report = execute(capture_recipe(acts.build_ic_model), params={"data_file": data_file}, log_sink=lines.append)
        events = [json.loads(line) for line in lines]
        assert events[0]["event"] == "run_start" and events[-1]["event"] == "run_end"
        assert {e["event"] for e in events} >= {"start", "success"}
        assert lines == report.logs

    def test_parallel_speedup_and_equivalence(self):
        def four(executor):
            outs = [executor.new_artifact(name=f"s{i}") for i in range(4)]
            for i, o in enumerate(outs):
                acts.sleeper(o, ms=150, tag=str(i))

        dag = capture_recipe(four)
        seq = execute(dag, "local")
        par = execute(dag, ParallelExecutor(4))
        assert par.wall_time <= 0.6 * seq.wall_time
        assert seq.digests == par.digests and len(seq.digests) == 4

    def test_shutdown_mid_run(self):
        def chain(executor):
            a, b, c = (executor.new_artifact(name=n) for n in "abc")
            acts.emit(a, value="v")
            acts.upper(a, b)
            acts.upper(b, c)

        for cls in (SequentialExecutor, ParallelExecutor):
            ex = cls()
            ex.log_sink = lambda line, ex=ex: ex.shutdown() if '"event": "success"' in line else None
            report = ex.run(capture_recipe(chain))
            assert report.interrupted and not report.ok
            assert report.status("emit") == "success"
            assert report.status("upper#2") == "cancelled"

    def test_remote_is_stubbed(self, data_file):
        with pytest.raises(PipelineError, match="remote"):
            execute(capture_recipe(acts.build_ic_model), "remote", params={"data_file": data_file})

    def test_make_executor(self):
        assert make_executor("parallel:3").max_workers == 3
        assert make_executor(None).describe() == "local"
        for bad in ("gpu", "parallel:x"):
            with pytest.raises(ValueError):
                make_executor(bad)
        with pytest.raises(ValueError):
            ParallelExecutor(0)
        with pytest.raises(ValueError):
            RetryPolicy(max_retries=-1)

    def test_incremental_skip(self, tmp_path, data_file):
        dag = capture_recipe(acts.build_ic_model, data_file=data_file)
        first = execute(dag, work_dir=tmp_path, incremental=True)
        second = execute(dag, work_dir=tmp_path, incremental=True)
        assert {n.status for n in first.nodes.values()} == {"success"}
        assert {n.status for n in second.nodes.values()} == {"cached"}
        assert first.digests == second.digests
        with open(data_file, "a") as f:
            f.write(" more")
        third = execute(dag, work_dir=tmp_path, incremental=True)
        assert third.status("extract_features") == "success"

    def test_temp_run_dir_cleaned(self, data_file):
        report = acts.build_ic_model(data_file=data_file)
        vended = Artifact(report.artifacts["model"])
        assert not vended.exists()
        assert report.fetch("model")
        with pytest.raises(KeyError):
            report.fetch("nope")


class TestArtifacts:
    def test_file_round_trip_and_meta(self, tmp_path):
        a = Artifact(str(tmp_path / "x" / "y.bin"))
        a.put(b"\x00\x01", {"who": "me"})
        assert a.fetch() == b"\x00\x01" and a.meta() == {"who": "me"} and a.path.exists()
        rel = Artifact("rel.txt", root=tmp_path)
        rel.put("hello")
        assert (tmp_path / "rel.txt").read_text() == "hello"
        with pytest.raises(ArtifactError):
            Artifact(str(tmp_path / "none")).fetch()

    def test_directory_manifest(self, horoscope_dir):
        doc = json.loads(Artifact(str(horoscope_dir)).fetch())
        assert "intent_schema.json" in doc["directory"]

    def test_kv_and_mem(self):
        kv = kv_artifact("tests/thing")
        kv.put_json({"a": 1}, {"m": 2})
        assert kv.exists() and kv.fetch_json() == {"a": 1} and kv.meta() == {"m": 2}
        with pytest.raises(ArtifactError):
            Artifact("kv://no-key").fetch()
        mem = Artifact(new_mem_uri())
        mem.put({"obj": [1, 2]})
        assert mem.fetch_object() == {"obj": [1, 2]}
        assert mem.digest() == Artifact(mem.uri).digest()
        with pytest.raises(ArtifactError):
            Artifact("s3://bucket/key")

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        target = tmp_path / "f"
        atomic_write(target, b"data")
        assert [p.name for p in tmp_path.iterdir()] == ["f"]


class TestCliGeneration:
    def test_build_ic_model_command(self):
        spec = generate_cli("build_ic_model")
        assert spec.name == "build-ic-model"
        assert [f.flag for f in spec.flags] == ["--data-file"]
        assert spec.usage() == "build-ic-model --data-file <str> [--executor <local|parallel[:N]>]"

    def test_zero_params(self):
        spec = generate_cli(acts.empty_recipe)
        assert spec.flags == () and "--executor" in spec.usage()

    def test_source_artifact_flag(self):
        spec = generate_cli(acts.no_params)
        assert [(f.flag, f.kind, f.default) for f in spec.flags] == [("--input", "artifact", "mem://fixed/input")]

    def test_reserved_name(self):
        r = recipe(lambda executor, help="": None, name="reserved_clash")
        with pytest.raises(PipelineError, match="reserved"):
            generate_cli(r)

    def test_parse_args(self):
        import argparse

        parser = argparse.ArgumentParser()
        sub = parser.add_subparsers()
        spec = generate_cli(acts.two_sleepers)
        spec.add_to(sub)
        ns = parser.parse_args(["two-sleepers", "--ms", "5", "--executor", "parallel:2"])
        params, uris = spec.split_args(ns)
        assert params == {"ms": "5"} and uris == {} and ns.recipe_executor == "parallel:2"
        report = execute(get_recipe("two_sleepers").capture(), ns.recipe_executor, params=params)
        assert report.ok and report.fetch("a") == b"slept 5 a"

    def test_kebab(self):
        assert kebab("buildICModel") == "build-icmodel"
        assert kebab("data_file") == "data-file"
