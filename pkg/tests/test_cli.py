from __future__ import annotations

import io
import json
import shutil
from types import SimpleNamespace

import pytest

from skillnlu.cli import EXIT_OK, EXIT_USAGE, Console, main
from skillnlu.evaluation import EvalExample, evaluate, parse_test_lines, slot_prf
from skillnlu.frames import SemanticFrame, SlotValue
from skillnlu.pipeline import capture_recipe, serialize_dag
from skillnlu.runtime.nlu import NLUResult
from skillnlu.runtime.store import ModelStore


@pytest.fixture(scope="module")
def built_store(tmp_path_factory, horoscope_dir):
    store = tmp_path_factory.mktemp("cli") / "store"
    assert main(["--store", str(store), "build", str(horoscope_dir)]) == EXIT_OK
    return store


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- build ---------------------------------------------------------------------


def test_build_stores_bundle(built_store):
    s = ModelStore(built_store)
    assert s.skills() == ["daily-horoscopes"]
    assert s.latest_version("daily-horoscopes") == 1


def test_build_prints_receipt(capsys, tmp_path, horoscope_dir):
    code, out, _ = run(capsys, "build", str(horoscope_dir), "--store", str(tmp_path / "s"), "--executor", "parallel:2")
    assert code == EXIT_OK
    assert "stored daily-horoscopes v1 digest " in out


def test_build_dangling_slot_is_usage_error(capsys, tmp_path, horoscope_dir):
    d = tmp_path / "bad"
    shutil.copytree(horoscope_dir, d)
    with open(d / "sample_utterances.txt", "a") as fh:
        fh.write("GetHoroscope horoscope for {Planet}\n")
    code, _, err = run(capsys, "--store", str(tmp_path / "s"), "build", str(d))
    assert code == EXIT_USAGE
    assert "Planet" in err
    assert not (tmp_path / "s").exists()


def test_build_missing_directory(capsys, tmp_path):
    code, _, err = run(capsys, "--store", str(tmp_path / "s"), "build", str(tmp_path / "nowhere"))
    assert code == EXIT_USAGE and "not a model directory" in err


def test_build_bad_config(capsys, tmp_path, horoscope_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"build": {"nonsense": 1}}')
    code, _, err = run(capsys, "--config", str(cfg), "build", str(horoscope_dir))
    assert code == EXIT_USAGE and "nonsense" in err


def test_build_toml_config(capsys, tmp_path, horoscope_dir):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[build]\nsamples_per_intent = 30\nepochs = 2\n")
    store = tmp_path / "s"
    assert run(capsys, "--config", str(cfg), "--store", str(store), "build", str(horoscope_dir))[0] == EXIT_OK
    assert ModelStore(store).load("daily-horoscopes").meta["n_samples"] == 30


def test_unknown_skill(capsys, built_store):
    code, _, err = run(capsys, "--store", str(built_store), "sample", "nope")
    assert code == EXIT_USAGE and "unknown skill" in err


def test_bad_arguments_exit_2(capsys):
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys)[0] == EXIT_USAGE


# -- sample / eval ---------------------------------------------------------------


def test_sample_n_must_be_positive(capsys, built_store):
    code, _, err = run(capsys, "--store", str(built_store), "sample", "daily-horoscopes", "-n", "0")
    assert code == EXIT_USAGE and "-n" in err


def test_sample_from_model_dir(capsys, horoscope_dir):
    code, out, _ = run(capsys, "sample", "--model", str(horoscope_dir), "-n", "5", "--seed", "3")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert len(lines) == 5 and all(l.startswith("GetHoroscope ") for l in lines)
    again = run(capsys, "sample", "--model", str(horoscope_dir), "-n", "5", "--seed", "3")[1]
    assert again == out


def test_sample_then_eval_round_trip(capsys, tmp_path, built_store):
    code, out, _ = run(capsys, "--store", str(built_store), "sample", "daily-horoscopes", "-n", "40")
    assert code == EXIT_OK
    test_file = tmp_path / "test.tsv"
    test_file.write_text(out)
    code, out, _ = run(capsys, "--store", str(built_store), "eval", "daily-horoscopes", str(test_file), "--json")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["n"] == 40
    assert report["intent_accuracy"] == 1.0
    assert report["slot_f1"] == 1.0
    assert report["deterministic_coverage"] == 1.0


def test_eval_reports_malformed_lines(capsys, tmp_path, built_store):
    f = tmp_path / "t.txt"
    f.write_text('# comment\nno tab here\n{"text": "taurus", "frame": {"intent": "GetHoroscope", '
                 '"slots": {"Sign": "taurus"}}}\n')
    code, out, err = run(capsys, "--store", str(built_store), "eval", "daily-horoscopes", str(f))
    assert code == EXIT_OK
    assert ":2:" in err
    assert "intent accuracy" in out
    assert json.loads(out.splitlines()[-1])["malformed_lines"] == 1


def test_eval_empty_file_is_usage_error(capsys, tmp_path, built_store):
    f = tmp_path / "empty.txt"
    f.write_text("\n# nothing\n")
    code, _, err = run(capsys, "--store", str(built_store), "eval", "daily-horoscopes", str(f))
    assert code == EXIT_USAGE and "no usable examples" in err


def test_eval_missing_file(capsys, tmp_path, built_store):
    code, _, _ = run(capsys, "--store", str(built_store), "eval", "daily-horoscopes", str(tmp_path / "x"))
    assert code == EXIT_USAGE


# -- console --------------------------------------------------------------------


def _console(store, **kw):
    args = SimpleNamespace(store=str(store), skill="daily-horoscopes", config_data={}, threshold=None, order=None)
    vars(args).update(kw)
    out = io.StringIO()
    return Console(args, out=out), out


def test_console_session(built_store):
    con, out = _console(built_store)
    script = io.StringIO("what is the horoscope for leo\n\n:reset\nzzz\n:reload\n:quit\nnever read\n")
    assert con.run(script) == EXIT_OK
    lines = out.getvalue().splitlines()
    assert lines[0].startswith("skill daily-horoscopes v1")
    first = json.loads(lines[1])
    assert first["source"] == "deterministic" and first["slots"] == {"Sign": "leo"}
    assert lines[2].startswith("<< fulfill ")
    assert "<< dialogue reset" in lines
    assert "never read" not in out.getvalue()


def test_console_completion(built_store):
    con, _ = _console(built_store)
    assert con.complete("tau", 0) == "taurus"
    assert con.complete("tau", 1) is None


def test_console_runtime_options(built_store):
    con, _ = _console(built_store, order="slots_first", threshold=0.9)
    assert con.engine.order == "slots_first" and con.engine.threshold == 0.9


def test_console_command(capsys, built_store, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO("taurus\n"))
    code, out, _ = run(capsys, "--store", str(built_store), "console", "daily-horoscopes")
    assert code == EXIT_OK and '"intent": "GetHoroscope"' in out


# -- pipeline commands --------------------------------------------------------------


def test_pipeline_show_lists_recipes(capsys):
    code, out, _ = run(capsys, "pipeline", "show")
    assert code == EXIT_OK
    assert "build_skill(model, skill_id=''" in out


def test_pipeline_show_recipe(capsys):
    code, out, _ = run(capsys, "pipeline", "show", "build_skill")
    assert code == EXIT_OK
    assert "recipe build_skill" in out and "train_intent_stage" in out
    code, out, _ = run(capsys, "pipeline", "show", "build_skill", "--json")
    assert json.loads(out)["name"] == "build_skill"
    assert run(capsys, "pipeline", "show", "no_such_recipe")[0] == EXIT_USAGE


def test_pipeline_run_serialized_dag(capsys, tmp_path, horoscope_dir):
    dag_file = tmp_path / "dag.json"
    dag_file.write_text(serialize_dag(capture_recipe("build_skill")))
    store = tmp_path / "s"
    code, out, _ = run(capsys, "pipeline", "run", str(dag_file), "--param", f"model={horoscope_dir}",
                       "--param", f"store={store}")
    assert code == EXIT_OK, out
    assert ModelStore(store).latest_version("daily-horoscopes") == 1
    assert run(capsys, "pipeline", "run", str(dag_file), "--param", "oops")[0] == EXIT_USAGE
    assert run(capsys, "pipeline", "run", str(tmp_path / "missing.json"))[0] == EXIT_USAGE


def test_generated_recipe_subcommand(capsys, tmp_path, horoscope_dir):
    store = tmp_path / "s"
    code, out, _ = run(capsys, "build-skill", "--model", str(horoscope_dir), "--store", str(store),
                       "--skill-id", "horo")
    assert code == EXIT_OK, out
    assert ModelStore(store).skills() == ["horo"]
    code, _, err = run(capsys, "build-skill", "--store", str(store))
    assert code == EXIT_USAGE and "--model" in err


# -- evaluation helpers -----------------------------------------------------------


def test_parse_test_lines_formats():
    lines = [
        'GetHoroscope what is the horoscope for leo\t{"intent": "GetHoroscope", "slots": '
        '{"Sign": {"value": "leo", "span": [5, 6]}}}',
        '{"text": "leo", "frame": {"intent": "GetHoroscope", "slots": {"Sign": "leo"}}}',
        'Other x\t{"intent": "GetHoroscope"}',
        "{bad json",
        '{"text": " ", "frame": {"intent": "A"}}',
    ]
    examples, errors = parse_test_lines(lines)
    assert [e.text for e in examples] == ["what is the horoscope for leo", "leo"]
    assert examples[0].gold.slots["Sign"].span == (5, 6)
    assert [n for n, _ in errors] == [3, 4, 5]


def test_slot_prf():
    g = SemanticFrame("A", {"x": SlotValue("a", (0, 1)), "y": SlotValue("b", (2, 3))})
    p = SemanticFrame("A", {"x": SlotValue("a", (0, 1)), "y": SlotValue("b", (1, 3))})
    assert slot_prf([(g, p)]) == (0.5, 0.5, 0.5)
    assert slot_prf([(g, None)]) == (1.0, 0.0, 0.0)
    # value comparison when a side lacks spans
    assert slot_prf([(SemanticFrame("A", {"x": SlotValue("a")}), p)])[1] == 1.0
    assert slot_prf([]) == (1.0, 1.0, 1.0)


def test_evaluate_counts():
    gold = SemanticFrame("A", {"x": SlotValue("v", (0, 1))})
    answers = {"v": NLUResult(gold, "deterministic"), "w": NLUResult(None, "out_of_domain")}
    rep = evaluate(lambda t: answers[t], [EvalExample("v", gold), EvalExample("w", gold)])
    assert rep.n == 2 and rep.intent_accuracy == 0.5 and rep.coverage == 0.5
    assert rep.slot_precision == 1.0 and rep.slot_recall == 0.5
    with pytest.raises(ValueError):
        evaluate(lambda t: None, [])
