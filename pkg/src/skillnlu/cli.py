"""Command-line entry point.

Exit codes: 0 on success, 1 when something fails internally (a build step,
an unexpected exception), 2 when the input is at fault (bad arguments,
invalid model, unknown skill, malformed test file).
"""

from __future__ import annotations

import argparse
import importlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .build import BuildConfig, ValidationFailed, build_skills_dag
from .evaluation import evaluate, parse_test_lines
from .grammar import build_grammar, sample_utterances
from .interaction_model import InteractionModelError, load_interaction_model, validate_interaction_model
from .pipeline import PipelineError, deserialize_dag, execute, generate_cli, registered_recipes, serialize_dag
from .pipeline.dag import capture_recipe, get_recipe
from .runtime import (
    ConfirmIntent,
    DialogueManager,
    ElicitSlot,
    Fulfill,
    ModelStore,
    NLUEngine,
    StoreError,
)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
STORE_ENV = "SKILLNLU_STORE"
RECIPES_ENV = "SKILLNLU_RECIPES"


class UsageError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# -- configuration ------------------------------------------------------------


def load_config(path: str | None) -> dict:
    """Read a JSON or TOML config file into a dict."""
    if not path:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    try:
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except ValueError as e:
        raise UsageError(f"cannot parse config {path}: {e}") from None


def _build_config(args) -> BuildConfig:
    cfg = dict(args.config_data)
    cfg.pop("runtime", None)
    cfg.update(cfg.pop("build", {}) or {})
    try:
        return BuildConfig.from_dict(cfg, seed=args.seed)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad build configuration: {e}") from None


def _runtime_config(args) -> dict:
    rt = dict(args.config_data.get("runtime", {}) or {})
    if getattr(args, "threshold", None) is not None:
        rt["rejection_threshold"] = args.threshold
    if getattr(args, "order", None) is not None:
        rt["order"] = args.order
    return rt


def _store(args) -> ModelStore:
    return ModelStore(args.store)


def _load_bundle(args, skill: str, version: int | None = None):
    try:
        return _store(args).load(skill, version)
    except StoreError as e:
        raise UsageError(str(e)) from None


# -- build ----------------------------------------------------------------------


def _receipts(report) -> list[dict]:
    return [json.loads(report.fetch(aid)) for aid in sorted(report.digests)
            if aid.rsplit(".", 1)[-1] == "receipt"]


def cmd_build(args) -> int:
    cfg = _build_config(args)
    for d in args.model_dir:
        if not Path(d).is_dir():
            raise UsageError(f"{d} is not a model directory")
        try:
            model = load_interaction_model(d)
        except InteractionModelError as e:
            raise UsageError(f"{d}: {e}") from None
        report = validate_interaction_model(model)
        if not report.buildable:
            print(f"{d}: interaction model has {len(report)} violation(s):", file=sys.stderr)
            for v in report:
                print(f"  {v}", file=sys.stderr)
            return EXIT_USAGE
    if args.skill_id and len(args.skill_id) != len(args.model_dir):
        raise UsageError("give --skill-id once per model directory")
    dag = build_skills_dag([str(Path(d).resolve()) for d in args.model_dir], store=str(args.store),
                           config=cfg.to_json(), seed=cfg.seed, skill_ids=args.skill_id or None)
    report = execute(dag, executor=args.executor)
    print(report.summary())
    if not report.ok:
        return EXIT_FAILURE
    for r in _receipts(report):
        print(f"stored {r['skill_id']} v{r['version']} digest {r['content_digest']}")
    print(f"wall time {report.wall_time:.2f}s")
    return EXIT_OK


# -- console --------------------------------------------------------------------


def _format_directive(d) -> str:
    if isinstance(d, ElicitSlot):
        return f"<< elicit {d.slot}{' (escalated)' if d.escalated else ''}: {d.prompt}"
    if isinstance(d, ConfirmIntent):
        return f"<< confirm{' (escalated)' if d.escalated else ''}: {d.prompt}"
    if isinstance(d, Fulfill):
        return f"<< fulfill {json.dumps(d.frame.to_dict(), sort_keys=True)}"
    return f"<< {d}"


class Console:
    """Line-oriented test console for one skill."""

    def __init__(self, args, out=None):
        self.args = args
        self.out = out if out is not None else sys.stdout
        self.skill = args.skill
        self.runtime = _runtime_config(args)
        self.state = None
        self._load()

    def _load(self) -> None:
        self.bundle = _load_bundle(self.args, self.skill)
        try:
            self.engine = NLUEngine(self.bundle, **self.runtime)
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad runtime configuration: {e}") from None
        self.dialogue = DialogueManager(self.bundle)
        self.state = None
        self._completions = sorted({v for st in self.bundle.model.slot_types for v in st.normalized_values()})

    def banner(self) -> str:
        b = self.bundle
        return (f"skill {b.skill_id} v{b.version} (invocation name '{b.invocation_name}'). "
                "Commands: :quit, :reload, :reset")

    def complete(self, text: str, i: int) -> str | None:
        hits = [v for v in self._completions if v.startswith(text)]
        return hits[i] if i < len(hits) else None

    def handle(self, line: str) -> bool:
        """Process one input line; False means quit."""
        cmd = line.strip()
        if not cmd:
            return True
        if cmd == ":quit":
            return False
        if cmd == ":reload":
            self._load()
            print(self.banner(), file=self.out)
            return True
        if cmd == ":reset":
            self.state = None
            print("<< dialogue reset", file=self.out)
            return True
        if self.state is not None and not self.state.terminal:
            self.state, d = self.dialogue.step(self.state, cmd)
            print(_format_directive(d), file=self.out)
            return True
        res = self.engine.understand(cmd)
        print(res.to_json(), file=self.out)
        if res.frame is not None:
            self.state, d = self.dialogue.start(res.frame)
            print(_format_directive(d), file=self.out)
        return True

    def run(self, stream=None) -> int:
        print(self.banner(), file=self.out)
        interactive = stream is None and sys.stdin.isatty()
        if interactive:
            try:
                import readline

                readline.set_completer(self.complete)
                readline.parse_and_bind("tab: complete")
            except ImportError:
                pass
        src = stream if stream is not None else sys.stdin
        while True:
            if interactive:
                try:
                    line = input("> ")
                except EOFError:
                    print(file=self.out)
                    return EXIT_OK
            else:
                line = src.readline()
                if not line:
                    return EXIT_OK
            if not self.handle(line):
                return EXIT_OK


def cmd_console(args) -> int:
    return Console(args).run()


# -- sample / eval ------------------------------------------------------------------


def cmd_sample(args) -> int:
    if args.n <= 0:
        raise UsageError("-n must be positive")
    if args.model:
        try:
            model = load_interaction_model(args.model)
            grammar = build_grammar(model, max_entropy=_build_config(args).max_entropy)
        except InteractionModelError as e:
            raise UsageError(str(e)) from None
    elif args.skill:
        grammar = _load_bundle(args, args.skill).grammar
    else:
        raise UsageError("give a skill id or --model <dir>")
    for utt, frame in sample_utterances(grammar, args.n, seed=args.seed or 0):
        tokens = " ".join(str(t) for t in utt.template)
        print(f"{utt.intent} {tokens}\t{json.dumps(frame.to_dict(), sort_keys=True)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        with open(args.test_file, encoding="utf-8") as fh:
            examples, errors = parse_test_lines(fh)
    except OSError as e:
        raise UsageError(f"cannot read {args.test_file}: {e.strerror}") from None
    for no, msg in errors:
        print(f"{args.test_file}:{no}: {msg}", file=sys.stderr)
    if not examples:
        raise UsageError(f"{args.test_file} has no usable examples")
    bundle = _load_bundle(args, args.skill)
    engine = NLUEngine(bundle, **_runtime_config(args))
    report = evaluate(engine.understand, examples)
    report.errors = errors
    if not args.json:
        print(report.format())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


# -- pipeline -------------------------------------------------------------------


def _parse_assignments(items: Sequence[str] | None, what: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{what} must look like name=value, got {item!r}")
        out[key] = value
    return out


def cmd_pipeline_run(args) -> int:
    try:
        dag = deserialize_dag(Path(args.dag).read_text("utf-8"))
        params = _parse_assignments(args.param, "--param")
        dag = dag.with_uris(_parse_assignments(args.artifact, "--artifact"))
    except OSError as e:
        raise UsageError(f"cannot read {args.dag}: {e.strerror}") from None
    except (PipelineError, ValueError) as e:
        raise UsageError(str(e)) from None
    try:
        report = execute(dag, executor=args.executor, params=params)
    except PipelineError as e:
        raise UsageError(str(e)) from None
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_pipeline_show(args) -> int:
    if not args.target:
        for name, r in sorted(registered_recipes().items()):
            params = ", ".join(p.name + ("" if p.required else f"={p.default!r}") for p in r.params)
            print(f"{name}({params})")
        return EXIT_OK
    path = Path(args.target)
    try:
        if path.is_file():
            dag = deserialize_dag(path.read_text("utf-8"), check_activities=False)
        else:
            dag = capture_recipe(get_recipe(args.target))
    except (PipelineError, KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    if args.json:
        print(serialize_dag(dag))
        return EXIT_OK
    print(f"recipe {dag.name}")
    if dag.params:
        print("params: " + ", ".join(p.name for p in dag.params))
    print("sources: " + ", ".join(dag.sources()))
    print("outputs: " + ", ".join(dag.outputs))
    for nid in dag.topological_order():
        n = dag.node(nid)
        ins = ", ".join(n.inputs.values())
        outs = ", ".join(n.outputs.values())
        print(f"  {nid}: {n.activity}({ins}) -> {outs}")
    return EXIT_OK


def cmd_recipe(args) -> int:
    spec = args.recipe_command
    params, uris = spec.split_args(args)
    try:
        dag = capture_recipe(get_recipe(spec.recipe))
        if uris:
            dag = dag.with_uris(uris)
        report = execute(dag, executor=args.recipe_executor or args.executor, params=params)
    except PipelineError as e:
        raise UsageError(str(e)) from None
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_FAILURE


# -- parser -------------------------------------------------------------------------


def _import_recipe_modules() -> None:
    for mod in filter(None, (m.strip() for m in os.environ.get(RECIPES_ENV, "").split(","))):
        importlib.import_module(mod)


def build_parser() -> argparse.ArgumentParser:
    _import_recipe_modules()
    recipes = sorted(registered_recipes())
    parser = argparse.ArgumentParser(
        prog="skillnlu",
        description="Build, test and serve spoken-language understanding models for skills.",
        epilog="recipes: " + ", ".join(recipes),
    )
    parser.add_argument("--store", default=os.environ.get(STORE_ENV, "models"),
                        help=f"model store directory (default ${STORE_ENV} or ./models)")
    parser.add_argument("--executor", default="local", help="pipeline executor: local or parallel[:N]")
    parser.add_argument("--seed", type=int, default=None, help="random seed for sampling and training")
    parser.add_argument("--config", default=None, help="JSON or TOML file with build/runtime settings")
    # the same flags after the subcommand name; SUPPRESS keeps the global value unless given
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--store", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("--executor", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("build", parents=[common], help="build skills from model directories and store the bundles")
    p.add_argument("model_dir", nargs="+")
    p.add_argument("--skill-id", action="append", default=None,
                   help="skill id (repeat per model; default derived from the invocation name)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("console", parents=[common], help="interactive test console for a stored skill")
    p.add_argument("skill")
    p.add_argument("--threshold", type=float, default=None, help="rejection threshold")
    p.add_argument("--order", choices=["intent_first", "slots_first"], default=None)
    p.set_defaults(func=cmd_console)

    p = sub.add_parser("sample", parents=[common], help="print utterances sampled from a skill grammar")
    p.add_argument("skill", nargs="?")
    p.add_argument("--model", help="sample from a model directory instead of a stored skill")
    p.add_argument("-n", type=int, default=10)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="score a stored skill on a labeled test file")
    p.add_argument("skill")
    p.add_argument("test_file")
    p.add_argument("--json", action="store_true", help="print only the JSON report")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--order", choices=["intent_first", "slots_first"], default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run or inspect pipeline DAGs")
    psub = p.add_subparsers(dest="pipeline_command", metavar="action")
    psub.required = True
    q = psub.add_parser("run", parents=[common], help="execute a serialized DAG")
    q.add_argument("dag")
    q.add_argument("--param", action="append", help="recipe parameter name=value")
    q.add_argument("--artifact", action="append", help="artifact override id=uri")
    q.set_defaults(func=cmd_pipeline_run)
    q = psub.add_parser("show", parents=[common], help="list recipes, or describe a recipe or DAG file")
    q.add_argument("target", nargs="?")
    q.add_argument("--json", action="store_true", help="print the DAG JSON")
    q.set_defaults(func=cmd_pipeline_show)

    for name in recipes:
        spec = generate_cli(name)
        spec.add_to(sub).set_defaults(func=cmd_recipe)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.config_data = load_config(args.config)
        if args.seed is None:
            args.seed = _build_config(args).seed
        return args.func(args)
    except UsageError as e:
        _err(str(e))
        return EXIT_USAGE
    except ValidationFailed as e:
        _err(str(e))
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_FAILURE
    except Exception as e:  # noqa: BLE001 - last-resort handler keeps the exit-code contract
        _err(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
