"""Derive command-line subcommands from recipes."""

from __future__ import annotations

import argparse
import re
from dataclasses import dataclass, field
from typing import Any

from .dag import Param, PipelineError, Recipe, RecipeDAG, get_recipe

__all__ = ["FlagSpec", "CommandSpec", "generate_cli", "RESERVED_FLAGS", "kebab"]

RESERVED_FLAGS = frozenset({"executor", "help"})


def kebab(name: str) -> str:
    s = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "-", name)
    return re.sub(r"[_\s]+", "-", s).lower()


@dataclass(frozen=True)
class FlagSpec:
    flag: str  # e.g. "--data-file"
    dest: str  # recipe parameter or artifact id it sets
    kind: str  # "param" or "artifact"
    type: str = "str"
    default: Any = None
    required: bool = False

    @property
    def metavar(self) -> str:
        return "<uri>" if self.kind == "artifact" else f"<{self.type}>"


@dataclass(frozen=True)
class CommandSpec:
    name: str
    recipe: str
    flags: tuple[FlagSpec, ...] = field(default_factory=tuple)
    help: str = ""

    def usage(self) -> str:
        parts = [self.name]
        for f in self.flags:
            parts.append(f"{f.flag} {f.metavar}" if f.required else f"[{f.flag} {f.metavar}]")
        parts.append("[--executor <local|parallel[:N]>]")
        return " ".join(parts)

    def add_to(self, subparsers) -> argparse.ArgumentParser:
        p = subparsers.add_parser(self.name, help=self.help, description=self.help)
        for f in self.flags:
            p.add_argument(f.flag, dest=f"recipe__{f.dest}", required=f.required, default=f.default,
                           metavar=f.metavar, help=f"{f.kind} {f.dest}" + (f" (default {f.default})"
                                                                           if f.default is not None else ""))
        p.add_argument("--executor", dest="recipe_executor", default=None,
                       help="local or parallel[:N] (defaults to the global --executor)")
        p.set_defaults(recipe_command=self)
        return p

    def split_args(self, ns: argparse.Namespace) -> tuple[dict[str, Any], dict[str, str]]:
        """Recipe parameter values and artifact URI overrides parsed from ``ns``."""
        params, uris = {}, {}
        for f in self.flags:
            v = getattr(ns, f"recipe__{f.dest}", None)
            if v is None:
                continue
            (params if f.kind == "param" else uris)[f.dest] = v
        return params, uris


def generate_cli(recipe: Recipe | RecipeDAG | str) -> CommandSpec:
    """One subcommand named after the recipe with a flag per parameter and per fixed source artifact."""
    if isinstance(recipe, str):
        recipe = get_recipe(recipe)
    if isinstance(recipe, Recipe):
        name, params, dag, doc = recipe.name, recipe.params, recipe.capture(), recipe.__doc__ or ""
    else:
        name, params, dag, doc = recipe.name, recipe.params, recipe, ""
    flags: list[FlagSpec] = []
    seen: set[str] = set()
    for p in params:
        if p.name in RESERVED_FLAGS or kebab(p.name) in RESERVED_FLAGS:
            raise PipelineError(f"recipe {name!r} parameter {p.name!r} collides with a reserved flag")
        flag = "--" + kebab(p.name)
        if flag in seen:
            raise PipelineError(f"recipe {name!r} has two parameters mapping to {flag}")
        seen.add(flag)
        flags.append(FlagSpec(flag, p.name, "param", p.type, p.default, p.required))
    # source artifacts bound to a parameter are covered by that parameter's flag
    for aid in dag.sources():
        spec = dag.artifacts[aid]
        if isinstance(spec.uri, Param):
            continue
        flag = "--" + kebab(aid)
        if kebab(aid) in RESERVED_FLAGS:
            raise PipelineError(f"recipe {name!r} artifact {aid!r} collides with a reserved flag")
        if flag in seen:
            continue
        seen.add(flag)
        flags.append(FlagSpec(flag, aid, "artifact", "str", spec.uri, False))
    summary = doc.strip().splitlines()[0] if doc.strip() else f"run recipe {name}"
    return CommandSpec(kebab(name), name, tuple(flags), summary)
