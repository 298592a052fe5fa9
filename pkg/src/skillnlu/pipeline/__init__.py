"""Workflow engine: activities over artifacts, recipes captured as DAGs, local executors."""

from .artifacts import ARTIFACT_ROOT_ENV, Artifact, ArtifactError, artifact_root, kv_artifact
from .cli_gen import CommandSpec, FlagSpec, generate_cli
from .dag import (
    CycleError,
    Param,
    PipelineError,
    ProducerConflictError,
    RecipeDAG,
    SchemaVersionError,
    UnknownActivityError,
    activity,
    capture_recipe,
    deserialize_dag,
    recipe,
    registered_recipes,
    serialize_dag,
)
from .executors import (
    ParallelExecutor,
    RemoteExecutor,
    RetryPolicy,
    RunReport,
    SequentialExecutor,
    execute,
    make_executor,
)

__all__ = [
    "ARTIFACT_ROOT_ENV",
    "Artifact",
    "ArtifactError",
    "CommandSpec",
    "CycleError",
    "FlagSpec",
    "ParallelExecutor",
    "Param",
    "PipelineError",
    "ProducerConflictError",
    "RecipeDAG",
    "RemoteExecutor",
    "RetryPolicy",
    "RunReport",
    "SchemaVersionError",
    "SequentialExecutor",
    "UnknownActivityError",
    "activity",
    "artifact_root",
    "capture_recipe",
    "deserialize_dag",
    "execute",
    "generate_cli",
    "kv_artifact",
    "make_executor",
    "recipe",
    "registered_recipes",
    "serialize_dag",
]
