"""Random structurally valid DAGs for serialization tests."""

import numpy as np

from skillnlu.pipeline.dag import ArtifactSpec, NodeSpec, Param, RecipeDAG, RecipeParam


def _value(rng, params, depth=0):
    r = rng.random()
    if params and r < 0.15:
        return Param(params[int(rng.integers(len(params)))])
    if depth < 2 and r < 0.3:
        return [_value(rng, params, depth + 1) for _ in range(int(rng.integers(3)))]
    if depth < 2 and r < 0.4:
        return {f"k{i}": _value(rng, params, depth + 1) for i in range(int(rng.integers(3)))}
    choice = int(rng.integers(5))
    return [None, bool(rng.integers(2)), int(rng.integers(-1000, 1000)), float(rng.normal()), f"s{rng.integers(99)}"][choice]


def random_dag(seed, max_nodes=12):
    rng = np.random.default_rng(seed)
    params = [f"p{i}" for i in range(int(rng.integers(4)))]
    rparams = [RecipeParam(p, str(rng.choice(["str", "int", "float", "bool"])), None, bool(rng.integers(2)))
               for p in params]
    artifacts, nodes = [], []
    available = []
    for s in range(int(rng.integers(1, 4))):
        uri = Param(params[0]) if params and rng.random() < 0.3 else f"mem://src/{seed}/{s}"
        artifacts.append(ArtifactSpec(f"src{s}", uri))
        available.append(f"src{s}")
    for i in range(int(rng.integers(1, max_nodes + 1))):
        k = int(rng.integers(0, min(3, len(available)) + 1))
        ins = {f"in{j}": a for j, a in enumerate(rng.choice(available, k, replace=False).tolist())}
        outs = {}
        for j in range(int(rng.integers(1, 3))):
            aid = f"n{i}_o{j}"
            uri = None if rng.random() < 0.7 else f"kv://rand/{seed}/{aid}"
            artifacts.append(ArtifactSpec(aid, uri))
            outs[f"out{j}"] = aid
            available.append(aid)
        node_params = {f"q{j}": _value(rng, params) for j in range(int(rng.integers(3)))}
        nodes.append(NodeSpec(f"node{i}", f"act{int(rng.integers(5))}", ins, outs, node_params))
    dag = RecipeDAG(f"random{seed}", rparams, artifacts, nodes)
    dag.outputs = dag.sinks()
    used = {a for n in nodes for a in list(n.inputs.values()) + list(n.outputs.values())}
    dag.artifacts = {k: v for k, v in dag.artifacts.items() if k in used}
    return dag.validate(check_activities=False)
