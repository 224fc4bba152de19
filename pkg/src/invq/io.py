"""JSON (schema 1) serialisation of models, tables, demonstrations and checkpoints.

Every document is an object with ``"schema": 1`` and a ``"kind"`` tag.
Transition models are stored sparsely as ``[state, action, next_state, p]``
rows; probabilities and table entries are decimal doubles (Python's repr
round-trips exactly).
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .mdp import TabularMdp, TrajectorySet

SCHEMA = 1


class SchemaError(ValueError):
    pass


def _header(kind):
    return {"schema": SCHEMA, "kind": kind}


def _check(d, kind):
    if d.get("schema") != SCHEMA:
        raise SchemaError(f"unsupported schema {d.get('schema')!r}, expected {SCHEMA}")
    if kind is not None and d.get("kind") != kind:
        raise SchemaError(f"expected a {kind!r} document, got {d.get('kind')!r}")


def mdp_to_dict(mdp: TabularMdp) -> dict:
    s, a, t = np.nonzero(mdp.transitions)
    entries = [[int(i), int(j), int(k), float(p)]
               for i, j, k, p in zip(s, a, t, mdp.transitions[s, a, t])]
    return {**_header("tabular_mdp"), "n_states": mdp.n_states, "n_actions": mdp.n_actions,
            "gamma": mdp.gamma, "terminal": mdp.terminal.astype(int).tolist(),
            "transitions": entries}


def mdp_from_dict(d: dict) -> TabularMdp:
    _check(d, "tabular_mdp")
    p = np.zeros((d["n_states"], d["n_actions"], d["n_states"]))
    for s, a, t, prob in d["transitions"]:
        p[s, a, t] = prob
    return TabularMdp(p, np.asarray(d["terminal"], dtype=bool), d["gamma"])


def table_to_dict(table, kind: str = "reward") -> dict:
    if kind not in ("reward", "policy", "q"):
        raise ValueError(f"unknown table kind {kind!r}")
    table = np.asarray(table, dtype=np.float64)
    return {**_header(kind), "n_states": table.shape[0], "n_actions": table.shape[1],
            "values": table.tolist()}


def table_from_dict(d: dict, kind: str | None = None) -> np.ndarray:
    _check(d, kind)
    return np.asarray(d["values"], dtype=np.float64).reshape(d["n_states"], d["n_actions"])


def trajectories_to_dict(demos: TrajectorySet) -> dict:
    return {**_header("trajectories"), "seed": demos.seed, "horizon": demos.horizon,
            "episodes": [np.asarray(ep, dtype=np.int64).tolist() for ep in demos.episodes]}


def trajectories_from_dict(d: dict) -> TrajectorySet:
    _check(d, "trajectories")
    eps = [np.asarray(ep, dtype=np.int64).reshape(-1, 3) for ep in d["episodes"]]
    return TrajectorySet(eps, seed=d.get("seed"), horizon=d.get("horizon", 0))


def instance_to_dict(inst) -> dict:
    return {**_header("objectworld"), "spec": asdict(inst.spec),
            "objects": inst.objects.tolist(),
            "true_reward": table_to_dict(inst.true_reward, "reward"),
            "features": inst.feature_matrix.tolist(),
            "mdp": mdp_to_dict(inst.mdp), "digest": inst.digest()}


def instance_from_dict(d: dict):
    from .objectworld import ObjectworldInstance, ObjectworldSpec

    _check(d, "objectworld")
    return ObjectworldInstance(
        spec=ObjectworldSpec(**d["spec"]),
        objects=np.asarray(d["objects"], dtype=np.int64).reshape(-1, 4),
        mdp=mdp_from_dict(d["mdp"]),
        true_reward=table_from_dict(d["true_reward"], "reward"),
        feature_matrix=np.asarray(d["features"], dtype=np.float64),
    )


def iql_checkpoint(state, cfg, rng: np.random.Generator | None = None) -> dict:
    d = {**_header("iql_checkpoint"), "config": cfg.to_dict(),
         "reward": state.reward.tolist(), "q": state.q.tolist(),
         "q_shifted": state.q_shifted.tolist(), "counter": state.counter.tolist(),
         "q_constrained": None if state.q_constrained is None else state.q_constrained.tolist(),
         "rng_state": None if rng is None else rng.bit_generator.state}
    return d


def iql_from_checkpoint(d: dict):
    """Returns ``(IqlState, IqlConfig, rng or None)``."""
    from .iql import IqlConfig, IqlState

    _check(d, "iql_checkpoint")
    arr = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
    st = IqlState(arr("reward"), arr("q"), arr("q_shifted"),
                  np.asarray(d["counter"], dtype=np.int64),
                  None if d["q_constrained"] is None else arr("q_constrained"))
    rng = None
    if d.get("rng_state") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng_state"]
    return st, IqlConfig(**d["config"]), rng


def save_replay_buffer(path, demos: TrajectorySet, feature_matrix) -> Path:
    """Writes the demonstrations as JSON plus a ``.features.npy`` sidecar."""
    path = Path(path)
    write_json(path, trajectories_to_dict(demos))
    sidecar = path.with_suffix(".features.npy")
    np.save(sidecar, np.asarray(feature_matrix, dtype=np.float64))
    return sidecar


def load_replay_buffer(path):
    path = Path(path)
    demos = trajectories_from_dict(read_json(path))
    return demos, np.load(path.with_suffix(".features.npy"))


def write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_any(path):
    """Load a document and return ``(kind, object)``."""
    d = read_json(path)
    _check(d, None)
    kind = d.get("kind")
    loaders = {
        "tabular_mdp": mdp_from_dict,
        "trajectories": trajectories_from_dict,
        "objectworld": instance_from_dict,
        "reward": table_from_dict,
        "policy": table_from_dict,
        "q": table_from_dict,
        "iql_checkpoint": iql_from_checkpoint,
    }
    if kind not in loaders:
        return kind, d
    return kind, loaders[kind](d)
