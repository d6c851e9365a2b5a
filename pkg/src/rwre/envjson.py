"""JSON documents for environments.

Schema (all kinds carry ``dim``, ``kind`` and an optional ``origin``)::

    {"dim": 1, "kind": "periodic", "extents": [2],
     "table": [[[[1], 0.7], [[-1], 0.3]],          # site 0: list of [displacement, prob]
               [[[1], "3/10"], [[-1], "7/10"]]]}   # site 1, exact rationals
    {"dim": 2, "kind": "iid", "seed": 17,
     "family": [{"weight": 0.5, "name": "a", "jumps": [[[1, 0], 0.5], ...]}, ...]}
    {"dim": 2, "kind": "column_ab", "prob_A": 0.5, "seed": 3}

Probabilities are JSON numbers (stored as floats) or strings (``"1/3"``,
``"0.25"``; stored exactly).  A law is exact only if all its entries are
strings; exact laws serialize back to ``"p/q"`` strings.
"""

from __future__ import annotations

import json
from fractions import Fraction

from .env_model import ColumnAB, Environment, JumpDistribution, Periodic, SeededIID


class SchemaError(ValueError):
    pass


def _require(doc: dict, key: str, kind=None):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def law_from_json(jumps, dim: int) -> JumpDistribution:
    if not isinstance(jumps, list) or not jumps:
        raise SchemaError("a jump law is a nonempty list of [displacement, prob]")
    pairs = []
    for entry in jumps:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise SchemaError(f"bad jump entry {entry!r}")
        y, p = entry
        if isinstance(y, int):
            y = [y]
        if not (isinstance(y, list) and len(y) == dim and all(isinstance(c, int) for c in y)):
            raise SchemaError(f"displacement {y!r} is not an integer vector of length {dim}")
        if isinstance(p, bool) or not isinstance(p, (int, float, str)):
            raise SchemaError(f"probability {p!r} must be a number or a string")
        if isinstance(p, int):
            p = float(p)
        pairs.append((y, p))
    try:
        return JumpDistribution.from_pairs(pairs)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def _prob_to_json(p):
    if isinstance(p, Fraction):
        return str(p)
    return p


def law_to_json(jd: JumpDistribution) -> list:
    probs = jd.exact if jd.exact is not None else jd.probs
    return [[list(y), _prob_to_json(p)] for y, p in zip(jd.displacements, probs)]


def env_from_json(doc: dict) -> Environment:
    if not isinstance(doc, dict):
        raise SchemaError("environment document must be an object")
    dim = _require(doc, "dim", int)
    kind = _require(doc, "kind", str)
    origin = tuple(doc.get("origin", ())) or ()
    try:
        if kind == "periodic":
            extents = _require(doc, "extents", list)
            table = [law_from_json(t, dim) for t in _require(doc, "table", list)]
            return Periodic(dim, extents=tuple(extents), table=tuple(table), origin=origin)
        if kind == "iid":
            fam = _require(doc, "family", list)
            laws = [law_from_json(_require(m, "jumps", list), dim) for m in fam]
            weights = [float(_require(m, "weight")) for m in fam]
            names = tuple(str(m["name"]) for m in fam) if all("name" in m for m in fam) else ()
            seed = _require(doc, "seed", int)
            return SeededIID(dim, family=tuple(laws), weights=tuple(weights), master_seed=seed, names=names, origin=origin)
        if kind == "column_ab":
            return ColumnAB(dim=dim, prob_A=float(_require(doc, "prob_A")), master_seed=_require(doc, "seed", int), origin=origin)
    except SchemaError:
        raise
    except (ValueError, TypeError) as exc:
        raise SchemaError(str(exc)) from exc
    raise SchemaError(f"unknown environment kind {kind!r}")


def env_to_json(env: Environment) -> dict:
    doc: dict = {"dim": env.dim, "kind": env.kind}
    if isinstance(env, Periodic):
        doc["extents"] = list(env.extents)
        doc["table"] = [law_to_json(jd) for jd in env.table]
    elif isinstance(env, SeededIID):
        doc["seed"] = env.master_seed
        doc["family"] = []
        for i, (jd, w) in enumerate(zip(env.family, env.weights)):
            member = {"weight": w, "jumps": law_to_json(jd)}
            if env.names:
                member["name"] = env.names[i]
            doc["family"].append(member)
    elif isinstance(env, ColumnAB):
        doc["prob_A"] = env.prob_A
        doc["seed"] = env.master_seed
    else:
        raise TypeError(f"cannot serialize {type(env).__name__}")
    if any(env.origin):
        doc["origin"] = list(env.origin)
    return doc


def load_env(path) -> Environment:
    with open(path) as fh:
        return env_from_json(json.load(fh))


def dump_env(env: Environment, path) -> None:
    with open(path, "w") as fh:
        json.dump(env_to_json(env), fh, indent=2)
