"""Scene files: a truncated space, the tuple's operator expressions, and a twist.

A scene is a JSON object::

    {"schema_version": 1, "name": "rotation_pair",
     "space": {"v": 2, "blocks": [{"D": 6, "r": 1}]},
     "tuple": [<expr>, <expr>],
     "twist": "derive" | [{"pair": [1, 2], "matrix": [[...]]} | {"pair": [1, 2], "expr": <expr>}],
     "compare_D": 4}

Expressions use the node format of :mod:`twistwold.expr`.  Unknown keys are
rejected at every level.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from twistwold.expr import ExprError, _check_unitary, from_json, matrix_from_json
from twistwold.graded import Block, DimensionError, GradedOperator, SpaceSpec
from twistwold.models import IsometryTuple, TwistFamily

SCHEMA_VERSION = 1
_TOP = {"schema_version", "name", "description", "space", "tuple", "twist", "compare_D"}
_REQUIRED = {"schema_version", "space", "tuple"}


class SceneError(ValueError):
    """The scene file is unreadable or does not describe a valid tuple."""


@dataclass(frozen=True, eq=False)
class Scene:
    name: str
    description: str
    space: SpaceSpec
    exprs: tuple
    twist_spec: object
    compare_D: int | None
    digest: str

    def tuple(self, space: SpaceSpec | None = None) -> IsometryTuple:
        """Evaluate the tuple on the scene's truncation or on another one."""
        space = space or self.space
        try:
            V = tuple(e.evaluate(space) for e in self.exprs)
        except (ExprError, DimensionError) as exc:
            raise SceneError(f"scene {self.name!r}: {exc}") from exc
        t = IsometryTuple(space, V, None, self.name)
        return t.with_twist(self._twist(t))

    def _twist(self, t: IsometryTuple) -> TwistFamily | None:
        from twistwold.twisted import derive_twist
        if self.twist_spec is None:
            return None
        if self.twist_spec == "derive":
            return derive_twist(t)
        U = {}
        for (i, j), item in self.twist_spec.items():
            if isinstance(item, np.ndarray):
                if item.shape != (t.space.total_dim,) * 2:
                    raise SceneError(f"twist U[{i},{j}] has shape {item.shape}, "
                                     f"space has dimension {t.space.total_dim}")
                U[(i, j)] = GradedOperator(t.space, item)
            else:
                U[(i, j)] = item.evaluate(t.space)
            try:
                _check_unitary(U[(i, j)].matrix, f"twist U[{i},{j}]", limit=1e-10)
            except ExprError as exc:
                raise SceneError(str(exc)) from exc
        return TwistFamily(t.n, U)


def _space(d) -> SpaceSpec:
    if not isinstance(d, dict) or set(d) - {"v", "blocks"} or not {"v", "blocks"} <= set(d):
        raise SceneError("space must be an object with exactly the keys 'v' and 'blocks'")
    if not isinstance(d["blocks"], list) or not d["blocks"]:
        raise SceneError("space.blocks must be a non-empty list")
    blocks = []
    for b in d["blocks"]:
        if not isinstance(b, dict) or set(b) - {"D", "r"} or "D" not in b:
            raise SceneError(f"bad block {b!r}; expected {{'D': int, 'r': int}}")
        blocks.append(Block(int(b["D"]), int(b.get("r", 1))))
    try:
        return SpaceSpec(int(d["v"]), tuple(blocks))
    except (ValueError, DimensionError) as exc:
        raise SceneError(str(exc)) from exc


def _twist_spec(raw, n: int):
    if raw is None or raw == "derive":
        return raw
    if not isinstance(raw, list):
        raise SceneError("twist must be \"derive\" or a list of {pair, matrix|expr} entries")
    out = {}
    for item in raw:
        if not isinstance(item, dict) or "pair" not in item or set(item) - {"pair", "matrix", "expr"} \
                or len(set(item) & {"matrix", "expr"}) != 1:
            raise SceneError(f"bad twist entry {item!r}")
        i, j = (int(x) for x in item["pair"])
        if not 1 <= i < j <= n:
            raise SceneError(f"twist pair ({i}, {j}) must satisfy 1 <= i < j <= {n}")
        out[(i, j)] = matrix_from_json(item["matrix"]) if "matrix" in item else from_json(item["expr"])
    missing = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1) if (i, j) not in out]
    if missing:
        raise SceneError(f"twist is missing pairs {missing}")
    return out


def parse_scene(text: str, source: str = "<scene>") -> Scene:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise SceneError(f"{source}: top level must be an object")
    unknown = set(d) - _TOP
    if unknown:
        raise SceneError(f"{source}: unknown keys {sorted(unknown)}")
    missing = _REQUIRED - set(d)
    if missing:
        raise SceneError(f"{source}: missing keys {sorted(missing)}")
    if d["schema_version"] != SCHEMA_VERSION:
        raise SceneError(f"{source}: unsupported schema_version {d['schema_version']!r}")
    space = _space(d["space"])
    if not isinstance(d["tuple"], list) or not d["tuple"]:
        raise SceneError(f"{source}: tuple must be a non-empty list of expressions")
    try:
        exprs = tuple(from_json(e) for e in d["tuple"])
        twist = _twist_spec(d.get("twist", "derive"), len(exprs))
    except ExprError as exc:
        raise SceneError(f"{source}: {exc}") from exc
    cD = d.get("compare_D")
    if cD is not None and (not isinstance(cD, int) or cD < 1):
        raise SceneError(f"{source}: compare_D must be a positive integer")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    scene = Scene(str(d.get("name", Path(source).stem)), str(d.get("description", "")),
                  space, exprs, twist, cD, digest)
    scene.tuple()  # surface evaluation errors (shapes, bad unitaries) at load time
    return scene


def load_scene(path) -> Scene:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneError(f"cannot read {p}: {exc}") from exc
    return parse_scene(text, str(p))


def corpus_names() -> list[str]:
    files = resources.files("twistwold") / "scenes"
    return sorted(f.name[:-5] for f in files.iterdir() if f.name.endswith(".json"))


def corpus_path(name: str) -> Path:
    return Path(str(resources.files("twistwold") / "scenes" / f"{name}.json"))


def corpus_scene(name: str) -> Scene:
    return load_scene(corpus_path(name))
