"""Discrete cell descriptions and their on-disk JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .ops import OperationKind

GENOTYPE_VERSION = 1


class GenotypeError(ValueError):
    """Malformed or structurally invalid genotype; message carries the location."""


Pair = tuple[OperationKind, int]


@dataclass(frozen=True)
class Genotype:
    normal: tuple[Pair, ...]
    normal_concat: tuple[int, ...]
    reduce: tuple[Pair, ...]
    reduce_concat: tuple[int, ...]

    def __post_init__(self):
        for name in ("normal", "reduce"):
            _validate_cell(getattr(self, name), getattr(self, name + "_concat"), name)

    @property
    def nodes(self) -> int:
        return len(self.normal) // 2

    def ops(self, cell: str | None = None) -> list[OperationKind]:
        """Chosen kinds of one cell type, or of both when ``cell`` is None."""
        if cell is None:
            return self.ops("normal") + self.ops("reduce")
        if cell not in ("normal", "reduce"):
            raise ValueError(f"cell must be 'normal' or 'reduce', got {cell!r}")
        return [k for k, _ in getattr(self, cell)]

    def count(self, kind: OperationKind, cell: str | None = None) -> int:
        return sum(1 for k in self.ops(cell) if k is kind)

    def to_dict(self) -> dict:
        return {
            "version": GENOTYPE_VERSION,
            "normal": [[k.value, i] for k, i in self.normal],
            "normal_concat": list(self.normal_concat),
            "reduce": [[k.value, i] for k, i in self.reduce],
            "reduce_concat": list(self.reduce_concat),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj) -> "Genotype":
        if not isinstance(obj, dict):
            raise GenotypeError(f"$: expected an object, got {type(obj).__name__}")
        expected = {"version", "normal", "normal_concat", "reduce", "reduce_concat"}
        missing = expected - obj.keys()
        if missing:
            raise GenotypeError(f"$: missing field(s) {sorted(missing)}")
        extra = obj.keys() - expected
        if extra:
            raise GenotypeError(f"$: unknown field(s) {sorted(extra)}")
        if obj["version"] != GENOTYPE_VERSION:
            raise GenotypeError(f"$.version: unsupported version {obj['version']!r}")
        cells = {}
        for name in ("normal", "reduce"):
            cells[name] = _parse_pairs(obj[name], name)
            concat = obj[name + "_concat"]
            if not isinstance(concat, list) or not all(_is_int(c) for c in concat):
                raise GenotypeError(f"$.{name}_concat: expected a list of integers")
            cells[name + "_concat"] = tuple(concat)
        try:
            return cls(**cells)
        except GenotypeError as exc:
            raise GenotypeError(f"$.{exc}") from None

    @classmethod
    def loads(cls, text: str) -> "Genotype":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GenotypeError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(obj)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_pairs(raw, name: str) -> tuple[Pair, ...]:
    if not isinstance(raw, list):
        raise GenotypeError(f"$.{name}: expected a list of [op, from] pairs")
    pairs = []
    for i, item in enumerate(raw):
        loc = f"$.{name}[{i}]"
        if not (isinstance(item, list) and len(item) == 2):
            raise GenotypeError(f"{loc}: expected [op, from]")
        op, src = item
        if not isinstance(op, str):
            raise GenotypeError(f"{loc}[0]: operation name must be a string")
        try:
            kind = OperationKind.parse(op)
        except ValueError as exc:
            raise GenotypeError(f"{loc}[0]: {exc}") from None
        if not _is_int(src):
            raise GenotypeError(f"{loc}[1]: predecessor must be an integer")
        pairs.append((kind, src))
    return tuple(pairs)


def _validate_cell(pairs, concat, name: str) -> None:
    if len(pairs) == 0 or len(pairs) % 2:
        raise GenotypeError(f"{name}: expected 2 pairs per intermediate node, got {len(pairs)}")
    nodes = len(pairs) // 2
    for j in range(nodes):
        node = j + 2
        (k0, a), (k1, b) = pairs[2 * j], pairs[2 * j + 1]
        for off, (k, src) in enumerate(((k0, a), (k1, b))):
            loc = f"{name}[{2 * j + off}]"
            if not isinstance(k, OperationKind):
                raise GenotypeError(f"{loc}: {k!r} is not an OperationKind")
            if k is OperationKind.zero:
                raise GenotypeError(f"{loc}: 'zero' cannot appear in a discrete cell")
            if not 0 <= src < node:
                raise GenotypeError(f"{loc}: predecessor {src} does not precede node {node}")
        if a == b:
            raise GenotypeError(f"{name}[{2 * j}]: node {node} uses predecessor {a} twice")
    if tuple(concat) != tuple(range(2, 2 + nodes)):
        raise GenotypeError(f"{name}_concat: expected {list(range(2, 2 + nodes))}, got {list(concat)}")


def save_genotype(g: Genotype, path) -> None:
    Path(path).write_text(g.dumps())


def load_genotype(path) -> Genotype:
    return Genotype.loads(Path(path).read_text())
