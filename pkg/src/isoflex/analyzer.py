"""Static dependency analysis over transaction templates.

Templates conflict at relation granularity. An RW edge from a reader template
to a writer template is *shielded* when every step pair producing it is
covered by a write-write conflict on a same-parameter item: the reader reads
and later writes relation S under the conflicting parameter (no later than
the conflicting read), and the writer also writes S. Such an anti-dependency
cannot commit in inverted order because the engine refuses lost updates, so
shielded edges are never dangerous.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .core import DependencyKind, IsolationLevel, Mode, Step, TransactionTemplate


class DuplicateTemplateName(ValueError):
    pass


class EmptyRegistry(ValueError):
    pass


class UnsupportedLevel(ValueError):
    pass


class TemplateRegistry:
    """Ordered set of templates with dense integer ids."""

    def __init__(self, templates: Iterable[TransactionTemplate] = ()):
        self._templates: list[TransactionTemplate] = []
        self._ids: dict[str, int] = {}
        for tpl in templates:
            self.register(tpl)

    def register(self, tpl: TransactionTemplate) -> int:
        if tpl.name in self._ids:
            raise DuplicateTemplateName(tpl.name)
        self._ids[tpl.name] = len(self._templates)
        self._templates.append(tpl)
        return self._ids[tpl.name]

    def __getitem__(self, name: str) -> TransactionTemplate:
        return self._templates[self._ids[name]]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __iter__(self):
        return iter(self._templates)

    def __len__(self) -> int:
        return len(self._templates)

    def id_of(self, name: str) -> int:
        return self._ids[name]

    def names(self) -> list[str]:
        return [t.name for t in self._templates]


def register_template(registry: TemplateRegistry, tpl: TransactionTemplate) -> int:
    return registry.register(tpl)


@dataclass(frozen=True, order=True)
class StaticEdge:
    src: str
    dst: str
    kind: DependencyKind
    relation: str
    shielded: bool = False

    def sort_key(self):
        return (self.src, self.dst, self.kind.value, self.relation)


@dataclass(frozen=True)
class StaticDependencyGraph:
    vertices: tuple[str, ...]
    edges: tuple[StaticEdge, ...]

    def rw_edges(self, include_shielded: bool = False) -> list[StaticEdge]:
        return [
            e for e in self.edges
            if e.kind is DependencyKind.RW and (include_shielded or not e.shielded)
        ]


@dataclass(frozen=True, order=True)
class TemplateRW:
    """Unshielded RW dependency between two templates, over one or more relations."""

    src: str
    dst: str
    relations: tuple[str, ...]


@dataclass(frozen=True, order=True)
class VulnerablePair:
    reader_template: str
    writer_template: str
    relations: tuple[str, ...]


@dataclass(frozen=True)
class VulnerableDependencySet:
    level: IsolationLevel
    pairs: tuple[VulnerablePair, ...]

    def reader_endpoints(self) -> frozenset[tuple[str, str]]:
        return frozenset((p.reader_template, r) for p in self.pairs for r in p.relations)

    def writer_endpoints(self) -> frozenset[tuple[str, str]]:
        return frozenset((p.writer_template, r) for p in self.pairs for r in p.relations)

    def __contains__(self, item) -> bool:
        """``(reader, writer)`` or ``(reader, writer, relation)`` membership."""
        if isinstance(item, VulnerablePair):
            return item in self.pairs
        reader, writer = item[0], item[1]
        rel = item[2] if len(item) > 2 else None
        return any(
            p.reader_template == reader and p.writer_template == writer and (rel is None or rel in p.relations)
            for p in self.pairs
        )


def _shielded(reader: TransactionTemplate, read_idx: int, writer: TransactionTemplate, write_step: Step) -> bool:
    read_step = reader.steps[read_idx]
    param = read_step.key_param
    writer_rels = {s.relation for s in writer.steps if s.mode is Mode.WRITE}
    for rel in writer_rels:
        read_first = any(
            s.mode is Mode.READ and s.relation == rel and s.key_param == param
            for s in reader.steps[: read_idx + 1]
        )
        if not read_first:
            continue
        if any(s.mode is Mode.WRITE and s.relation == rel and s.key_param == param for s in reader.steps):
            if any(s.mode is Mode.WRITE and s.relation == rel and s.key_param == write_step.key_param for s in writer.steps):
                return True
    return False


def build_static_graph(registry: TemplateRegistry) -> StaticDependencyGraph:
    templates = list(registry)
    if not templates:
        raise EmptyRegistry("no templates registered")

    found: dict[tuple, bool] = {}

    def add(src, dst, kind, rel, shielded=False):
        key = (src, dst, kind, rel)
        found[key] = found.get(key, True) and shielded

    for a in templates:
        for b in templates:
            for i, sa in enumerate(a.steps):
                for sb in b.steps:
                    if sa.relation != sb.relation:
                        continue
                    if sa.mode is Mode.WRITE and sb.mode is Mode.WRITE:
                        add(a.name, b.name, DependencyKind.WW, sa.relation)
                    elif sa.mode is Mode.WRITE and sb.mode is Mode.READ:
                        add(a.name, b.name, DependencyKind.WR, sa.relation)
                    elif sa.mode is Mode.READ and sb.mode is Mode.WRITE:
                        add(a.name, b.name, DependencyKind.RW, sa.relation, _shielded(a, i, b, sb))

    edges = sorted(
        (StaticEdge(s, d, k, r, shielded if k is DependencyKind.RW else False) for (s, d, k, r), shielded in found.items()),
        key=StaticEdge.sort_key,
    )
    return StaticDependencyGraph(tuple(sorted(registry.names())), tuple(edges))


def _check_level(level: IsolationLevel) -> None:
    if level not in (IsolationLevel.RC, IsolationLevel.SI):
        raise UnsupportedLevel(f"no dangerous structures defined for {level.value}")


def template_rw_edges(g: StaticDependencyGraph) -> list[TemplateRW]:
    grouped: dict[tuple[str, str], list[str]] = {}
    for e in g.rw_edges():
        grouped.setdefault((e.src, e.dst), []).append(e.relation)
    return [TemplateRW(s, d, tuple(sorted(rels))) for (s, d), rels in sorted(grouped.items())]


def find_dangerous_structures(g: StaticDependencyGraph, level: IsolationLevel) -> list[tuple[TemplateRW, ...]]:
    """RC: each unshielded RW template edge. SI: each ordered pair of consecutive ones."""
    _check_level(level)
    rw = template_rw_edges(g)
    if level is IsolationLevel.RC:
        return [(e,) for e in rw]
    return [(first, second) for first in rw for second in rw if first.dst == second.src]


def find_vulnerable_dependencies(g: StaticDependencyGraph, level: IsolationLevel) -> VulnerableDependencySet:
    if level is IsolationLevel.SER:
        return VulnerableDependencySet(level, ())
    _check_level(level)
    rw = template_rw_edges(g)
    if level is IsolationLevel.RC:
        chosen = rw
    else:
        targets = {e.dst for e in rw}
        chosen = [e for e in rw if e.src in targets]
    return VulnerableDependencySet(level, tuple(VulnerablePair(e.src, e.dst, e.relations) for e in chosen))


def _quote(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(g: StaticDependencyGraph, level: IsolationLevel = IsolationLevel.RC) -> str:
    vulnerable = find_vulnerable_dependencies(g, level) if level is not IsolationLevel.SER else None
    lines = ["digraph static_dependencies {"]
    for v in g.vertices:
        lines.append(f"  {_quote(v)};")
    for e in g.edges:
        attrs = [f'label="{e.kind.value.lower()}"', f"relation={_quote(e.relation)}"]
        if vulnerable is not None and e.kind is DependencyKind.RW and (e.src, e.dst, e.relation) in vulnerable:
            attrs.append("style=dashed")
        lines.append(f"  {_quote(e.src)} -> {_quote(e.dst)} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_templates(path) -> TemplateRegistry:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return templates_from_json(data)


def templates_from_json(data) -> TemplateRegistry:
    if not isinstance(data, list):
        raise ValueError("template file must hold a JSON array")
    registry = TemplateRegistry()
    for entry in data:
        steps = [(s["mode"], s["relation"], int(s["key_param"])) for s in entry["steps"]]
        registry.register(TransactionTemplate.build(entry["name"], int(entry["arity"]), steps))
    return registry


def templates_to_json(registry: TemplateRegistry) -> list[dict]:
    return [
        {
            "name": t.name,
            "arity": t.arity,
            "steps": [{"mode": s.mode.value.lower(), "relation": s.relation, "key_param": s.key_param} for s in t.steps],
        }
        for t in registry
    ]


@dataclass(frozen=True)
class AnalysisResult:
    graph: StaticDependencyGraph
    vulnerable: dict

    def for_level(self, level: IsolationLevel) -> VulnerableDependencySet:
        return self.vulnerable[level]


def analyze(registry: TemplateRegistry) -> AnalysisResult:
    """Build the graph and the vulnerable sets for every level (SER is empty)."""
    g = build_static_graph(registry)
    return AnalysisResult(g, {lvl: find_vulnerable_dependencies(g, lvl) for lvl in IsolationLevel})
