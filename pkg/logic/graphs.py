# Filename: logic/graphs.py
"""
Graphical Markov models compiled into zero-effect models.

- DAGs: well-numbering, one independence per node, prefix marginals
- Type IV chain graphs: marginals ``PA(K) u X`` per component, zeros from
  the D-sets of the block-recursive independences
- Path models: a DAG model with every surviving effect of more than two
  variables zeroed as well
"""

import logging
from itertools import combinations
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, model_validator

from core.exceptions import GraphError
from core.scheme import Effect, VariableScheme
from core.sequence import MarginalSequence
from .contrasts import CodingKind
from .modelspec import CIStatement, ModelSpec, compile_ci, d_set, zero_effect_model
from .parameterization import MLLParameterization

log = logging.getLogger(__name__)

Edge = Tuple[str, str]


# ------------------------------------------------------------------------------
# Graph container
# ------------------------------------------------------------------------------
class DirectedGraph(BaseModel):
    """
    DAG or chain graph over the scheme variables.

    :ivar scheme: Variable scheme; its variables are the nodes
    :ivar edges: Arrows ``(parent, child)``
    :ivar lines: Undirected edges inside chain components
    :ivar components: Chain components; derived from ``lines`` when omitted,
        taken as complete when given without ``lines``
    :ivar kind: ``dag`` or ``chain``
    """
    model_config = ConfigDict(frozen=True)

    scheme: VariableScheme
    edges: Tuple[Edge, ...] = ()
    lines: Tuple[Edge, ...] = ()
    components: Optional[Tuple[Tuple[str, ...], ...]] = None
    kind: Literal["dag", "chain"] = "dag"

    @model_validator(mode="after")
    def _check_nodes(self) -> "DirectedGraph":
        names = set(self.scheme.names)
        for a, b in self.edges + self.lines:
            if a not in names or b not in names:
                raise ValueError(f"edge ({a}, {b}) uses a variable outside the scheme")
            if a == b:
                raise ValueError(f"self loop on {a}")
        if self.kind == "dag" and (self.lines or self.components):
            raise ValueError("a DAG has no undirected edges or components")
        return self

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.scheme.names)
        g.add_edges_from(self.edges)
        return g

    def parents(self, nodes: Sequence[str]) -> List[str]:
        inside = set(nodes)
        found = {a for a, b in self.edges if b in inside and a not in inside}
        return [n for n in self.scheme.names if n in found]


def well_numbering(g: DirectedGraph) -> List[str]:
    """
    Topological order, ties broken by scheme position.

    :raises GraphError: on a directed cycle
    """
    dg = g.digraph()
    if not nx.is_directed_acyclic_graph(dg):
        cycle = [a for a, _ in nx.find_cycle(dg)]
        raise GraphError(f"graph has a directed cycle: {' -> '.join(cycle + cycle[:1])}", cycle=cycle)
    return list(nx.lexicographical_topological_sort(dg, key=g.scheme.position))


# ------------------------------------------------------------------------------
# DAG models
# ------------------------------------------------------------------------------
def dag_independences(g: DirectedGraph, order: Optional[Sequence[str]] = None) -> List[CIStatement]:
    """``V_i _||_ pre(V_i) \\ pa(V_i) | pa(V_i)`` for every node with non-parents before it."""
    order = list(order) if order is not None else well_numbering(g)
    scheme = g.scheme
    out = []
    for i, node in enumerate(order):
        pa = g.parents([node])
        rest = [v for v in order[:i] if v not in pa]
        if rest:
            out.append(CIStatement.of(scheme, [node], rest, pa))
    return out


def compile_dag(g: DirectedGraph, param: Optional[MLLParameterization] = None,
                sequence: Optional[MarginalSequence] = None,
                coding: CodingKind = "local") -> Tuple[MarginalSequence, List[CIStatement], ModelSpec]:
    """
    Compile a DAG into its zero-effect model.

    The default marginals are the prefixes ``{V_1}, {V_1, V_2}, ...`` of the
    well-numbering; ``sequence`` (or ``param``) overrides them.

    :raises GraphError: on a directed cycle
    :raises CompilationError: if the given sequence does not fit the independences
    """
    order = well_numbering(g)
    cis = dag_independences(g, order)
    scheme = g.scheme
    if param is not None:
        seq = param.sequence
    elif sequence is not None:
        seq = sequence
    else:
        seq = MarginalSequence(scheme=scheme, marginals=tuple(
            scheme.effect(order[:i + 1]) for i in range(len(order))))
    log.info(f"COMPILE: DAG well-numbering {order}, {len(cis)} independences")
    spec = compile_ci(cis, seq=seq, param=param, coding=coding, provenance="DAG")
    return seq, cis, spec


# ------------------------------------------------------------------------------
# Type IV chain graphs
# ------------------------------------------------------------------------------
def chain_components(g: DirectedGraph) -> List[List[str]]:
    """
    Well-numbered chain components.

    :raises GraphError: on overlapping components, arrows inside a component,
        lines across components or a directed cycle between components
    """
    scheme = g.scheme
    if g.components is not None:
        comps = [[n for n in scheme.names if n in set(c)] for c in g.components]
        seen = [n for c in comps for n in c]
        if sorted(seen) != sorted(scheme.names) or any(len(c) == 0 for c in comps):
            raise GraphError("chain components must partition the variables")
    else:
        ug = nx.Graph()
        ug.add_nodes_from(scheme.names)
        ug.add_edges_from(g.lines)
        comps = [[n for n in scheme.names if n in c] for c in nx.connected_components(ug)]

    owner: Dict[str, int] = {n: i for i, c in enumerate(comps) for n in c}
    for a, b in g.lines:
        if owner[a] != owner[b]:
            raise GraphError(f"undirected edge {a} - {b} joins two components")
    cg = nx.DiGraph()
    cg.add_nodes_from(range(len(comps)))
    for a, b in g.edges:
        if owner[a] == owner[b]:
            raise GraphError(f"arrow {a} -> {b} inside a chain component")
        cg.add_edge(owner[a], owner[b])
    if not nx.is_directed_acyclic_graph(cg):
        cycle = [comps[a][0] for a, _ in nx.find_cycle(cg)]
        raise GraphError("chain components form a directed cycle", cycle=cycle)
    first = {i: min(scheme.position(n) for n in c) for i, c in enumerate(comps)}
    return [comps[i] for i in nx.lexicographical_topological_sort(cg, key=first.get)]


def _neighbours(g: DirectedGraph, component: Sequence[str], nodes: Sequence[str]) -> set:
    inside = set(nodes)
    if g.lines or g.components is None:
        found = set()
        for a, b in g.lines:
            if a in inside:
                found.add(b)
            if b in inside:
                found.add(a)
        return found - inside
    return set(component) - inside


def _nonempty_subsets(items: Sequence[str]):
    for size in range(1, len(items) + 1):
        yield from combinations(items, size)


def chain_structure(g: DirectedGraph) -> Tuple[MarginalSequence, List[CIStatement]]:
    """Marginal sequence and block-recursive independences of a Type IV chain graph."""
    scheme = g.scheme
    comps = chain_components(g)
    marginals: List[Effect] = []
    cis: List[CIStatement] = []

    def push(m: Effect) -> None:
        if not m.is_empty and not any(m.issubset(p) for p in marginals):
            marginals.append(m)

    pre: List[str] = []
    for component in comps:
        parent_nodes = set(g.parents(component))
        # parent components, not only parent nodes
        pa = [n for c in comps if parent_nodes & set(c) for n in c]
        pa_eff = scheme.effect(pa)
        for m in sorted(pa_eff | scheme.effect(list(x)) for x in _nonempty_subsets(component)):
            push(m)
        push(scheme.effect(pre + list(component)))

        for x in _nonempty_subsets(component):
            rest = [n for n in component if n not in x and n not in _neighbours(g, component, x)]
            if rest:
                cis.append(CIStatement.of(scheme, list(x), rest, pa))
            pa_x = g.parents(x)
            others = [n for n in pa if n not in pa_x]
            if others:
                cis.append(CIStatement.of(scheme, list(x), others, pa_x))
        earlier = [n for n in pre if n not in pa]
        if earlier:
            cis.append(CIStatement.of(scheme, list(component), earlier, pa))
        pre = pre + list(component)
    return MarginalSequence(scheme=scheme, marginals=tuple(marginals)), cis


def compile_chain_type4(g: DirectedGraph, param: Optional[MLLParameterization] = None,
                        coding: CodingKind = "local") -> ModelSpec:
    """
    Compile a chain graph under the Type IV (multivariate regression) Markov property.

    :raises GraphError: on an invalid component structure
    """
    seq, cis = chain_structure(g)
    if param is not None and param.sequence != seq:
        log.warning("COMPILE: supplied parameterization does not use the chain-graph marginals; "
                    "the independences are checked against its own sequence")
        seq = param.sequence
    log.info(f"COMPILE: chain graph marginals {seq.labels()}, {len(cis)} independences")
    return compile_ci(cis, seq=seq, param=param, coding=coding, provenance="chain")


# ------------------------------------------------------------------------------
# Path models
# ------------------------------------------------------------------------------
def compile_path(g: DirectedGraph, param: Optional[MLLParameterization] = None,
                 sequence: Optional[MarginalSequence] = None, coding: CodingKind = "local") -> ModelSpec:
    """
    Two-step path model: the DAG zero set, then every remaining effect with
    more than two variables.
    """
    _, cis, dag_spec = compile_dag(g, param=param, sequence=sequence, coding=coding)
    param = dag_spec.param
    zeroed = {z.effect for z in dag_spec.zeroed_effects}
    extra = [b.effect for b in param.blocks if b.effect not in zeroed and len(b.effect) > 2]
    log.info(f"COMPILE: path model adds {len(extra)} zero effects to {len(zeroed)} graphical ones")
    return zero_effect_model(param, list(zeroed) + extra, provenance="path", cis=cis)


class MarginalLedger(BaseModel):
    """
    Effects of one marginal, split by their role in a path model.

    :ivar marginal: Marginal label
    :ivar effects: Every effect housed in the marginal
    :ivar graphical: Zeroed by the independences
    :ivar path: Zeroed in the second step
    :ivar remaining: Not zeroed
    """
    marginal: str
    effects: List[str]
    graphical: List[str]
    path: List[str]
    remaining: List[str]


class PathLedger(BaseModel):
    """
    Component counts of a path model (the empty effect counted as remaining).

    :ivar total: Number of cells, i.e. components including lambda_empty
    :ivar graphical: Components zeroed by the graph
    :ivar path: Components zeroed in the second step
    :ivar remaining: Components left to parameterize the model
    :ivar remaining_effects: Labels of the remaining effects
    :ivar marginals: Per-marginal breakdown
    """
    total: int
    graphical: int
    path: int
    remaining: int
    remaining_effects: List[str]
    marginals: List[MarginalLedger]


def path_ledger(spec: ModelSpec) -> PathLedger:
    """Split the zero set of a path model into its graphical and path parts."""
    param = spec.param
    scheme = param.scheme
    graphical = set()
    for ci in spec.cis:
        graphical.update(d_set(ci))
    zeroed = {z.effect for z in spec.zeroed_effects}
    counts = {"graphical": 0, "path": 0}
    rows: Dict[int, MarginalLedger] = {
        i: MarginalLedger(marginal=scheme.label(m), effects=[], graphical=[], path=[], remaining=[])
        for i, m in enumerate(param.sequence.marginals)}
    remaining: List[str] = []
    if not param.include_empty:
        rows[0].effects.append("∅")
        rows[0].remaining.append("∅")
        remaining.append("∅")
    for k, block in enumerate(param.blocks):
        row = rows[param.block_marginals[k]]
        label = scheme.label(block.effect)
        row.effects.append(label)
        if block.effect in zeroed and block.effect in graphical:
            row.graphical.append(label)
            counts["graphical"] += block.dimension
        elif block.effect in zeroed:
            row.path.append(label)
            counts["path"] += block.dimension
        else:
            row.remaining.append(label)
            remaining.append(label)
    total = scheme.n_cells
    return PathLedger(total=total, graphical=counts["graphical"], path=counts["path"],
                      remaining=total - counts["graphical"] - counts["path"],
                      remaining_effects=remaining, marginals=list(rows.values()))

