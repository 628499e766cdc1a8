"""Depth-reducing plan rewrites.

* R1, mask isolation: every predicate subtree is computed once; structurally
  identical subtrees are merged into one mask node.
* R2, independent evaluation: a predicate evaluated on an already-filtered
  column is moved onto the base column and intersected with the earlier mask
  instead, so conjuncts over disjoint attributes run side by side and meet in
  one depth-balanced product.
* R3, late injection: when the plan is still over budget, a filter on the
  reference side of a join is no longer applied to the join key; the join runs
  on raw keys and the filter mask is carried across the join (extract and
  broadcast per reference row) to the stage chosen by :func:`choose_injection`.

All rules only ever replace a subexpression by an equivalent one, given that
masks are 0/1, reference keys are unique and positive, and padding/filtered
slots hold 0.
"""

from __future__ import annotations

from typing import Callable

from . import depth as dp
from .cost import choose_injection
from .errors import InfeasibleWithoutBootstrap
from .plan import (
    PREDICATE_KINDS,
    Plan,
    PlanNode,
    annotate_depth,
    pred_at_zero,
    explain,
    make,
    topo_order,
)


def transform(plan: Plan, fn: Callable[[PlanNode], PlanNode | None]) -> Plan:
    """Bottom-up rebuild; ``fn`` sees each node with already-rewritten inputs."""
    mapping: dict[int, PlanNode] = {}
    for node in plan.nodes():
        new_inputs = tuple(mapping[i.nid] for i in node.inputs)
        if any(a is not b for a, b in zip(new_inputs, node.inputs)):
            node2 = make(node.kind, new_inputs, node.params, node.rowspace)
        else:
            node2 = node
        out = fn(node2)
        mapping[node.nid] = node2 if out is None else out
    return plan.replace_outputs(mapping)


# -- R1 ------------------------------------------------------------------------------

def rewrite_r1_mask_isolation(plan: Plan) -> Plan:
    """Merge structurally identical subtrees (common subexpressions)."""
    canon: dict = {}
    mapping: dict[int, PlanNode] = {}
    for node in plan.nodes():
        ins = tuple(mapping[i.nid] for i in node.inputs)
        key = (node.kind, node.params, node.rowspace, tuple(i.nid for i in ins))
        hit = canon.get(key)
        if hit is None:
            hit = node if all(a is b for a, b in zip(ins, node.inputs)) else make(
                node.kind, ins, node.params, node.rowspace)
            canon[key] = hit
        mapping[node.nid] = hit
    return plan.replace_outputs(mapping)


# -- shared helpers ------------------------------------------------------------------

def split_select(node: PlanNode) -> tuple[PlanNode, tuple[PlanNode, ...]]:
    """(base value, masks) of a possibly nested select_apply."""
    masks: list[PlanNode] = []
    while node.kind == "select_apply":
        masks.extend(node.inputs[1:])
        node = node.inputs[0]
    return node, tuple(masks)


def _factors(nodes) -> list[PlanNode]:
    out, seen = [], set()
    for n in nodes:
        parts = n.inputs if n.kind == "and" else (n,)
        for f in parts:
            if f.nid not in seen:
                seen.add(f.nid)
                out.append(f)
    return out


def intersect(masks) -> PlanNode:
    """Flattened n-ary intersection (the executor multiplies depth-aware)."""
    factors = _factors(masks)
    if len(factors) == 1:
        return factors[0]
    return make("and", factors)


def restrict(value: PlanNode, masks) -> PlanNode:
    base, inner = split_select(value)
    factors = _factors(list(inner) + list(masks))
    if not factors:
        return base
    return make("select_apply", (base, *factors), rowspace=value.rowspace)


def _flatten(node: PlanNode) -> PlanNode | None:
    if node.kind == "and" and any(i.kind == "and" for i in node.inputs):
        return intersect(node.inputs)
    if node.kind == "select_apply":
        base, masks = split_select(node)
        if any(m.kind == "and" for m in masks) or node.inputs[0].kind == "select_apply":
            return restrict(base, masks)
    return None


def _with_inputs(node: PlanNode, inputs, rowspace: str | None = None) -> PlanNode:
    return make(node.kind, inputs, node.params, node.rowspace if rowspace is None else rowspace)


# -- R2 ------------------------------------------------------------------------------

def _strip_filtered_inputs(node: PlanNode, require_disjoint: bool):
    """For a comparison over filtered operands, return (masks, comparison on
    the base operands), or None when the pattern does not apply."""
    if node.kind not in PREDICATE_KINDS:
        return None
    split = [split_select(i) for i in node.inputs]
    mask_sets = [frozenset(m.nid for m in masks) for _, masks in split]
    if not mask_sets[0] or any(s != mask_sets[0] for s in mask_sets):
        return None
    masks = split[0][1]
    bare = _with_inputs(node, [b for b, _ in split])
    if require_disjoint:
        mask_attrs = frozenset().union(*(m.attrs for m in masks))
        if bare.attrs & mask_attrs:
            return None
    return masks, bare


# operators that act slot by slot; a guard mask can be pushed through them
_SLOTWISE = PREDICATE_KINDS | {"and", "or", "not", "group_by", "order_by", "arith"}


def _strip_guarded(factors: list[PlanNode], present: set[int]) -> list[PlanNode] | None:
    """Factors of one product, with operands filtered by masks that are
    themselves factors of the product replaced by the unfiltered operands.

    Where such a mask is 1 both forms agree; where it is 0 the product is 0
    either way.  Only slot-wise subexpressions are rewritten, and an operand
    is left filtered when it shares a base column with its masks.  Returns
    None when nothing changes.
    """

    def strip(f: PlanNode) -> PlanNode | None:
        if f.kind == "select_apply":
            base, masks = split_select(f)
            if masks and all(m.nid in present for m in masks):
                if not base.attrs & frozenset().union(*(m.attrs for m in masks)):
                    return strip(base) or base
            return None
        if f.kind in _SLOTWISE:
            new = [strip(i) for i in f.inputs]
            if any(x is not None for x in new):
                return _with_inputs(f, [x or i for x, i in zip(new, f.inputs)])
        return None

    out = [strip(f) for f in factors]
    if all(x is None for x in out):
        return None
    return [x or f for x, f in zip(out, factors)]


def rewrite_r2_independent_eval(plan: Plan) -> Plan:
    """Evaluate predicates on base columns and intersect the masks."""

    def rule(node: PlanNode):
        hit = _strip_filtered_inputs(node, require_disjoint=True)
        if hit is not None and pred_at_zero(node) == 0:
            masks, bare = hit
            return intersect([*masks, bare])
        # a guarded comparison: P(x filtered by M) AND M  ->  P(x) AND M
        if node.kind == "and":
            factors = _factors(node.inputs)
            parts = _strip_guarded(factors, {f.nid for f in factors})
            if parts is not None:
                return intersect(parts)
        if node.kind == "select_apply":
            base, masks = split_select(node)
            factors = _factors(masks)
            parts = _strip_guarded(factors, {f.nid for f in factors})
            if parts is not None:
                return restrict(base, parts)
        return _flatten(node)

    return rewrite_r1_mask_isolation(transform(rewrite_r1_mask_isolation(plan), rule))


# -- R3 ------------------------------------------------------------------------------

def stage_depth(p: int) -> int:
    """Per-join-stage depth d_s = ceil(log2(p-1)) + 1."""
    return dp.ceil_log2(p - 1) + 1


def _join_stages(plan: Plan, table: str) -> int:
    parents = plan.info.get("parents", {})
    m = 0
    while table in parents:
        table = parents[table]
        m += 1
    return m


def _carry_masks(plan: Plan, chosen: dict[int, list]) -> Plan:
    """Run the chosen joins on raw keys and carry their masks across."""
    carried: dict[int, tuple[PlanNode, PlanNode]] = {}
    mapping: dict[int, PlanNode] = {}
    for node in plan.nodes():
        ins = tuple(mapping[i.nid] for i in node.inputs)
        old_inputs = node.inputs
        if node.kind == "join" and node.nid in chosen:
            rebuilt = _with_inputs(node, ins)
            base, masks = split_select(rebuilt.inputs[1])
            raw = _with_inputs(rebuilt, (rebuilt.inputs[0], base))
            inj = make("mask_inject", (raw, intersect(masks)), (node.params[0],), rowspace=node.rowspace)
            carried[node.nid] = (raw, inj)
            mapping[node.nid] = raw
            continue
        src = old_inputs[0] if old_inputs else None
        if src is not None and src.nid in carried and node.kind in ("gather", "mask_inject", "match"):
            raw, inj = carried[src.nid]
            if node.kind == "match":
                mapping[node.nid] = inj
            elif node.kind == "gather":
                mapping[node.nid] = restrict(_with_inputs(node, (raw, ins[1])), [inj])
            else:
                mapping[node.nid] = intersect([_with_inputs(node, (raw, ins[1])), inj])
            continue
        if any(a is not b for a, b in zip(ins, old_inputs)):
            mapping[node.nid] = _with_inputs(node, ins)
        else:
            mapping[node.nid] = node
    return plan.replace_outputs(mapping)


def _push_below_joins(plan: Plan) -> Plan:
    """Local rules used once R3 is active (each sound because P(0) = 0):

    * P(x restricted by M)      -> M AND P(x)
    * P(gather(J, x))           -> mask_inject(J, P(x))
    * gather(J, x restricted M) -> gather(J, x) restricted by mask_inject(J, M)
    """

    def rule(node: PlanNode):
        if node.kind in PREDICATE_KINDS and pred_at_zero(node) == 0:
            hit = _strip_filtered_inputs(node, require_disjoint=False)
            if hit is not None:
                masks, bare = hit
                return intersect([*masks, rule(bare) or bare])
            if all(i.kind == "gather" for i in node.inputs):
                joins = {i.inputs[0].nid for i in node.inputs}
                if len(joins) == 1:
                    jm = node.inputs[0].inputs[0]
                    ref_cols = [i.inputs[1] for i in node.inputs]
                    inner = _with_inputs(node, ref_cols, ref_cols[0].rowspace)
                    inner = rule(inner) or inner
                    return make("mask_inject", (jm, inner), (jm.params[0],), rowspace=node.rowspace)
        if node.kind == "gather" and node.inputs[1].kind == "select_apply":
            jm = node.inputs[0]
            base, masks = split_select(node.inputs[1])
            inj = make("mask_inject", (jm, intersect(masks)), (jm.params[0],), rowspace=node.rowspace)
            return restrict(_with_inputs(node, (jm, base)), [inj])
        return _flatten(node)

    return rewrite_r1_mask_isolation(transform(plan, rule))


def _filtered_joins(plan: Plan) -> list[PlanNode]:
    return [n for n in plan.nodes() if n.kind == "join" and n.inputs[1].kind == "select_apply"]


def rewrite_r3_late_injection(plan: Plan, c_mul=1, c_boot=100_000) -> Plan:
    """Push filter masks past joins until the plan fits the depth budget.

    Raises :class:`InfeasibleWithoutBootstrap` when even maximal late
    injection leaves the deepest path over budget.
    """
    budget = plan.params.depth_budget
    if annotate_depth(plan).deepest <= budget:
        return plan
    p = plan.params.p
    d_s = stage_depth(p)
    log: list[str] = []
    current = _push_below_joins(plan)
    for _ in range(len(plan.nodes()) + 1):
        ann = annotate_depth(current)
        chosen: dict[int, list] = {}
        for j in _filtered_joins(current):
            _, masks = split_select(j.inputs[1])
            mask_depth = dp.product_depth([ann.of(m) for m in masks])
            m = 1 + _join_stages(current, j.rowspace)
            b_eff = budget - mask_depth
            i_star = choose_injection(m, d_s, c_mul, c_boot, b_eff)
            ref = j.params[1] if len(j.params) > 1 else "?"
            log.append(f"join {ref}->{j.rowspace}: m={m} d_s={d_s} mask depth={dp.fmt(mask_depth)} "
                       f"B_eff={dp.fmt(b_eff)} i*={i_star}")
            if i_star >= 1:
                chosen[j.nid] = [i_star]
        if not chosen:
            break
        current = _push_below_joins(_carry_masks(current, chosen))
    if annotate_depth(current).deepest > budget:
        # fall back to carrying every join mask all the way to the sink
        while _filtered_joins(current):
            chosen = {j.nid: [] for j in _filtered_joins(current)}
            log.append("fallback: carry all remaining join masks")
            current = _push_below_joins(_carry_masks(current, chosen))
    current.info["injection"] = log
    deepest = annotate_depth(current).deepest
    if deepest > budget:
        raise InfeasibleWithoutBootstrap(deepest, budget, explain(current, plan))
    return current


def optimize(plan: Plan, c_mul=1, c_boot=100_000) -> Plan:
    """R1, then R2, then R3 if the plan is still over budget."""
    out = rewrite_r1_mask_isolation(plan)
    out = rewrite_r2_independent_eval(out)
    out = rewrite_r3_late_injection(out, c_mul, c_boot)
    out.info["optimized"] = True
    return out
