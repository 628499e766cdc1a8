"""SQL operators built from masks, rotations and additions.

Columns are handled as lists of HEVectors (one per n-row chunk).  Row counts
are public, so the validity of padding slots is a plaintext 0/1 vector and
correcting for it costs no depth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import predicates as pr
from .catalog import EncryptedColumn, decode_value, validity_mask
from .errors import CatalogError
from .vector import (
    HEVector,
    broadcast,
    he_add,
    he_mul,
    he_plain_mul,
    product_balanced,
    rotate_sum,
    sum_balanced,
)

Chunks = list  # list[HEVector], one per n-row chunk


def chunks_of(col) -> Chunks:
    return list(col.vectors) if isinstance(col, EncryptedColumn) else list(col)


@dataclass
class AggregatePair:
    """SUM and COUNT from the same reduction; AVG = sum / count on the client."""

    sum: HEVector
    count: HEVector


@dataclass
class JoinResult:
    """Join outputs.  ``masks[j]`` is the match mask of reference row j over
    the fact chunks; ``outputs[attr]`` is either one chunk list per reference
    row or, when fused, the single accumulated chunk list."""

    ref_rows: int
    masks: list[Chunks]
    outputs: dict[str, list] = field(default_factory=dict)
    fused: bool = True

    @property
    def output_count(self) -> int:
        return 1 if self.fused else self.ref_rows


@dataclass
class OrderedGroup:
    key: tuple
    mask: Chunks
    count: HEVector


def select_apply(col, mask: Chunks) -> Chunks:
    """Keep values where the mask is 1, encrypted zero elsewhere."""
    values = chunks_of(col)
    if len(values) != len(mask):
        raise ValueError(f"column has {len(values)} chunks, mask has {len(mask)}")
    return [he_mul(v, m) for v, m in zip(values, mask)]


def apply_validity(values: Chunks, rows: int) -> Chunks:
    """Zero the padding slots (free: plaintext multiplication)."""
    out = []
    for c, v in enumerate(values):
        if rows >= (c + 1) * v.n:
            out.append(v)
        else:
            out.append(he_plain_mul(v, v.backend.plain(validity_mask(rows, c, v.n))))
    return out


def reduce_chunks(values: Chunks, rows: int) -> HEVector:
    """Sum of all valid slots of a chunked column, in every slot."""
    return rotate_sum(sum_balanced(apply_validity(values, rows)))


def count(mask: Chunks, rows: int) -> HEVector:
    return reduce_chunks(mask, rows)


def sum_(col, mask: Chunks | None, rows: int) -> HEVector:
    values = chunks_of(col)
    if mask is not None:
        values = select_apply(values, mask)
    return reduce_chunks(values, rows)


def avg(col, mask: Chunks, rows: int) -> AggregatePair:
    return AggregatePair(sum_(col, mask, rows), count(mask, rows))


def eq_masks(col, values: Iterable[int]) -> dict[int, Chunks]:
    chunks = chunks_of(col)
    return {v: [pr.eq(c, v) for c in chunks] for v in values}


def group_by(cols: Sequence[EncryptedColumn]) -> list[tuple[tuple, Chunks]]:
    """One mask per key tuple of the cross product of the column domains,
    in lexicographic key order."""
    for c in cols:
        if not c.spec.enumerable:
            raise CatalogError(f"GROUP BY column {c.spec.name} is not dictionary-encoded")
    per_col = [eq_masks(c, c.spec.domain()) for c in cols]
    out = []
    for key in itertools.product(*(c.spec.domain() for c in cols)):
        parts = [per_col[i][v] for i, v in enumerate(key)]
        mask = [product_balanced([p[ch] for p in parts]) for ch in range(len(parts[0]))]
        out.append((key, mask))
    return out


def broadcast_row(col, j: int) -> HEVector:
    chunks = chunks_of(col)
    n = chunks[0].n
    return broadcast(chunks[j // n], j % n)


def join_masks(fact_key, ref_key, ref_rows: int) -> list[Chunks]:
    """mask_j = eq(fact.key, broadcast(ref.key, j)) for every reference row."""
    fact = chunks_of(fact_key)
    out = []
    for j in range(ref_rows):
        b = broadcast_row(ref_key, j)
        out.append([pr.eq(f, b) for f in fact])
    return out


def gather(masks: list[Chunks], ref_col, fact_chunks: int) -> Chunks:
    """Fact-aligned column holding the matched reference row's value."""
    terms = [[] for _ in range(fact_chunks)]
    for j, mask in enumerate(masks):
        b = broadcast_row(ref_col, j)
        for c in range(fact_chunks):
            terms[c].append(he_mul(mask[c], b))
    return [sum_balanced(t) for t in terms]


def join_aggregate(fact_key: EncryptedColumn, ref_key: EncryptedColumn,
                   attrs: dict[str, EncryptedColumn], fused: bool = True) -> JoinResult:
    """Equi-join of every fact row against every reference row.

    Ciphertext work is ``ref_rows * fact_chunks`` equality masks; the output
    shape depends only on the reference row count.
    """
    n_ref = ref_key.rows
    fact_chunks = len(fact_key.vectors)
    masks = join_masks(fact_key, ref_key, n_ref)
    result = JoinResult(n_ref, masks, fused=fused)
    for name, col in attrs.items():
        if fused:
            result.outputs[name] = gather(masks, col, fact_chunks)
        else:
            per_row = []
            for j, mask in enumerate(masks):
                b = broadcast_row(col, j)
                per_row.append([he_mul(m, b) for m in mask])
            result.outputs[name] = per_row
    return result


def order_by(cols: Sequence[EncryptedColumn], directions: Sequence[str] | None = None,
             rows: int | None = None) -> list[OrderedGroup]:
    """Per-key masks in sort order with their counts.

    Iterates the full public domain (or the cross product for several sort
    columns), so the work never depends on the data.  Rows sharing a key keep
    their slot order.
    """
    directions = list(directions or ["asc"] * len(cols))
    for c in cols:
        if not c.spec.enumerable:
            raise CatalogError(f"ORDER BY column {c.spec.name} is not dictionary-encoded")
    domains = []
    for c, d in zip(cols, directions):
        # logical value order, whatever order the dictionary assigned codes in
        dom = sorted(c.spec.domain(), key=lambda v, s=c.spec: decode_value(v, s))
        domains.append(dom[::-1] if d.lower() == "desc" else dom)
    per_col = [eq_masks(c, c.spec.domain()) for c in cols]
    total = rows if rows is not None else cols[0].rows
    out = []
    for key in itertools.product(*domains):
        parts = [per_col[i][v] for i, v in enumerate(key)]
        mask = [product_balanced([p[ch] for p in parts]) for ch in range(len(parts[0]))]
        out.append(OrderedGroup(key, mask, count(mask, total)))
    return out
