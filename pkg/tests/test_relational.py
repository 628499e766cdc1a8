import random

import numpy as np
import pytest

from lhedb import predicates as pr
from lhedb import relational as rel
from lhedb.catalog import build_table, encrypt_table, to_signed
from lhedb.errors import CatalogError
from lhedb.vector import SimBackend

ROWS = 37   # three 16-slot chunks with padding


@pytest.fixture
def setup(micro):
    rng = random.Random(1)
    recs = [[str(i), str(rng.randint(-5, 5)), rng.choice(["x", "y", "z"]), rng.choice(["true", "false"]),
             str(rng.randint(1, 4))] for i in range(ROWS)]
    fact = build_table("t", ["id:int", "v:int", "s:str", "f:bool", "k:int"], recs, micro, lexicographic=True)
    ref = build_table("u", ["uid:int:key", "w:int"], [["1", "10"], ["2", "20"], ["3", "-30"], ["5", "50"]], micro)
    be = SimBackend(micro)
    return be, fact, encrypt_table(fact, be), encrypt_table(ref, be), recs


def plain(be, chunks, rows):
    return [to_signed(int(v), be.params.p) for v in np.concatenate([be.decrypt(c) for c in chunks])[:rows]]


def scalar(be, vec):
    return to_signed(int(be.decrypt(vec)[0]), be.params.p)


def test_chunking_and_padding(setup):
    be, fact, et, _, _ = setup
    col = et.columns["v"]
    assert len(col.vectors) == 3 and col.padding == 3 * 16 - ROWS


def test_filter_count_sum_avg(setup):
    be, fact, et, _, recs = setup
    v = et.columns["v"]
    mask = [pr.gt(c, 0) for c in v.vectors]
    want = [int(r[1]) for r in recs if int(r[1]) > 0]
    assert plain(be, rel.select_apply(v, mask), ROWS) == [max(int(r[1]), 0) for r in recs]
    assert scalar(be, rel.count(mask, ROWS)) == len(want)
    assert scalar(be, rel.sum_(v, mask, ROWS)) == sum(want)
    pair = rel.avg(v, mask, ROWS)
    assert (scalar(be, pair.sum), scalar(be, pair.count)) == (sum(want), len(want))
    # unfiltered sum ignores the padding slots
    assert scalar(be, rel.sum_(v, None, ROWS)) == sum(int(r[1]) for r in recs)


def test_group_by_masks_partition_rows(setup):
    be, fact, et, _, recs = setup
    groups = rel.group_by([et.columns["s"], et.columns["f"]])
    spec_s = fact.meta.column("s")
    assert len(groups) == 3 * 2
    total = np.zeros(ROWS, dtype=int)
    for (s_code, f_code), mask in groups:
        got = plain(be, mask, ROWS)
        want = [int(r[2] == spec_s.dictionary.value_of(s_code) and (r[3] == "true") == bool(f_code)) for r in recs]
        assert got == want
        total += np.array(got)
    assert np.all(total == 1)


def test_group_by_rejects_numeric(setup):
    _, _, et, _, _ = setup
    with pytest.raises(CatalogError):
        rel.group_by([et.columns["v"]])


def test_join_gathers_reference_values(setup):
    be, fact, et, er, recs = setup
    lookup = {1: 10, 2: 20, 3: -30, 5: 50}
    res = rel.join_aggregate(et.columns["k"], er.columns["uid"], {"w": er.columns["w"]})
    assert res.output_count == 1 and res.ref_rows == 4
    assert plain(be, res.outputs["w"], ROWS) == [lookup.get(int(r[4]), 0) for r in recs]
    matched = [sum(plain(be, m, ROWS)[i] for m in res.masks) for i in range(ROWS)]
    assert matched == [int(int(r[4]) in lookup) for r in recs]


def test_unfused_join_emits_one_output_per_reference_row(setup):
    be, fact, et, er, recs = setup
    res = rel.join_aggregate(et.columns["k"], er.columns["uid"], {"w": er.columns["w"]}, fused=False)
    assert res.output_count == 4 and len(res.outputs["w"]) == 4
    assert max(v.depth for row in res.outputs["w"] for v in row) == 9


def test_order_by_follows_logical_order(setup):
    be, fact, et, _, recs = setup
    for direction in ("asc", "desc"):
        groups = rel.order_by([et.columns["s"]], [direction])
        names = [fact.meta.column("s").dictionary.value_of(g.key[0]) for g in groups]
        assert names == sorted(names, reverse=direction == "desc")
        for g, name in zip(groups, names):
            assert scalar(be, g.count) == sum(r[2] == name for r in recs)


def test_work_is_independent_of_values(micro):
    """Same shape, different values: identical operation counts."""
    from lhedb.vector import OpTrace
    counts = []
    for seed in (1, 2):
        rng = random.Random(seed)
        recs = [[str(rng.randint(1, 3)), rng.choice(["a", "b"])] for _ in range(20)]
        recs[0][1], recs[1][1] = "a", "b"
        t = build_table("t", ["k:int", "s:str"], recs, micro)
        u = build_table("u", ["k:int:key"], [["1"], ["2"], ["3"]], micro)
        be = SimBackend(micro)
        et, eu = encrypt_table(t, be), encrypt_table(u, be)
        be.trace = OpTrace()
        rel.join_aggregate(et.columns["k"], eu.columns["k"], {"k": eu.columns["k"]})
        rel.order_by([et.columns["s"]])
        counts.append(be.trace.counts)
    assert counts[0] == counts[1]
