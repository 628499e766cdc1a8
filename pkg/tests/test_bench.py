"""Benchmark harness on the small profile."""

import pytest

from lhedb.bench import run_bench


@pytest.fixture(scope="module")
def report():
    return run_bench("small", seed=0)


def test_all_queries_match_the_oracle(report):
    assert [q.name for q in report.queries] == ["Q1", "Q4", "Q6"]
    assert report.all_match
    for q in report.queries:
        assert [r.optimized for r in q.runs] == [False, True]
        for r in q.runs:
            assert r.bootstrap == 0 and r.conversion == 0


def test_optimizer_never_deepens(report):
    for q in report.queries:
        plain, opt = q.runs
        assert opt.depth <= plain.depth
        assert not opt.needs_bootstrap
    q6 = report.queries[2]
    assert q6.runs[1].depth < q6.runs[0].depth


def test_deterministic_for_a_seed(report):
    again = run_bench("small", seed=0)
    assert again.stable() == report.stable()
    assert run_bench("small", seed=1).stable() != report.stable()


def test_query_selection_and_format(report):
    only = run_bench("small", seed=0, only=["Q6"])
    assert [q.name for q in only.queries] == ["Q6"]
    text = report.format()
    assert "NEEDS BOOTSTRAP" in text and "all oracle checks pass: True" in text


def test_unknown_profile():
    with pytest.raises(ValueError):
        run_bench("huge")
