import pytest
from hypothesis import given, strategies as st

from tracelab.evaluation import (
    compare_methods,
    evaluate,
    eval_result_to_dict,
    comparisons_markdown,
    comparisons_to_dict,
    f1_score,
    results_markdown,
)


def make_links(n, prefix="L"):
    return [(f"R{prefix}{i}", f"C{prefix}{i}") for i in range(n)]


class TestEvaluate:
    def test_perfect_predictions(self):
        truth = make_links(5)
        r = evaluate(truth, truth)
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_disjoint_nonempty(self):
        r = evaluate(make_links(3, "a"), make_links(3, "b"))
        assert (r.tp, r.precision, r.recall, r.f1) == (0, 0.0, 0.0, 0.0)

    def test_paper_anchor_counts(self):
        # tp=4 fp=1 fn=2 realizes P=0.8000, R=0.6667, F1=0.7273
        truth = make_links(6)
        predicted = truth[:4] + [("Rx", "Cx")]
        r = evaluate(predicted, truth)
        assert round(r.precision, 4) == 0.8
        assert round(r.recall, 4) == 0.6667
        assert round(r.f1, 4) == 0.7273

    def test_zero_denominator_flagged(self):
        r = evaluate([], make_links(2))
        assert r.precision == 0.0 and "no-predictions" in r.flags
        r = evaluate(make_links(2), [])
        assert r.recall == 0.0 and "no-truth" in r.flags

    def test_swap_exchanges_fp_fn(self):
        predicted = make_links(4, "a") + make_links(2, "s")
        truth = make_links(3, "b") + make_links(2, "s")
        fwd = evaluate(predicted, truth)
        rev = evaluate(truth, predicted)
        assert fwd.fp == rev.fn and fwd.fn == rev.fp and fwd.tp == rev.tp

    @given(
        st.sets(st.integers(0, 30), max_size=20),
        st.sets(st.integers(0, 30), max_size=20),
    )
    def test_harmonic_mean_inequalities(self, a, b):
        predicted = [(f"R{i}", f"C{i}") for i in a]
        truth = [(f"R{i}", f"C{i}") for i in b]
        r = evaluate(predicted, truth)
        low = min(r.precision, r.recall)
        assert r.f1 <= max(r.precision, r.recall) + 1e-12
        assert r.f1 <= 2 * low / (1 + low) + 1e-12 if low > 0 else r.f1 == 0.0


class TestF1Score:
    def test_zero_both(self):
        assert f1_score(0.0, 0.0) == 0.0

    def test_symmetry(self):
        assert f1_score(0.3, 0.9) == pytest.approx(f1_score(0.9, 0.3))


class TestCompareMethods:
    def test_dominating_method_significant(self):
        base = [0.5 + 0.01 * i for i in range(12)]
        better = [v + 0.05 for v in base]
        report = compare_methods({"A": better, "B": base})
        by_pair = {(c.method_a, c.method_b): c for c in report}
        winner = by_pair[("A", "B")]
        assert winner.test.p_value == pytest.approx(1 / 4096, abs=1e-12)
        assert winner.significant
        loser = by_pair[("B", "A")]
        assert not loser.significant

    def test_identical_methods(self):
        vals = [0.4, 0.5, 0.6]
        report = compare_methods({"A": vals, "B": list(vals)})
        for comp in report:
            assert comp.test.p_value == 1.0
            assert not comp.significant

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compare_methods({"A": [1.0], "B": [1.0, 2.0]})

    def test_pair_count(self):
        report = compare_methods({"A": [1, 2], "B": [2, 1], "C": [0, 0]})
        assert len(report) == 6


class TestRenderers:
    def test_json_round_trippable(self):
        r = evaluate(make_links(3), make_links(4))
        d = eval_result_to_dict(r)
        assert d["tp"] == 3 and d["fn"] == 1 and isinstance(d["flags"], list)

    def test_markdown_stable(self):
        r = evaluate(make_links(3), make_links(4))
        md = results_markdown({"run": r})
        assert "| run | 1.0000 | 0.7500 | 0.8571 |" in md

    def test_comparison_renderers(self):
        report = compare_methods({"A": [0.9, 0.8], "B": [0.1, 0.2]})
        md = comparisons_markdown(report)
        assert md.count("|") > 10
        rows = comparisons_to_dict(report)
        assert {row["method_a"] for row in rows} == {"A", "B"}
