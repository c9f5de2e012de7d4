import math
import re
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from bundle_factory import make_bundle, make_memo
from cohort_stats import spearman
from config import ALPHA_GRID
from errors import DegenerateInput, FoldTooSmall, MissingSkill, NoStrategyText, RejectedWeights, Unsolved
from models import Attempt, TrajectoryBundle
from parsers import parse_skill
from pdi import (EQUAL_WEIGHTS, PdiComponents, WeightVector, alpha_sweep, cohort_components, component_ablation,
                 composite, compute_components, default_weight_grid, fold_assignment, iterative_bundles, pdi, pdi_group_test,
                 phi_exec, phi_oss, phi_plan, weight_cv, weight_cv_by_group, weight_sweep,
                 zscore_cohort)
from textstats import trajectory_vocab


def components(task, plan, exec_, oss):
    return PdiComponents(task_id=task, phi_plan=plan, phi_exec=exec_, phi_oss=oss, alpha=0.002)


def test_components_lie_in_unit_interval(iterative_bundle):
    result = compute_components(iterative_bundle)
    for value in (result.phi_plan, result.phi_exec, result.phi_oss):
        assert 0.0 <= value <= 1.0
    assert result.flags == ()


def test_phi_exec_is_one_when_skill_repeats_the_commands():
    commands = ("make build", "pytest tests")
    memo = make_memo(1, ["make"], ["builds"], "fails", "run the tests")
    attempts = [Attempt(1, ("make",), "", 0.0), Attempt(2, commands, "", 1.0)]
    bundle = TrajectoryBundle.build("same", attempts, [memo], parse_skill("\n".join(commands)))
    assert phi_exec(bundle) == 1.0


def test_missing_skill_and_unsolved():
    unsolved = make_bundle("u", n_failed=2, solved=False)
    with pytest.raises(MissingSkill):
        phi_plan(unsolved)
    with pytest.raises(Unsolved):
        phi_exec(unsolved)


def test_no_strategy_text():
    memo = make_memo(1, ["make"], ["builds"], "fails", "")
    attempts = [Attempt(1, ("make",), "", 0.0), Attempt(2, ("make",), "", 1.0)]
    bundle = TrajectoryBundle.build("nostrat", attempts, [memo], parse_skill("# Skill\nmake\n"))
    with pytest.raises(NoStrategyText):
        phi_plan(bundle)


def test_single_memo_leaves_ossification_absent():
    bundle = make_bundle("one", n_failed=1)
    result = compute_components(bundle)
    assert result.phi_oss is None
    assert result.flags == ("phi_oss_absent",)


def test_identical_memos_and_failures_ossify_fully():
    memo = make_memo(1, ["make"], ["builds fine"], "fails", "retry")
    tests = (("test_a", False),)
    attempts = [Attempt(1, ("make",), "", 0.0, tests), Attempt(2, ("make",), "", 0.0, tests),
                Attempt(3, ("make",), "", 1.0)]
    bundle = TrajectoryBundle.build("stuck", attempts, [memo, memo], parse_skill("# S\nmake\n"))
    assert phi_oss(bundle) == 1.0


def test_vocab_spans_the_whole_trajectory(iterative_bundle):
    vocab = trajectory_vocab(iterative_bundle)
    assert "pytest" in vocab
    assert "test_parser" in vocab or "parser" in vocab


def test_zscores_use_population_std():
    assert zscore_cohort([1.0, 2.0, 3.0]) == pytest.approx([-math.sqrt(1.5), 0.0, math.sqrt(1.5)])


def test_pdi_assembly_and_flags():
    cohort = [components("a", 0.5, 0.1, 0.2), components("b", 0.5, 0.2, None), components("c", 0.5, 0.3, 0.4)]
    scores = pdi(cohort)
    assert [s.z_plan for s in scores] == [0.0, 0.0, 0.0]
    assert [s.z_exec for s in scores] == pytest.approx([-math.sqrt(1.5), 0.0, math.sqrt(1.5)])
    assert [s.z_oss for s in scores] == pytest.approx([-1.0, 0.0, 1.0])
    for score in scores:
        assert score.pdi == pytest.approx(score.z_exec - score.z_plan - score.z_oss)
        assert "degenerate_phi_plan" in score.flags


unit = st.integers(min_value=0, max_value=100).map(lambda v: v / 100)


@settings(max_examples=60, deadline=None)
@given(rows=st.lists(st.tuples(unit, unit, unit), min_size=2, max_size=8), data=st.data())
def test_pdi_is_permutation_equivariant(rows, data):
    cohort = [components(f"t{i}", p, e, o) for i, (p, e, o) in enumerate(rows)]
    order = data.draw(st.permutations(range(len(cohort))))
    original = {s.task_id: s.pdi for s in pdi(cohort)}
    permuted = {s.task_id: s.pdi for s in pdi([cohort[i] for i in order])}
    for task, value in original.items():
        assert permuted[task] == pytest.approx(value, abs=1e-9)


def test_cohort_excludes_interaction_free_and_unsolved(corpus):
    members = iterative_bundles(corpus)
    assert [b.task_id for b in members] == [f"iter-{v}" for v in range(5)]
    assert len(cohort_components(corpus)) == 5


def test_group_test_returns_none_for_an_empty_half():
    assert pdi_group_test([1.0, 1.0, 1.0], [0.0, 1.0, 0.5]) is None
    assert pdi_group_test([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 1.0]) is not None


def test_alpha_sweep(corpus):
    outcomes = [0.0, 1.0, 0.5, 1.0, 0.25]
    rows = alpha_sweep(corpus, [0.002, 0.1], outcomes)
    assert [r.alpha for r in rows] == [0.002, 0.1]
    for row in rows:
        assert row.status == "ok" or row.spearman_rho is None
    with pytest.raises(DegenerateInput):
        alpha_sweep(corpus, [0.002], outcomes[:2])


def _triples():
    return [(-1.0, 0.5, 0.0), (0.0, -0.5, 1.0), (1.0, 0.0, -1.0), (0.5, 1.0, 0.5), (-0.5, -1.0, -0.5)]


def test_weight_sweep_equal_weights_matches_direct_spearman():
    outcomes = [0.1, 0.4, 0.9, 0.2, 0.6]
    rows = weight_sweep(_triples(), outcomes, [EQUAL_WEIGHTS, WeightVector(1.0, 0.0, 0.0)])
    rho, p = spearman([e - pl - o for e, pl, o in _triples()], outcomes)
    assert rows[0].spearman_rho == pytest.approx(rho)
    assert rows[0].p_value == pytest.approx(p)


def test_weights_need_positive_exec_weight():
    with pytest.raises(RejectedWeights):
        weight_sweep(_triples(), [0.0] * 5, [WeightVector(0.0, 1.0, 1.0)])
    assert all(w.w_e > 0 for w in default_weight_grid())


def test_component_ablation_rows():
    rows = component_ablation(_triples(), [0.1, 0.4, 0.9, 0.2, 0.6])
    assert [r.weights for r in rows] == [EQUAL_WEIGHTS, WeightVector(0.0, 1.0, 1.0),
                                         WeightVector(1.0, 0.0, 1.0), WeightVector(1.0, 1.0, 0.0)]


def test_fold_assignment_is_a_seeded_partition():
    folds = fold_assignment(10, 3, seed=7)
    assert sorted(i for fold in folds for i in fold) == list(range(10))
    assert fold_assignment(10, 3, seed=7) == folds
    with pytest.raises(FoldTooSmall):
        fold_assignment(5, 3)
    with pytest.raises(FoldTooSmall):
        fold_assignment(10, 1)


def test_weight_cv():
    triples = [(float(i % 4), float(i % 3), float(i % 5)) for i in range(12)]
    outcomes = [float((i * 7) % 11) for i in range(12)]
    folds = weight_cv(triples, outcomes, k=3, seed=1)
    assert [f.fold for f in folds] == [1, 2, 3]
    assert all(f.train_size + f.heldout_size == 12 for f in folds)
    assert all(f.fitted.w_e > 0 for f in folds)


def test_weight_cv_by_group():
    triples = [(float(i % 4), float(i % 3), float(i % 5)) for i in range(8)]
    outcomes = [float((i * 5) % 7) for i in range(8)]
    folds = weight_cv_by_group(triples, outcomes, ["m1"] * 4 + ["m2"] * 4)
    assert [f.heldout_size for f in folds] == [4, 4]
    with pytest.raises(FoldTooSmall):
        weight_cv_by_group(triples, outcomes, ["m1"] * 8)


# --- Independent recomputation of the three components ---

def _words(text):
    return re.findall(r"[^\W_]+", text.lower())


def _oracle_vocab(bundle):
    tokens = set()
    for memo in bundle.memos:
        tokens.update(_words(memo.raw_text))
    for attempt in bundle.attempts:
        tokens.update(_words("\n".join(attempt.commands)))
        tokens.update(name for name, passed in attempt.test_summary if not passed)
    tokens.update(_words(bundle.skill.body_text))
    return sorted(tokens)


def _smoothed(tokens, vocab, alpha):
    counts = Counter(t for t in tokens if t in set(vocab))
    total = sum(counts.values())
    return [(counts[w] + alpha) / (total + alpha * len(vocab)) for w in vocab]


def _psi(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    divergence = 0.5 * math.fsum(a * math.log2(a / c) for a, c in zip(p, m)) \
        + 0.5 * math.fsum(b * math.log2(b / c) for b, c in zip(q, m))
    return 1.0 - divergence


def _oracle_components(bundle, alpha=0.002):
    vocab = _oracle_vocab(bundle)
    skill = _smoothed(_words(bundle.skill.body_text), vocab, alpha)
    strategies = _smoothed(_words("\n".join(m.next_strategy for m in bundle.memos)), vocab, alpha)
    success = next(a for a in bundle.attempts if a.reward >= 1.0)
    commands = _smoothed(_words("\n".join(success.commands)), vocab, alpha)
    facts = [_smoothed(_words("\n".join(m.verified_facts)), vocab, alpha) for m in bundle.memos]
    failed = [a for a in bundle.attempts[:len(bundle.memos)] if a.test_summary]
    failed_sets = [_smoothed(sorted({n for n, passed in a.test_summary if not passed}), vocab, alpha)
                   for a in failed]
    fact_mean = math.fsum(_psi(a, b) for a, b in zip(facts, facts[1:])) / (len(facts) - 1)
    test_mean = math.fsum(_psi(a, b) for a, b in zip(failed_sets, failed_sets[1:])) / (len(failed_sets) - 1)
    return _psi(strategies, skill), _psi(commands, skill), 0.5 * fact_mean + 0.5 * test_mean


@pytest.mark.parametrize("alpha", [0.002, 0.1])
def test_components_match_a_direct_recomputation(corpus, alpha):
    for bundle in iterative_bundles(corpus):
        plan, exec_, oss = _oracle_components(bundle, alpha)
        result = compute_components(bundle, alpha)
        assert result.phi_plan == pytest.approx(plan, abs=1e-12)
        assert result.phi_exec == pytest.approx(exec_, abs=1e-12)
        assert result.phi_oss == pytest.approx(oss, abs=1e-12)


def test_ossification_includes_the_failed_test_segment(iterative_bundle):
    # test_other fails on odd attempts only, so the failed-test sets change between attempts
    failed = [a.failed_tests() for a in iterative_bundle.attempts[:3]]
    assert failed[0] != failed[1]
    _, _, oss = _oracle_components(iterative_bundle)
    assert phi_oss(iterative_bundle) == pytest.approx(oss, abs=1e-12)
    assert phi_oss(iterative_bundle) < 1.0


# --- Sensitivity analyses on fixtures with a known answer ---

PHRASE = "deploy the service with make build"


def _repetition_bundle(task_id, repeats):
    """Strategy text is the skill body repeated; every other segment is shared across bundles."""
    memo = make_memo(1, ["make build"], ["build works"], "tests fail", " ".join([PHRASE] * repeats))
    attempts = [Attempt(1, ("make build",), "", 0.0), Attempt(2, ("make build",), "", 1.0)]
    return TrajectoryBundle.build(task_id, attempts, [memo], parse_skill(PHRASE + "\n"))


def test_alpha_sweep_is_flat_when_ranks_do_not_depend_on_alpha():
    # smoothing moves every strategy distribution along the same line towards uniform,
    # so plan copying falls with the repeat count at any alpha
    cohort = [_repetition_bundle(f"r{k}", k) for k in (1, 2, 3, 4)]
    rows = alpha_sweep(cohort, ALPHA_GRID, [0.1, 0.3, 0.2, 0.4])
    assert [r.status for r in rows] == ["ok"] * len(ALPHA_GRID)
    assert {r.spearman_rho for r in rows} == {rows[0].spearman_rho}
    assert {r.p_value for r in rows} == {rows[0].p_value}
    assert rows[0].spearman_rho == pytest.approx(0.8)


def test_equal_weights_reproduce_pdi_ranks(corpus):
    scores = pdi(cohort_components(corpus))
    combined = composite(scores, EQUAL_WEIGHTS)
    assert list(rankdata(combined)) == list(rankdata([s.pdi for s in scores]))
    outcomes = [0.2, 0.9, 0.4, 0.6, 0.1]
    row = weight_sweep(scores, outcomes, [EQUAL_WEIGHTS])[0]
    rho, p = spearman([s.pdi for s in scores], outcomes)
    assert (row.spearman_rho, row.p_value) == (rho, p)


def test_cross_validation_prefers_equal_weights_when_they_are_optimal():
    triples = [tuple(float(v) for v in row) for row in np.random.default_rng(3).normal(size=(12, 3))]
    outcomes = [e - pl - o for e, pl, o in triples]
    folds = weight_cv(triples, outcomes, k=4, seed=0)
    assert len(folds) == 4
    for fold in folds:
        assert fold.rho_equal_heldout == pytest.approx(1.0)
        assert fold.rho_fitted_heldout is None or fold.rho_equal_heldout >= fold.rho_fitted_heldout
