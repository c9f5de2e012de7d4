import math
import re
from collections import Counter

import numpy as np
import pytest

from bundle_factory import make_bundle
from config import FeatureConfig
from features import (FEATURE_IDS, FEATURES, FeatureVector, exploration_dynamics, extract_features, feature_group,
                      memo_quality, non_predictive_controls, skill_structure)
from utils.terms import FeatureGroup


def test_every_feature_has_a_group():
    assert len(FEATURE_IDS) == 23
    assert feature_group("memo_entropy") is FeatureGroup.memo_quality
    assert {feature_group(f) for f in FEATURE_IDS} == set(FeatureGroup)


def test_exploration_dynamics(iterative_bundle):
    vector = exploration_dynamics(iterative_bundle)
    assert vector.get("first_retry_gain") == pytest.approx(0.5)
    assert vector.get("reward_variance") == pytest.approx(float(np.var([0.0, 0.5, 0.5, 1.0])))
    stdout_chars = sum(len(a.stdout_text) for a in iterative_bundle.attempts)
    assert vector.get("compression_ratio") == pytest.approx(stdout_chars / len(iterative_bundle.skill.text))
    assert vector.get("strategy_pivot_count") >= 0


def test_memo_quality(iterative_bundle):
    vector = memo_quality(iterative_bundle)
    assert vector.get("final_fact_count") == 3
    assert vector.get("fact_accrual") == pytest.approx(1.0)
    assert vector.get("negation_fact_count") == 0
    assert vector.get("error_specificity") == pytest.approx(0.4)
    assert vector.get("memo_growth_rate") > 0


def test_negation_keywords_are_configurable():
    bundle = make_bundle("neg", n_failed=2, variant=1)
    assert memo_quality(bundle).get("negation_fact_count") == 1
    config = FeatureConfig(negation_keywords=["wrong"])
    assert memo_quality(bundle, config).get("negation_fact_count") == 0


def test_skill_structure(iterative_bundle):
    vector = skill_structure(iterative_bundle)
    assert vector.get("skill_section_count") == 2
    assert vector.get("skill_step_count") == 2
    commands = iterative_bundle.successful_attempt.commands
    mean_length = sum(len(c) for c in commands) / len(commands)
    assert vector.get("skill_command_ratio") == pytest.approx(len(iterative_bundle.skill.text) / mean_length)


def test_non_predictive_controls(iterative_bundle):
    vector = non_predictive_controls(iterative_bundle)
    assert vector.get("test_stuck_ratio") == 0.0
    assert vector.get("memo_action_items") == pytest.approx(4.0)
    assert 0.0 < vector.get("skill_code_ratio") < 1.0
    assert vector.get("cumulative_info_gain") == pytest.approx(2 * vector.get("ngram_novelty_mean"))
    for name in ("final_memo_similarity", "skill_memo_overlap", "skill_cmd_overlap"):
        assert 0.0 <= vector.get(name) <= 1.0


def test_interaction_free_bundle_leaves_memo_features_absent():
    vector = extract_features(make_bundle("free", n_failed=0))
    assert vector.get("memo_entropy") is None
    assert vector.absent["memo_entropy"] == "NoMemos"
    assert vector.absent["reward_variance"] == "SingleAttempt"
    assert vector.get("skill_step_count") == 2


def test_unsolved_bundle_leaves_skill_features_absent():
    vector = extract_features(make_bundle("open", n_failed=3, solved=False))
    assert vector.absent["skill_section_count"] == "MissingSkill"
    assert vector.get("final_fact_count") == 3


def test_two_memos_are_needed_for_pivots():
    vector = extract_features(make_bundle("short", n_failed=1))
    assert vector.absent["strategy_pivot_count"] == "InsufficientMemos"
    assert vector.get("memo_entropy") is not None


def test_row_lists_every_feature():
    row = extract_features(make_bundle("free", n_failed=0)).to_row()
    assert list(row) == ["task_id", *FEATURE_IDS]
    assert row["memo_entropy"] is None


def test_unknown_feature_id():
    with pytest.raises(KeyError):
        FeatureVector("t").get("nope")


def test_groups_partition_the_full_vector(iterative_bundle):
    full = extract_features(iterative_bundle)
    assert set(full.values) | set(full.absent) == set(FEATURES)


# --- Direct recomputation of every feature from its definition ---

NEGATIONS = {"not", "never", "failed", "wrong"}


def _words(text):
    return re.findall(r"[^\W_]+", text.lower())


def _jaccard(a, b):
    left, right = set(_words(a)), set(_words(b))
    if not left and not right:
        return 1.0
    return len(left & right) / len(left | right)


def _entropy(text):
    counts = Counter(_words(text))
    total = sum(counts.values())
    return -math.fsum(c / total * math.log2(c / total) for c in counts.values()) if total else 0.0


def _novelty(prev, curr, n=3):
    grams = lambda tokens: {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}
    current, previous = grams(_words(curr)), grams(_words(prev))
    return len(current - previous) / len(current) if current else 0.0


def _outside_fences(text):
    inside = False
    for line in text.splitlines():
        if line.lstrip().startswith("```"):
            inside = not inside
            continue
        if not inside:
            yield line


def _fenced_chars(text):
    blocks, block = [], None
    for line in text.splitlines():
        if line.lstrip().startswith("```"):
            if block is None:
                block = []
            else:
                blocks.append("\n".join(block))
                block = None
        elif block is not None:
            block.append(line)
    return sum(len(b) for b in blocks)


def _specificity(text):
    words = text.split()
    if not words:
        return None
    spans = re.findall(r"`[^`\n]+`", text)
    rest = re.sub(r"`[^`\n]+`", " ", text).split()
    concrete = len(spans) + sum(1 for w in rest if re.search(r"\d", w) or re.search(r"\w[/.]\w", w))
    return concrete / len(words)


def _mean(values):
    return math.fsum(values) / len(values)


def expected_features(bundle):
    attempts, memos, skill = bundle.attempts, bundle.memos, bundle.skill
    success = next((a for a in attempts if a.reward >= 1.0), None)
    out = {}
    if skill is not None:
        body = skill.body_text
        out["compression_ratio"] = sum(len(a.stdout_text) for a in attempts) / len(skill.text)
        out["skill_section_count"] = sum(1 for line in _outside_fences(body) if re.match(r"#{1,6}\s", line))
        out["skill_step_count"] = sum(1 for line in _outside_fences(body) if re.match(r"\s*\d+[.)]", line))
        out["skill_lexical_density"] = len(set(_words(skill.text))) / len(_words(skill.text))
        out["skill_code_ratio"] = _fenced_chars(body) / len(skill.text)
        if success is not None:
            mean_length = _mean([len(c) for c in success.commands])
            out["skill_command_ratio"] = len(skill.text) / mean_length
            out["skill_cmd_overlap"] = _jaccard(skill.text, "\n".join(success.commands))
        if memos:
            out["skill_memo_overlap"] = _jaccard(skill.text, memos[-1].raw_text)
    if len(attempts) >= 2:
        rewards = [a.reward for a in attempts]
        centre = _mean(rewards)
        out["reward_variance"] = _mean([(r - centre) ** 2 for r in rewards])
        out["first_retry_gain"] = rewards[1] - rewards[0]
        pairs = list(zip(attempts, attempts[1:]))
        out["test_stuck_ratio"] = sum(1 for a, b in pairs if sorted(a.test_summary) == sorted(b.test_summary)) / len(pairs)
    if memos:
        last = memos[-1]
        out["memo_entropy"] = _mean([_entropy(m.raw_text) for m in memos])
        out["memo_growth_rate"] = (len(last.raw_text) - len(memos[0].raw_text)) / len(memos[0].raw_text)
        out["negation_fact_count"] = sum(1 for f in last.verified_facts if set(_words(f)) & NEGATIONS)
        out["final_fact_count"] = len(last.verified_facts)
        ratios = [r for m in memos if (r := _specificity(m.current_error_pattern)) is not None]
        if ratios:
            out["error_specificity"] = _mean(ratios)
        bullets = [sum(1 for line in _outside_fences(m.raw_text) if re.match(r"\s*(?:[-*]|\d+[.)])\s+", line))
                   for m in memos]
        out["memo_action_items"] = _mean(bullets)
    if len(memos) >= 2:
        pairs = list(zip(memos, memos[1:]))
        out["strategy_pivot_count"] = sum(1 for a, b in pairs if _jaccard(a.next_strategy, b.next_strategy) < 0.15)
        out["error_shift_count"] = sum(
            1 for a, b in pairs if _jaccard(a.current_error_pattern, b.current_error_pattern) < 0.15)
        out["fact_accrual"] = (len(memos[-1].verified_facts) - len(memos[0].verified_facts)) / len(pairs)
        out["final_memo_similarity"] = _jaccard(memos[-2].raw_text, memos[-1].raw_text)
        novelties = [_novelty(a.raw_text, b.raw_text) for a, b in pairs]
        out["ngram_novelty_mean"] = _mean(novelties)
        out["cumulative_info_gain"] = math.fsum(novelties)
    return out


COUNT_FEATURES = {"strategy_pivot_count", "error_shift_count", "negation_fact_count", "final_fact_count",
                  "skill_section_count", "skill_step_count"}


@pytest.fixture
def feature_corpus(corpus):
    return corpus + [make_bundle("long", n_failed=4, variant=5), make_bundle("one-memo", n_failed=1, variant=2),
                     make_bundle("open-2", n_failed=2, solved=False, variant=4)]


def test_every_feature_matches_its_definition(feature_corpus):
    assert len(feature_corpus) == 10
    for bundle in feature_corpus:
        vector = extract_features(bundle)
        expected = expected_features(bundle)
        assert set(vector.values) == set(expected), bundle.task_id
        assert set(vector.absent) == set(FEATURES) - set(expected), bundle.task_id
        for feature_id, value in expected.items():
            if feature_id in COUNT_FEATURES:
                assert vector.get(feature_id) == value, (bundle.task_id, feature_id)
            else:
                assert vector.get(feature_id) == pytest.approx(value, abs=1e-10), (bundle.task_id, feature_id)


def test_pivots_and_shifts_by_hand(iterative_bundle):
    # strategies: "rewrite the parser loop" twice, then "patch schema in parser.py line 13" (J = 1/10)
    # errors only change their line number (J = 5/7)
    vector = exploration_dynamics(iterative_bundle)
    assert vector.get("strategy_pivot_count") == 1
    assert vector.get("error_shift_count") == 0
