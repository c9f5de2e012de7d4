"""Trajectory-level features, one named vector per bundle.

A feature whose inputs are missing for a bundle (no skill, no memos, a single
attempt...) is left out of the vector with the reason recorded; it is never
filled with 0.
"""
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from config import FeatureConfig, TokenizerConfig
from errors import InputError, InsufficientMemos, MissingSkill, NoMemos, SingleAttempt, Unsolved
from models import Attempt, Memo, SkillDocument, TrajectoryBundle
from parsers import BULLET_RE, FENCE_RE, fenced_char_count
from textstats import entropy, jaccard, lexical_density, ngram_novelty, token_set
from utils.terms import FeatureGroup

logger = logging.getLogger(__name__)

CODE_SPAN_RE = re.compile(r"`[^`\n]+`")
PATH_WORD_RE = re.compile(r"\w[/.]\w")


@dataclass
class FeatureContext:
    bundle: TrajectoryBundle
    config: FeatureConfig
    tokenizer: Optional[TokenizerConfig] = None

    def skill(self) -> SkillDocument:
        skill = self.bundle.skill
        if skill is None or not skill.text:
            raise MissingSkill("bundle has no skill document", self.bundle.task_id)
        return skill

    def memos(self, minimum: int = 1) -> Sequence[Memo]:
        memos = self.bundle.memos
        if not memos:
            raise NoMemos("bundle has no memos", self.bundle.task_id)
        if len(memos) < minimum:
            raise InsufficientMemos(f"need >= {minimum} memos, have {len(memos)}", self.bundle.task_id)
        return memos

    def attempts(self, minimum: int = 1) -> Sequence[Attempt]:
        if len(self.bundle.attempts) < minimum:
            raise SingleAttempt(f"need >= {minimum} attempts", self.bundle.task_id)
        return self.bundle.attempts

    def success(self) -> Attempt:
        success = self.bundle.successful_attempt
        if success is None:
            raise Unsolved("bundle has no successful attempt", self.bundle.task_id)
        return success


# --- Exploration dynamics ---

def compression_ratio(ctx: FeatureContext) -> float:
    return sum(len(a.stdout_text) for a in ctx.bundle.attempts) / len(ctx.skill().text)


def reward_variance(ctx: FeatureContext) -> float:
    return float(np.var([a.reward for a in ctx.attempts(2)]))


def first_retry_gain(ctx: FeatureContext) -> float:
    attempts = ctx.attempts(2)
    return attempts[1].reward - attempts[0].reward


def _shift_count(ctx: FeatureContext, section: Callable[[Memo], str]) -> int:
    memos = ctx.memos(2)
    threshold = ctx.config.pivot_threshold
    return sum(1 for prev, curr in zip(memos, memos[1:])
               if jaccard(section(prev), section(curr), ctx.tokenizer) < threshold)


def strategy_pivot_count(ctx: FeatureContext) -> int:
    return _shift_count(ctx, lambda m: m.next_strategy)


def error_shift_count(ctx: FeatureContext) -> int:
    return _shift_count(ctx, lambda m: m.current_error_pattern)


# --- Memo quality ---

def memo_entropy(ctx: FeatureContext) -> float:
    memos = ctx.memos()
    return math.fsum(entropy(m.raw_text, ctx.tokenizer) for m in memos) / len(memos)


def memo_growth_rate(ctx: FeatureContext) -> float:
    memos = ctx.memos()
    first = len(memos[0].raw_text)
    return (len(memos[-1].raw_text) - first) / first


def _is_negation(fact: str, keywords: Sequence[str], tokenizer) -> bool:
    return not token_set(fact, tokenizer).isdisjoint(k.lower() for k in keywords)


def negation_fact_count(ctx: FeatureContext) -> int:
    final = ctx.memos()[-1]
    return sum(1 for fact in final.verified_facts
               if _is_negation(fact, ctx.config.negation_keywords, ctx.tokenizer))


def final_fact_count(ctx: FeatureContext) -> int:
    return len(ctx.memos()[-1].verified_facts)


def fact_accrual(ctx: FeatureContext) -> float:
    counts = [len(m.verified_facts) for m in ctx.memos(2)]
    return math.fsum(b - a for a, b in zip(counts, counts[1:])) / (len(counts) - 1)


def _specificity(text: str) -> Optional[float]:
    words = text.split()
    if not words:
        return None
    spans = CODE_SPAN_RE.findall(text)
    remainder = CODE_SPAN_RE.sub(" ", text).split()
    concrete = len(spans) + sum(1 for w in remainder if any(c.isdigit() for c in w) or PATH_WORD_RE.search(w))
    return concrete / len(words)


def error_specificity(ctx: FeatureContext) -> float:
    ratios = [r for m in ctx.memos() if (r := _specificity(m.current_error_pattern)) is not None]
    if not ratios:
        raise InsufficientMemos("no memo has a nonempty Current Error Pattern", ctx.bundle.task_id)
    return math.fsum(ratios) / len(ratios)


# --- Skill structure ---

def skill_section_count(ctx: FeatureContext) -> int:
    return len(ctx.skill().sections)


def skill_step_count(ctx: FeatureContext) -> int:
    return ctx.skill().numbered_step_count


def skill_command_ratio(ctx: FeatureContext) -> float:
    skill = ctx.skill()
    commands = ctx.success().commands
    if not commands:
        raise Unsolved("successful attempt recorded no commands", ctx.bundle.task_id)
    mean_length = sum(len(c) for c in commands) / len(commands)
    if mean_length == 0:
        raise Unsolved("successful attempt commands are empty", ctx.bundle.task_id)
    return len(skill.text) / mean_length


# --- Non-predictive controls ---

def skill_lexical_density(ctx: FeatureContext) -> float:
    density = lexical_density(ctx.skill().text, ctx.tokenizer)
    if density is None:
        raise MissingSkill("skill has no word tokens", ctx.bundle.task_id)
    return density


def skill_code_ratio(ctx: FeatureContext) -> float:
    skill = ctx.skill()
    return fenced_char_count(skill) / len(skill.text)


def final_memo_similarity(ctx: FeatureContext) -> float:
    memos = ctx.memos(2)
    return jaccard(memos[-2].raw_text, memos[-1].raw_text, ctx.tokenizer)


def _novelties(ctx: FeatureContext) -> List[float]:
    memos = ctx.memos(2)
    return [ngram_novelty(prev.raw_text, curr.raw_text, ctx.config.ngram_n, ctx.tokenizer)
            for prev, curr in zip(memos, memos[1:])]


def ngram_novelty_mean(ctx: FeatureContext) -> float:
    novelties = _novelties(ctx)
    return math.fsum(novelties) / len(novelties)


def cumulative_info_gain(ctx: FeatureContext) -> float:
    return math.fsum(_novelties(ctx))


def test_stuck_ratio(ctx: FeatureContext) -> float:
    attempts = ctx.attempts(2)
    stuck = sum(1 for prev, curr in zip(attempts, attempts[1:])
                if Counter(prev.test_summary) == Counter(curr.test_summary))
    return stuck / (len(attempts) - 1)


def _item_count(text: str) -> int:
    count = 0
    in_fence = False
    for line in text.splitlines():
        if FENCE_RE.match(line):
            in_fence = not in_fence
        elif not in_fence and BULLET_RE.match(line):
            count += 1
    return count


def memo_action_items(ctx: FeatureContext) -> float:
    memos = ctx.memos()
    return sum(_item_count(m.raw_text) for m in memos) / len(memos)


def skill_memo_overlap(ctx: FeatureContext) -> float:
    return jaccard(ctx.skill().text, ctx.memos()[-1].raw_text, ctx.tokenizer)


def skill_cmd_overlap(ctx: FeatureContext) -> float:
    return jaccard(ctx.skill().text, "\n".join(ctx.success().commands), ctx.tokenizer)


FEATURES: Dict[str, tuple] = {
    "compression_ratio": (FeatureGroup.exploration_dynamics, compression_ratio),
    "reward_variance": (FeatureGroup.exploration_dynamics, reward_variance),
    "first_retry_gain": (FeatureGroup.exploration_dynamics, first_retry_gain),
    "strategy_pivot_count": (FeatureGroup.exploration_dynamics, strategy_pivot_count),
    "error_shift_count": (FeatureGroup.exploration_dynamics, error_shift_count),
    "memo_entropy": (FeatureGroup.memo_quality, memo_entropy),
    "memo_growth_rate": (FeatureGroup.memo_quality, memo_growth_rate),
    "negation_fact_count": (FeatureGroup.memo_quality, negation_fact_count),
    "final_fact_count": (FeatureGroup.memo_quality, final_fact_count),
    "fact_accrual": (FeatureGroup.memo_quality, fact_accrual),
    "error_specificity": (FeatureGroup.memo_quality, error_specificity),
    "skill_section_count": (FeatureGroup.skill_structure, skill_section_count),
    "skill_step_count": (FeatureGroup.skill_structure, skill_step_count),
    "skill_command_ratio": (FeatureGroup.skill_structure, skill_command_ratio),
    "skill_lexical_density": (FeatureGroup.non_predictive, skill_lexical_density),
    "skill_code_ratio": (FeatureGroup.non_predictive, skill_code_ratio),
    "final_memo_similarity": (FeatureGroup.non_predictive, final_memo_similarity),
    "ngram_novelty_mean": (FeatureGroup.non_predictive, ngram_novelty_mean),
    "cumulative_info_gain": (FeatureGroup.non_predictive, cumulative_info_gain),
    "test_stuck_ratio": (FeatureGroup.non_predictive, test_stuck_ratio),
    "memo_action_items": (FeatureGroup.non_predictive, memo_action_items),
    "skill_memo_overlap": (FeatureGroup.non_predictive, skill_memo_overlap),
    "skill_cmd_overlap": (FeatureGroup.non_predictive, skill_cmd_overlap),
}
FEATURE_IDS = tuple(FEATURES)


def feature_group(feature_id: str) -> FeatureGroup:
    return FEATURES[feature_id][0]


@dataclass
class FeatureVector:
    task_id: str
    values: Dict[str, float] = field(default_factory=dict)
    absent: Dict[str, str] = field(default_factory=dict)  # feature id -> reason

    def get(self, feature_id: str) -> Optional[float]:
        if feature_id not in FEATURES:
            raise KeyError(feature_id)
        return self.values.get(feature_id)

    def merge(self, other: 'FeatureVector') -> 'FeatureVector':
        return FeatureVector(self.task_id, {**self.values, **other.values}, {**self.absent, **other.absent})

    def to_row(self) -> Dict[str, Optional[float]]:
        row = {"task_id": self.task_id}
        row.update({fid: self.values.get(fid) for fid in FEATURE_IDS})
        return row


def extract_group(bundle: TrajectoryBundle, group: FeatureGroup, config: Optional[FeatureConfig] = None,
                  tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    ctx = FeatureContext(bundle, config or FeatureConfig(), tokenizer)
    vector = FeatureVector(bundle.task_id)
    for feature_id, (feature_group_, compute) in FEATURES.items():
        if feature_group_ is not group:
            continue
        try:
            vector.values[feature_id] = float(compute(ctx))
        except InputError as e:
            vector.absent[feature_id] = type(e).__name__
            logger.debug("%s: %s absent (%s)", bundle.task_id, feature_id, e.message)
    return vector


def exploration_dynamics(bundle: TrajectoryBundle, config: Optional[FeatureConfig] = None,
                         tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    return extract_group(bundle, FeatureGroup.exploration_dynamics, config, tokenizer)


def memo_quality(bundle: TrajectoryBundle, config: Optional[FeatureConfig] = None,
                 tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    return extract_group(bundle, FeatureGroup.memo_quality, config, tokenizer)


def skill_structure(bundle: TrajectoryBundle, config: Optional[FeatureConfig] = None,
                    tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    return extract_group(bundle, FeatureGroup.skill_structure, config, tokenizer)


def non_predictive_controls(bundle: TrajectoryBundle, config: Optional[FeatureConfig] = None,
                            tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    return extract_group(bundle, FeatureGroup.non_predictive, config, tokenizer)


def extract_features(bundle: TrajectoryBundle, config: Optional[FeatureConfig] = None,
                     tokenizer: Optional[TokenizerConfig] = None) -> FeatureVector:
    """All feature groups merged into one vector."""
    vector = FeatureVector(bundle.task_id)
    for group in FeatureGroup:
        vector = vector.merge(extract_group(bundle, group, config, tokenizer))
    return vector
