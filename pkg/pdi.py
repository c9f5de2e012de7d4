"""Posterior Distillation Index.

PDI = z(phi_exec) - z(phi_plan) - z(phi_oss), each phi a similarity (1 - JSD)
between smoothed token distributions built over one per-trajectory vocabulary.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from cohort_stats import mann_whitney_u, median_split, rank_correlation, spearman
from config import DEFAULT_ALPHA, TokenizerConfig
from errors import (DegenerateCohort, DegenerateInput, FoldTooSmall, InsufficientHistory,
                    MissingSkill, NoStrategyText, RejectedWeights, Unsolved)
from models import TrajectoryBundle
from textstats import Vocabulary, distribution, distribution_from_tokens, similarity, trajectory_vocab

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PdiComponents:
    task_id: str
    phi_plan: float
    phi_exec: float
    phi_oss: Optional[float]  # None when the history is too short
    alpha: float
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class PdiScore:
    components: PdiComponents
    z_exec: float
    z_plan: float
    z_oss: float
    pdi: float
    cohort_id: str
    flags: Tuple[str, ...] = ()

    @property
    def task_id(self) -> str:
        return self.components.task_id


@dataclass(frozen=True)
class WeightVector:
    w_e: float
    w_p: float
    w_o: float

    def validate(self) -> None:
        if not self.w_e > 0:
            raise RejectedWeights(f"w_e must be > 0, got {self.w_e}")

    def combine(self, z_exec: float, z_plan: float, z_oss: float) -> float:
        return self.w_e * z_exec - self.w_p * z_plan - self.w_o * z_oss


EQUAL_WEIGHTS = WeightVector(1.0, 1.0, 1.0)


def _skill_body(bundle: TrajectoryBundle) -> str:
    if bundle.skill is None:
        raise MissingSkill("bundle has no skill document", bundle.task_id)
    return bundle.skill.body_text


def phi_plan(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
             tokenizer: Optional[TokenizerConfig] = None, vocab: Optional[Vocabulary] = None) -> float:
    """Plan copying: similarity of all accumulated Next Strategy text to the skill."""
    skill_body = _skill_body(bundle)
    if not any(memo.next_strategy.strip() for memo in bundle.memos):
        raise NoStrategyText("no memo has a Next Strategy section", bundle.task_id)
    vocab = vocab or trajectory_vocab(bundle, tokenizer)
    strategies = "\n".join(memo.next_strategy for memo in bundle.memos)
    return similarity(distribution(strategies, vocab, alpha, tokenizer),
                      distribution(skill_body, vocab, alpha, tokenizer))


def phi_exec(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
             tokenizer: Optional[TokenizerConfig] = None, vocab: Optional[Vocabulary] = None) -> float:
    """Execution grounding: similarity of the successful attempt's commands to the skill."""
    success = bundle.successful_attempt
    if success is None:
        raise Unsolved("bundle has no successful attempt", bundle.task_id)
    skill_body = _skill_body(bundle)
    vocab = vocab or trajectory_vocab(bundle, tokenizer)
    return similarity(distribution("\n".join(success.commands), vocab, alpha, tokenizer),
                      distribution(skill_body, vocab, alpha, tokenizer))


def failed_test_pairs(bundle: TrajectoryBundle):
    """Consecutive pairs of failed attempts that carry a test summary."""
    failed = [a for a in bundle.attempts[:len(bundle.memos)] if a.test_summary]
    return list(zip(failed, failed[1:]))


def phi_oss(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
            tokenizer: Optional[TokenizerConfig] = None, vocab: Optional[Vocabulary] = None) -> float:
    """Memo ossification: mean of Verified Facts stability and failed-test persistence."""
    test_pairs = failed_test_pairs(bundle)
    if len(bundle.memos) < 2 or not test_pairs:
        raise InsufficientHistory(
            f"need >= 2 memos and >= 2 attempts with test summaries "
            f"(have {len(bundle.memos)} memos, {len(test_pairs)} test pairs)", bundle.task_id)
    vocab = vocab or trajectory_vocab(bundle, tokenizer)
    facts = [distribution(memo.facts_text, vocab, alpha, tokenizer) for memo in bundle.memos]
    fact_sims = [similarity(a, b) for a, b in zip(facts, facts[1:])]
    test_sims = [
        similarity(distribution_from_tokens(sorted(set(prev.failed_tests())), vocab, alpha),
                   distribution_from_tokens(sorted(set(curr.failed_tests())), vocab, alpha))
        for prev, curr in test_pairs
    ]
    return 0.5 * float(np.mean(fact_sims)) + 0.5 * float(np.mean(test_sims))


def compute_components(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
                       tokenizer: Optional[TokenizerConfig] = None) -> PdiComponents:
    vocab = trajectory_vocab(bundle, tokenizer)
    flags = []
    try:
        oss = phi_oss(bundle, alpha, tokenizer, vocab)
    except InsufficientHistory:
        oss = None
        flags.append("phi_oss_absent")
    return PdiComponents(
        task_id=bundle.task_id,
        phi_plan=phi_plan(bundle, alpha, tokenizer, vocab),
        phi_exec=phi_exec(bundle, alpha, tokenizer, vocab),
        phi_oss=oss,
        alpha=alpha,
        flags=tuple(flags),
    )


def iterative_bundles(bundles: Sequence[TrajectoryBundle]) -> List[TrajectoryBundle]:
    """Bundles that enter the PDI cohort: solved after at least one reflection."""
    kept = [b for b in bundles if b.is_iterative]
    if len(kept) != len(bundles):
        logger.info("PDI cohort keeps %d of %d bundles (interaction-free and unsolved excluded)",
                    len(kept), len(bundles))
    return kept


def cohort_components(bundles: Sequence[TrajectoryBundle], alpha: float = DEFAULT_ALPHA,
                      tokenizer: Optional[TokenizerConfig] = None) -> List[PdiComponents]:
    return [compute_components(b, alpha, tokenizer) for b in iterative_bundles(bundles)]


def zscore_cohort(values: Sequence[float]) -> List[float]:
    """(x - mean) / population std."""
    data = np.asarray(values, dtype=np.float64)
    if data.size < 2 or np.all(data == data[0]):
        raise DegenerateCohort(f"cannot z-score {data.size} values with zero spread")
    std = data.std()
    if std == 0:
        raise DegenerateCohort("zero standard deviation")
    return list((data - data.mean()) / std)


def _z_column(values: Sequence[Optional[float]], name: str, flags: List[str]) -> List[float]:
    present = [i for i, v in enumerate(values) if v is not None]
    out = [0.0] * len(values)
    try:
        for i, z in zip(present, zscore_cohort([values[i] for i in present])):
            out[i] = float(z)
    except DegenerateCohort:
        logger.warning("degenerate %s column, z set to 0", name)
        flags.append(f"degenerate_{name}")
    return out


def pdi(cohort: Sequence[PdiComponents], cohort_id: str = "cohort") -> List[PdiScore]:
    """z-score each component over the cohort and assemble PDI per trajectory."""
    cohort_flags: List[str] = []
    z_exec = _z_column([c.phi_exec for c in cohort], "phi_exec", cohort_flags)
    z_plan = _z_column([c.phi_plan for c in cohort], "phi_plan", cohort_flags)
    z_oss = _z_column([c.phi_oss for c in cohort], "phi_oss", cohort_flags)
    scores = []
    for i, components in enumerate(cohort):
        scores.append(PdiScore(
            components=components,
            z_exec=z_exec[i],
            z_plan=z_plan[i],
            z_oss=z_oss[i],
            pdi=z_exec[i] - z_plan[i] - z_oss[i],
            cohort_id=cohort_id,
            flags=components.flags + tuple(cohort_flags),
        ))
    return scores


# --- Sensitivity analyses ---

@dataclass(frozen=True)
class AlphaSweepRow:
    alpha: float
    spearman_rho: Optional[float]
    p_value: Optional[float]
    mann_whitney_p: Optional[float] = None
    status: str = "ok"


def alpha_sweep(cohort: Sequence[TrajectoryBundle], alphas: Sequence[float], outcomes: Sequence[float],
                tokenizer: Optional[TokenizerConfig] = None) -> List[AlphaSweepRow]:
    """Recompute PDI per alpha and correlate it with per-trajectory outcomes."""
    members = iterative_bundles(cohort)
    if len(members) != len(outcomes):
        raise DegenerateInput(f"{len(outcomes)} outcomes for {len(members)} iterative bundles")
    rows = []
    for alpha in alphas:
        values = [s.pdi for s in pdi(cohort_components(members, alpha, tokenizer), f"alpha={alpha!r}")]
        try:
            rho, p = spearman(values, outcomes)
        except DegenerateInput:
            logger.warning("correlation undefined at alpha=%r", alpha)
            rows.append(AlphaSweepRow(alpha, None, None, status="DegenerateCorrelation"))
            continue
        rows.append(AlphaSweepRow(alpha, rho, p, pdi_group_test(values, outcomes)))
    return rows


def pdi_group_test(pdi_values: Sequence[float], outcomes: Sequence[float]) -> Optional[float]:
    """Mann-Whitney p of outcomes between high- and low-PDI halves (median ties go low)."""
    high = median_split(pdi_values)
    a = [o for o, is_high in zip(outcomes, high) if is_high]
    b = [o for o, is_high in zip(outcomes, high) if not is_high]
    if not a or not b:
        return None
    return mann_whitney_u(a, b)[1]


ScoreLike = Union[PdiScore, Tuple[float, float, float]]


def _triples(scores: Sequence[ScoreLike]) -> List[Tuple[float, float, float]]:
    return [(s.z_exec, s.z_plan, s.z_oss) if isinstance(s, PdiScore) else tuple(s) for s in scores]


def composite(scores: Sequence[ScoreLike], weights: WeightVector) -> List[float]:
    return [weights.combine(*t) for t in _triples(scores)]


def default_weight_grid(levels: Sequence[float] = (0.0, 0.5, 1.0, 1.5)) -> List[WeightVector]:
    return [WeightVector(e, p, o) for e in levels for p in levels for o in levels if e > 0]


@dataclass(frozen=True)
class WeightSweepRow:
    weights: WeightVector
    spearman_rho: Optional[float]
    p_value: Optional[float]


def weight_sweep(cohort_scores: Sequence[ScoreLike], outcomes: Sequence[float],
                 weight_grid: Sequence[WeightVector]) -> List[WeightSweepRow]:
    for weights in weight_grid:
        weights.validate()
    return [_weight_row(cohort_scores, outcomes, weights) for weights in weight_grid]


def _weight_row(cohort_scores, outcomes, weights: WeightVector) -> WeightSweepRow:
    try:
        rho, p = spearman(composite(cohort_scores, weights), outcomes)
    except DegenerateInput:
        return WeightSweepRow(weights, None, None)
    return WeightSweepRow(weights, rho, p)


def component_ablation(cohort_scores: Sequence[ScoreLike], outcomes: Sequence[float]) -> List[WeightSweepRow]:
    """Correlation with each component removed in turn (equal weights otherwise)."""
    variants = [EQUAL_WEIGHTS, WeightVector(0.0, 1.0, 1.0), WeightVector(1.0, 0.0, 1.0), WeightVector(1.0, 1.0, 0.0)]
    return [_weight_row(cohort_scores, outcomes, weights) for weights in variants]


@dataclass(frozen=True)
class FoldResult:
    fold: int
    fitted: WeightVector
    rho_fitted_heldout: Optional[float]
    rho_equal_heldout: Optional[float]
    train_size: int
    heldout_size: int
    held_out: Tuple[int, ...] = field(default=(), repr=False)


def fold_assignment(n: int, k: int, seed: int = 0) -> List[List[int]]:
    """Deterministic partition of range(n) into k folds."""
    if k < 2:
        raise FoldTooSmall(f"k must be >= 2, got {k}")
    if n < 2 * k:
        raise FoldTooSmall(f"{n} items cannot fill {k} folds of size >= 2")
    order = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in chunk) for chunk in np.array_split(order, k)]


def _safe_rank_correlation(x, y) -> Optional[float]:
    try:
        return rank_correlation(x, y)
    except DegenerateInput:
        return None


def _cross_validate(triples, outcomes, folds: List[List[int]], grid: Sequence[WeightVector]) -> List[FoldResult]:
    for weights in grid:
        weights.validate()
    results = []
    for number, held_out in enumerate(folds, start=1):
        held = set(held_out)
        train = [i for i in range(len(triples)) if i not in held]
        if len(train) < 2 or len(held_out) < 2:
            raise FoldTooSmall(f"fold {number} has {len(train)} train / {len(held_out)} held-out items")
        best, best_rho = None, None
        for weights in grid:
            rho = _safe_rank_correlation(composite([triples[i] for i in train], weights),
                                         [outcomes[i] for i in train])
            if rho is not None and (best_rho is None or rho > best_rho):
                best, best_rho = weights, rho
        if best is None:
            raise FoldTooSmall(f"no weight vector has a defined correlation on fold {number}")
        test_triples = [triples[i] for i in held_out]
        test_outcomes = [outcomes[i] for i in held_out]
        results.append(FoldResult(
            fold=number,
            fitted=best,
            rho_fitted_heldout=_safe_rank_correlation(composite(test_triples, best), test_outcomes),
            rho_equal_heldout=_safe_rank_correlation(composite(test_triples, EQUAL_WEIGHTS), test_outcomes),
            train_size=len(train),
            heldout_size=len(held_out),
            held_out=tuple(held_out),
        ))
    return results


def weight_cv(cohort_scores: Sequence[ScoreLike], outcomes: Sequence[float], k: int = 5,
              grid: Optional[Sequence[WeightVector]] = None, seed: int = 0) -> List[FoldResult]:
    """k-fold task cross-validation: fit max-rho weights on train, compare with equal weights on held-out."""
    triples = _triples(cohort_scores)
    if len(triples) != len(outcomes):
        raise DegenerateInput(f"{len(outcomes)} outcomes for {len(triples)} scores")
    folds = fold_assignment(len(triples), k, seed)
    return _cross_validate(triples, outcomes, folds, grid or default_weight_grid())


def weight_cv_by_group(cohort_scores: Sequence[ScoreLike], outcomes: Sequence[float], groups: Sequence[str],
                       grid: Optional[Sequence[WeightVector]] = None) -> List[FoldResult]:
    """Leave-one-group-out variant (e.g. one student model per fold)."""
    triples = _triples(cohort_scores)
    labels = sorted(set(groups))
    if len(labels) < 2:
        raise FoldTooSmall("need at least two groups")
    folds = [[i for i, g in enumerate(groups) if g == label] for label in labels]
    return _cross_validate(triples, outcomes, folds, grid or default_weight_grid())
