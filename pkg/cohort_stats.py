"""Cohort and multi-model statistics: skill gains, agreement, pass-gain, quadrants,
convergence trends, and the rank tests behind every correlation in the reports."""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import DEFAULT_ALPHA, MANN_WHITNEY_EXACT_MAX_N, SPEARMAN_EXACT_MAX_N, TokenizerConfig
from errors import (DegenerateCorrelation, DegenerateInput, EmptyCohort, EmptyEligibleSet, EmptyGroup,
                    InsufficientMemos, InvariantViolation, MissingRecord)
from models import EvaluationRecord, Memo, TrajectoryBundle
from textstats import Vocabulary, distribution, jaccard, similarity, trajectory_vocab
from utils.terms import Condition, TaskGroup, TrendLabel

logger = logging.getLogger(__name__)


# --- Cohort ---

@dataclass
class Cohort:
    evaluations: List[EvaluationRecord]
    bundles: Dict[str, TrajectoryBundle] = field(default_factory=dict)
    groups: Dict[str, TaskGroup] = field(default_factory=dict)
    _index: Dict[Tuple[str, str, Condition], float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for record in self.evaluations:
            key = (record.task_id, record.model_id, record.condition)
            if key in self._index:
                raise InvariantViolation(f"duplicate evaluation {key}", "cohort")
            self._index[key] = record.reward

    @classmethod
    def build(cls, bundles: Iterable[TrajectoryBundle], evaluations: Iterable[EvaluationRecord] = (),
              pdi_by_task: Optional[Mapping[str, float]] = None) -> 'Cohort':
        """Cohort over bundles (their own evaluations included) with derived task groups."""
        bundles = {b.task_id: b for b in bundles}
        records = [e for b in bundles.values() for e in b.evaluations] + list(evaluations)
        groups = {task: TaskGroup.interaction_free for task, b in bundles.items()
                  if b.mode_label is not None and not b.is_iterative}
        if pdi_by_task:
            tasks = sorted(t for t in pdi_by_task if t in bundles and bundles[t].is_iterative)
            for task, high in zip(tasks, median_split([pdi_by_task[t] for t in tasks])):
                groups[task] = TaskGroup.iter_high_pdi if high else TaskGroup.iter_low_pdi
        return cls(evaluations=records, bundles=bundles, groups=groups)

    def reward(self, task: str, model: str, condition: Condition) -> Optional[float]:
        return self._index.get((task, model, condition))

    def models(self) -> List[str]:
        return sorted({e.model_id for e in self.evaluations})

    def tasks(self) -> List[str]:
        return sorted({e.task_id for e in self.evaluations})

    def baseline_unsolved(self, model: str, condition: Condition = Condition.generated_skill) -> List[str]:
        """Tasks where `model` scores 0 without a skill and has a record under `condition`."""
        return [t for t in self.tasks()
                if self.reward(t, model, Condition.baseline) == 0.0
                and self.reward(t, model, condition) is not None]


@dataclass(frozen=True)
class MeanResult:
    value: float
    n_tasks: int


def skill_gain(cohort: Cohort, model: str, task: str, condition: Condition = Condition.generated_skill) -> float:
    """Reward with the skill minus baseline reward."""
    base = cohort.reward(task, model, Condition.baseline)
    with_skill = cohort.reward(task, model, condition)
    if base is None or with_skill is None:
        raise MissingRecord(f"no baseline/{condition.value} pair for model {model}", task)
    return with_skill - base


def mean_reward(cohort: Cohort, model: str, condition: Condition) -> MeanResult:
    rewards = [r for t in cohort.tasks() if (r := cohort.reward(t, model, condition)) is not None]
    if not rewards:
        raise EmptyCohort(f"no {condition.value} records for model {model}")
    return MeanResult(math.fsum(rewards) / len(rewards), len(rewards))


def mean_gain(cohort: Cohort, model: str, condition: Condition = Condition.generated_skill) -> MeanResult:
    gains = [skill_gain(cohort, model, t, condition) for t in cohort.tasks()
             if cohort.reward(t, model, Condition.baseline) is not None
             and cohort.reward(t, model, condition) is not None]
    if not gains:
        raise EmptyCohort(f"no baseline/{condition.value} pairs for model {model}")
    return MeanResult(math.fsum(gains) / len(gains), len(gains))


def _sign(value: float) -> int:
    return (value > 0) - (value < 0)


def agreement_rate(cohort: Cohort, model_i: str, model_j: str,
                   condition: Condition = Condition.generated_skill) -> float:
    """Share of sign agreement of skill gains over tasks both models fail at baseline and
    where at least one gain is nonzero. sign(0)=0, so a zero against a nonzero disagrees."""
    both_unsolved = set(cohort.baseline_unsolved(model_i, condition)) & set(cohort.baseline_unsolved(model_j, condition))
    agree = eligible = 0
    for task in sorted(both_unsolved):
        gain_i = skill_gain(cohort, model_i, task, condition)
        gain_j = skill_gain(cohort, model_j, task, condition)
        if gain_i == 0 and gain_j == 0:
            continue
        eligible += 1
        agree += _sign(gain_i) == _sign(gain_j)
    if eligible == 0:
        raise EmptyEligibleSet(f"no eligible tasks for ({model_i}, {model_j})")
    return agree / eligible


def agreement_matrix(cohort: Cohort, models: Optional[Sequence[str]] = None,
                     condition: Condition = Condition.generated_skill) -> List[Tuple[str, str, Optional[float]]]:
    models = list(models or cohort.models())
    rows = []
    for model_i in models:
        for model_j in models:
            try:
                rate = agreement_rate(cohort, model_i, model_j, condition)
            except EmptyEligibleSet:
                rate = None
            rows.append((model_i, model_j, rate))
    return rows


def pass_gain_rate(cohort: Cohort, group: TaskGroup, model: str,
                   condition: Condition = Condition.generated_skill) -> float:
    """P(reward 1 with skill | reward 0 without) over the group's tasks."""
    tasks = [t for t in cohort.baseline_unsolved(model, condition) if cohort.groups.get(t) is group]
    if not tasks:
        raise EmptyGroup(f"no baseline-unsolved tasks in {group.value} for model {model}")
    passed = sum(1 for t in tasks if cohort.reward(t, model, condition) >= 1.0)
    return passed / len(tasks)


def gap_to_human(cohort: Cohort, model: str, task: str) -> float:
    return (skill_gain(cohort, model, task, Condition.generated_skill)
            - skill_gain(cohort, model, task, Condition.human_skill))


def attempt_bins(cohort: Cohort, condition: Condition = Condition.generated_skill) -> Dict[Tuple[str, int], MeanResult]:
    """Mean gain per (model, K) over baseline-unsolved tasks whose trajectory used exactly K attempts."""
    bins: Dict[Tuple[str, int], List[float]] = {}
    for model in cohort.models():
        for task in cohort.baseline_unsolved(model, condition):
            bundle = cohort.bundles.get(task)
            if bundle is None or bundle.solved_at is None:
                continue
            bins.setdefault((model, bundle.k), []).append(skill_gain(cohort, model, task, condition))
    return {key: MeanResult(math.fsum(v) / len(v), len(v)) for key, v in sorted(bins.items())}


def pair_outcomes(cohort: Cohort, pdi_by_task: Mapping[str, float],
                  condition: Condition = Condition.generated_skill) -> List[Tuple[str, str, float, float]]:
    """(model, task, pdi, gain) over baseline-unsolved iterative pairs."""
    pairs = []
    for model in cohort.models():
        for task in cohort.baseline_unsolved(model, condition):
            if task in pdi_by_task:
                pairs.append((model, task, pdi_by_task[task], skill_gain(cohort, model, task, condition)))
    return pairs


# --- Median splits and quadrants ---

def median_split(values: Sequence[float]) -> List[bool]:
    """True for values strictly above the median; ties go Low."""
    if not values:
        return []
    median = float(np.median(values))
    return [v > median for v in values]


@dataclass(frozen=True)
class QuadrantRow:
    plan_level: str
    exec_level: str
    n_tasks: int
    mean_gain: Optional[float]
    mean_gap: Optional[float]


@dataclass(frozen=True)
class QuadrantTable:
    rows: Tuple[QuadrantRow, ...]
    warnings: Tuple[str, ...] = ()


def _tie_share(values: Sequence[float]) -> float:
    median = float(np.median(values))
    return sum(1 for v in values if v == median) / len(values)


def quadrant_table(cohort_components, gains: Sequence[float], human_gaps: Sequence[Optional[float]]) -> QuadrantTable:
    """Split iterative tasks by the median of phi_plan and phi_exec; mean gain and gap per quadrant."""
    plans = [c.phi_plan for c in cohort_components]
    execs = [c.phi_exec for c in cohort_components]
    if not (len(plans) == len(gains) == len(human_gaps)):
        raise DegenerateInput("components, gains and gaps must be aligned")
    if not plans:
        raise EmptyCohort("no iterative tasks")
    warnings = []
    for name, column in (("phi_plan", plans), ("phi_exec", execs)):
        if _tie_share(column) > 0.5:
            logger.warning("DegenerateMedian: more than half of %s equals its median", name)
            warnings.append(f"DegenerateMedian:{name}")
    plan_high = median_split(plans)
    exec_high = median_split(execs)
    rows = []
    for plan_level, exec_level in (("High", "High"), ("High", "Low"), ("Low", "High"), ("Low", "Low")):
        members = [i for i in range(len(plans))
                   if plan_high[i] == (plan_level == "High") and exec_high[i] == (exec_level == "High")]
        member_gains = [gains[i] for i in members]
        member_gaps = [human_gaps[i] for i in members if human_gaps[i] is not None]
        rows.append(QuadrantRow(
            plan_level=plan_level,
            exec_level=exec_level,
            n_tasks=len(members),
            mean_gain=math.fsum(member_gains) / len(member_gains) if member_gains else None,
            mean_gap=math.fsum(member_gaps) / len(member_gaps) if member_gaps else None,
        ))
    return QuadrantTable(tuple(rows), tuple(warnings))


# --- Convergence ---

@dataclass(frozen=True)
class TrendFit:
    intercept: float
    slope: float
    n_points: int


def fit_trend(xs: Sequence[float], ys: Sequence[float]) -> TrendFit:
    """Ordinary least squares y = intercept + slope * x via the normal equations."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise DegenerateInput("need at least two aligned points")
    n = len(xs)
    x_mean = math.fsum(xs) / n
    y_mean = math.fsum(ys) / n
    sxx = math.fsum((x - x_mean) ** 2 for x in xs)
    if sxx == 0:
        raise DegenerateInput("x values are constant")
    slope = math.fsum((x - x_mean) * y for x, y in zip(xs, ys)) / sxx
    return TrendFit(intercept=y_mean - slope * x_mean, slope=slope, n_points=n)


def classify_sequence(similarities: Sequence[float]) -> Tuple[TrendFit, TrendLabel]:
    """Classify successive-memo similarities J_2..J_K by the sign of their fitted slope."""
    fit = fit_trend(list(range(2, len(similarities) + 2)), similarities)
    return fit, TrendLabel.Convergent if fit.slope > 0 else TrendLabel.Divergent


def memo_similarities(memos: Sequence[Memo], tokenizer: Optional[TokenizerConfig] = None) -> List[float]:
    return [jaccard(prev.raw_text, curr.raw_text, tokenizer) for prev, curr in zip(memos, memos[1:])]


def classify_trajectory(memos: Sequence[Memo], tokenizer: Optional[TokenizerConfig] = None) -> Tuple[TrendFit, TrendLabel]:
    if len(memos) < 3:
        raise InsufficientMemos(f"need >= 3 memos, have {len(memos)}")
    return classify_sequence(memo_similarities(memos, tokenizer))


def facts_strategy_gap(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
                       tokenizer: Optional[TokenizerConfig] = None, vocab: Optional[Vocabulary] = None) -> float:
    """Mean consecutive psi of Verified Facts minus that of Next Strategy, over the trajectory vocabulary."""
    memos = bundle.memos
    if len(memos) < 2:
        raise InsufficientMemos(f"need >= 2 memos, have {len(memos)}", bundle.task_id)
    vocab = vocab or trajectory_vocab(bundle, tokenizer)

    def stability(texts: List[str]) -> float:
        dists = [distribution(t, vocab, alpha, tokenizer) for t in texts]
        return math.fsum(similarity(a, b) for a, b in zip(dists, dists[1:])) / (len(dists) - 1)

    return stability([m.facts_text for m in memos]) - stability([m.next_strategy for m in memos])


# --- Rank statistics ---

def _check_pair(x: Sequence[float], y: Sequence[float], min_n: int) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput("inputs must be equal-length vectors")
    if x.size < min_n:
        raise DegenerateInput(f"need at least {min_n} points, have {x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateCorrelation("an input is constant")
    return x, y


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - math.fsum(a) / a.size
    db = b - math.fsum(b) / b.size
    return math.fsum(da * db) / math.sqrt(math.fsum(da * da) * math.fsum(db * db))


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho with average ranks for ties (no p-value; n >= 2)."""
    x, y = _check_pair(x, y, 2)
    return max(-1.0, min(1.0, _pearson(stats.rankdata(x), stats.rankdata(y))))


def _rank_product_distribution(rx2: Sequence[int], ry2: Sequence[int]) -> np.ndarray:
    """counts[s] = number of permutations pi with sum_i rx2[i] * ry2[pi(i)] == s."""
    n = len(rx2)
    size = sum(a * b for a, b in zip(sorted(rx2), sorted(ry2))) + 1
    layer = {0: np.zeros(size, dtype=np.int64)}
    layer[0][0] = 1
    for i in range(n):
        following = {}
        for mask, counts in layer.items():
            for j in range(n):
                if mask & (1 << j):
                    continue
                shift = rx2[i] * ry2[j]
                target = following.get(mask | (1 << j))
                if target is None:
                    target = following[mask | (1 << j)] = np.zeros(size, dtype=np.int64)
                target[shift:] += counts[:size - shift]
        layer = following
    return layer[(1 << n) - 1]


def _spearman_exact_p(x: np.ndarray, y: np.ndarray) -> float:
    rx2 = [int(round(2 * r)) for r in stats.rankdata(x)]
    ry2 = [int(round(2 * r)) for r in stats.rankdata(y)]
    n = len(rx2)
    a, b = sum(rx2), sum(ry2)
    observed = abs(n * sum(p * q for p, q in zip(rx2, ry2)) - a * b)
    counts = _rank_product_distribution(rx2, ry2)
    sums = np.arange(counts.size, dtype=np.int64)
    extreme = np.abs(n * sums - a * b) >= observed
    return float(counts[extreme].sum()) / math.factorial(n)


def spearman(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Spearman rho and two-sided p: exact permutation distribution for n <= 12,
    t approximation above."""
    x, y = _check_pair(x, y, 3)
    rho = rank_correlation(x, y)
    n = x.size
    if n <= SPEARMAN_EXACT_MAX_N:
        return rho, min(1.0, _spearman_exact_p(x, y))
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """U statistic of `a` and two-sided p: exact enumeration for n_a + n_b <= 16,
    normal approximation with tie and continuity correction above."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyGroup("both samples must be nonempty")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    ranks = stats.rankdata(pooled)
    u = math.fsum(ranks[:n_a]) - n_a * (n_a + 1) / 2.0
    total = n_a + n_b
    if total > MANN_WHITNEY_EXACT_MAX_N:
        result = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        return u, float(result.pvalue)
    doubled = [int(round(2 * r)) for r in ranks]
    centre = n_a * (total + 1)  # expected doubled rank sum of `a`
    observed = abs(sum(doubled[:n_a]) - centre)
    hits = count = 0
    for chosen in itertools.combinations(doubled, n_a):
        count += 1
        hits += abs(sum(chosen) - centre) >= observed
    return u, hits / count


def significance_stars(p: Optional[float]) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class CorrelationRow:
    column: str
    group: str
    n: int
    rho: Optional[float]
    p_value: Optional[float]

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def correlate_columns(table: Mapping[str, Mapping[str, Optional[float]]], columns: Sequence[str],
                      outcomes: Sequence[Tuple[str, str, float]], pooled_label: str = "pooled") -> List[CorrelationRow]:
    """Spearman of each column against outcomes, per outcome group plus a pooled row.

    `table` maps task_id to column values; `outcomes` holds (group, task_id, value).
    Pairs with an absent column value are skipped.
    """
    groups = sorted({g for g, _, _ in outcomes})
    if len(groups) > 1:
        groups.append(pooled_label)
    rows = []
    for column in columns:
        for group in groups:
            xs, ys = [], []
            for g, task, value in outcomes:
                if group != pooled_label and g != group:
                    continue
                x = table.get(task, {}).get(column)
                if x is None or (isinstance(x, float) and math.isnan(x)):
                    continue
                xs.append(x)
                ys.append(value)
            try:
                rho, p = spearman(xs, ys)
            except DegenerateInput:
                rho = p = None
            rows.append(CorrelationRow(column, group, len(xs), rho, p))
    return rows


def feature_correlations(features: Mapping[str, Mapping[str, Optional[float]]],
                         gains_by_model: Mapping[str, Mapping[str, float]],
                         columns: Optional[Sequence[str]] = None) -> List[CorrelationRow]:
    """Feature x model rho table with a pooled row per feature.

    `features` maps task_id to feature values, `gains_by_model` maps model to task_id to gain.
    """
    if columns is None:
        columns = sorted({c for values in features.values() for c in values})
    outcomes = [(model, task, gain) for model in sorted(gains_by_model)
                for task, gain in sorted(gains_by_model[model].items())]
    return correlate_columns(features, columns, outcomes)
