import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import yaml

from cohort_stats import (Cohort, agreement_matrix, attempt_bins, classify_trajectory, correlate_columns,
                          facts_strategy_gap, gap_to_human, pair_outcomes, pass_gain_rate, quadrant_table,
                          significance_stars, skill_gain)
from config import RunConfig
from controller import calibrate
from errors import (EmptyCohort, EmptyCorpus, EmptyGroup, InputError, InvariantViolation, MissingRecord, TrajectoryError)
from features import FEATURE_IDS, extract_features
from harness import RunResult, run_task
from models import TrajectoryBundle
from pdi import (AlphaSweepRow, PdiComponents, PdiScore, WeightVector, alpha_sweep, component_ablation,
                 compute_components, default_weight_grid, iterative_bundles, pdi, weight_cv,
                 weight_cv_by_group, weight_sweep)
from reports import read_table
from scenarios import load_scenario
from storage import load_bundle, save_bundle
from utils.terms import Condition, PdiMode, TaskGroup

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

PDI_COLUMNS = ["task_id", "phi_plan", "phi_exec", "phi_oss", "z_exec", "z_plan", "z_oss", "pdi", "pdi_group", "flags"]
FEATURE_COLUMNS = ["task_id", *FEATURE_IDS]
CLASSIFY_COLUMNS = ["task_id", "n_memos", "intercept", "slope", "label", "facts_strategy_gap", "status"]
CORRELATION_COLUMNS = ["feature", "group", "n", "rho", "p_value", "stars"]
ALPHA_COLUMNS = ["alpha", "spearman_rho", "p_value", "stars", "mann_whitney_p", "status"]
WEIGHT_COLUMNS = ["w_e", "w_p", "w_o", "spearman_rho", "p_value", "stars"]
FOLD_COLUMNS = ["fold", "w_e", "w_p", "w_o", "rho_fitted_heldout", "rho_equal_heldout", "train_size", "heldout_size"]
OUTCOME_COLUMNS = ["task_id", "outcome"]


def bundle_paths(corpus_dir: Union[str, Path]) -> List[Path]:
    """Bundle directories (holding bundle.json) and .zip archives directly under `corpus_dir`."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise EmptyCorpus("corpus directory does not exist", str(root))
    paths = [p for p in sorted(root.iterdir())
             if (p.is_dir() and (p / "bundle.json").is_file()) or (p.is_file() and p.suffix == ".zip")]
    if not paths:
        raise EmptyCorpus("no bundles found", str(root))
    return paths


class CorpusOperations:
    """Corpus-level analyses composed from the library modules; each CLI command calls one method."""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self.bundles: Dict[str, TrajectoryBundle] = {}
        self.skipped: List[Tuple[str, str]] = []  # (location, reason)

    # --- Helpers ---
    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Order-preserving map over the worker pool."""
        if self.config.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def _guarded(self, fn: Callable[[T], R]) -> Callable[[T], Tuple[Optional[R], Optional[TrajectoryError]]]:
        def call(item: T):
            try:
                return fn(item), None
            except TrajectoryError as e:
                return None, e
        return call

    def _keep_or_raise(self, label: str, error: TrajectoryError) -> None:
        if not self.config.skip_invalid:
            raise error
        logger.warning("skipping %s: %s", label, error)
        self.skipped.append((label, str(error)))

    # --- Loading ---
    def load_corpus(self, corpus_dir: Union[str, Path]) -> List[TrajectoryBundle]:
        paths = bundle_paths(corpus_dir)
        results = self._map(self._guarded(load_bundle), paths)
        bundles: Dict[str, TrajectoryBundle] = {}
        for path, (bundle, error) in zip(paths, results):
            if error is not None:
                self._keep_or_raise(str(path), error)
                continue
            if bundle.task_id in bundles:
                self._keep_or_raise(str(path), InvariantViolation(f"duplicate task_id {bundle.task_id!r}", str(path)))
                continue
            bundles[bundle.task_id] = bundle
        if not bundles:
            raise EmptyCorpus("no valid bundles", str(corpus_dir))
        self.bundles = dict(sorted(bundles.items()))
        logger.info("loaded %d bundles from %s (%d skipped)", len(self.bundles), corpus_dir, len(self.skipped))
        return list(self.bundles.values())

    # --- PDI ---
    def _components(self, members: Sequence[TrajectoryBundle]) -> List[Tuple[TrajectoryBundle, PdiComponents]]:
        """Components at the configured alpha; bundles that cannot be scored are skipped or raised."""
        compute = self._guarded(lambda b: compute_components(b, self.config.alpha, self.config.tokenizer))
        kept = []
        for bundle, (result, error) in zip(members, self._map(compute, members)):
            if error is not None:
                self._keep_or_raise(bundle.task_id, error)
            else:
                kept.append((bundle, result))
        return kept

    def cohort_scores(self) -> List[PdiScore]:
        components = [c for _, c in self._components(iterative_bundles(list(self.bundles.values())))]
        if not components:
            raise EmptyCohort("no iterative bundle yields PDI components")
        return pdi(components, cohort_id=f"alpha={self.config.alpha!r}")

    def pdi_by_task(self, scores: Optional[Sequence[PdiScore]] = None) -> Dict[str, float]:
        return {s.task_id: s.pdi for s in (scores if scores is not None else self.cohort_scores())}

    def analyze(self) -> Tuple[List[Dict[str, Any]], Dict[str, str]]:
        """Per-task PDI rows plus a cohort summary."""
        scores = self.cohort_scores()
        cohort = Cohort.build(self.bundles.values(), pdi_by_task=self.pdi_by_task(scores))
        rows = []
        for score in scores:
            c = score.components
            rows.append({
                "task_id": score.task_id,
                "phi_plan": c.phi_plan,
                "phi_exec": c.phi_exec,
                "phi_oss": c.phi_oss,
                "z_exec": score.z_exec,
                "z_plan": score.z_plan,
                "z_oss": score.z_oss,
                "pdi": score.pdi,
                "pdi_group": cohort.groups[score.task_id].value,
                "flags": "|".join(score.flags),
            })
        summary = {
            "cohort_size": str(len(scores)),
            "median_pdi": repr(float(np.median([s.pdi for s in scores]))),
            "interaction_free": str(sum(1 for g in cohort.groups.values() if g is TaskGroup.interaction_free)),
        }
        return rows, summary

    # --- Features and classification ---
    def features(self) -> List[Dict[str, Any]]:
        bundles = list(self.bundles.values())
        vectors = self._map(lambda b: extract_features(b, self.config.features, self.config.tokenizer), bundles)
        return [v.to_row() for v in vectors]

    def classify(self) -> List[Dict[str, Any]]:
        rows = []
        for bundle in self.bundles.values():
            row: Dict[str, Any] = {"task_id": bundle.task_id, "n_memos": len(bundle.memos), "status": "ok"}
            try:
                fit, label = classify_trajectory(bundle.memos, self.config.tokenizer)
                row.update(intercept=fit.intercept, slope=fit.slope, label=label.value)
                row["facts_strategy_gap"] = facts_strategy_gap(bundle, self.config.alpha, self.config.tokenizer)
            except InputError as e:
                row["status"] = type(e).__name__
            rows.append(row)
        return rows

    # --- Outcomes ---
    def derived_outcomes(self, condition: Condition = Condition.generated_skill) -> List[Tuple[str, str, float]]:
        """(model, task, skill gain) over baseline-unsolved pairs recorded in the bundles."""
        cohort = Cohort.build(self.bundles.values())
        return [(model, task, skill_gain(cohort, model, task, condition))
                for model in cohort.models() for task in cohort.baseline_unsolved(model, condition)]

    def load_outcomes(self, path: Optional[Union[str, Path]]) -> List[Tuple[str, str, float]]:
        """(group, task, value) from an outcomes CSV, or derived skill gains when no path is given."""
        if path is None:
            outcomes = self.derived_outcomes()
        else:
            frame = read_table(path, required=OUTCOME_COLUMNS)
            groups = frame["model_id"] if "model_id" in frame.columns else ["all"] * len(frame)
            outcomes = [(str(g), str(t), float(v)) for g, t, v in zip(groups, frame["task_id"], frame["outcome"])
                        if not (isinstance(v, float) and math.isnan(v))]
        if not outcomes:
            raise EmptyCohort("no outcomes available")
        return outcomes

    @staticmethod
    def per_task(outcomes: Sequence[Tuple[str, str, float]]) -> Dict[str, float]:
        """Mean outcome per task over all groups."""
        values: Dict[str, List[float]] = {}
        for _, task, value in outcomes:
            values.setdefault(task, []).append(value)
        return {task: math.fsum(v) / len(v) for task, v in values.items()}

    def _aligned(self, scores: Sequence[PdiScore], outcomes) -> Tuple[List[PdiScore], List[float]]:
        by_task = self.per_task(outcomes)
        kept = [s for s in scores if s.task_id in by_task]
        if len(kept) < len(scores):
            logger.info("%d of %d scored tasks have no outcome", len(scores) - len(kept), len(scores))
        return kept, [by_task[s.task_id] for s in kept]

    # --- Correlation ---
    def correlate(self, features_path: Union[str, Path], outcomes_path: Optional[Union[str, Path]] = None,
                  pooled_label: str = "pooled") -> List[Dict[str, Any]]:
        frame = read_table(features_path, required=["task_id"])
        # label columns such as pdi_group or flags are not correlated
        columns = [c for c in frame.select_dtypes(include="number").columns if c != "task_id"]
        table = {
            str(row["task_id"]): {c: (None if _is_missing(row[c]) else float(row[c])) for c in columns}
            for row in frame.to_dict(orient="records")
        }
        outcomes = self.load_outcomes(outcomes_path)
        return [
            {"feature": r.column, "group": r.group, "n": r.n, "rho": r.rho, "p_value": r.p_value, "stars": r.stars}
            for r in correlate_columns(table, columns, outcomes, pooled_label)
        ]

    # --- Sensitivity sweeps ---
    def sweep_alpha(self, alphas: Sequence[float], outcomes_path=None) -> List[Dict[str, Any]]:
        outcomes = self.per_task(self.load_outcomes(outcomes_path))
        candidates = [b for b in iterative_bundles(list(self.bundles.values())) if b.task_id in outcomes]
        members = [b for b, _ in self._components(candidates)]
        if not members:
            raise MissingRecord("no iterative bundle has an outcome")
        rows = alpha_sweep(members, alphas, [outcomes[b.task_id] for b in members], self.config.tokenizer)
        return [_alpha_row(r) for r in rows]

    def sweep_weights(self, outcomes_path=None, grid: Optional[Sequence[WeightVector]] = None,
                      ablation: bool = False) -> List[Dict[str, Any]]:
        scores, values = self._aligned(self.cohort_scores(), self.load_outcomes(outcomes_path))
        rows = component_ablation(scores, values) if ablation else weight_sweep(scores, values, grid or default_weight_grid())
        return [
            {"w_e": r.weights.w_e, "w_p": r.weights.w_p, "w_o": r.weights.w_o, "spearman_rho": r.spearman_rho,
             "p_value": r.p_value, "stars": significance_stars(r.p_value)}
            for r in rows
        ]

    def cross_validate(self, outcomes_path=None, k: int = 5, by_model: bool = False) -> List[Dict[str, Any]]:
        outcomes = self.load_outcomes(outcomes_path)
        scores = self.cohort_scores()
        if by_model:
            by_task = {s.task_id: s for s in scores}
            pairs = [(g, by_task[t], v) for g, t, v in outcomes if t in by_task]
            folds = weight_cv_by_group([p[1] for p in pairs], [p[2] for p in pairs], [p[0] for p in pairs])
        else:
            kept, values = self._aligned(scores, outcomes)
            folds = weight_cv(kept, values, k=k, seed=self.config.seed)
        return [
            {"fold": f.fold, "w_e": f.fitted.w_e, "w_p": f.fitted.w_p, "w_o": f.fitted.w_o,
             "rho_fitted_heldout": f.rho_fitted_heldout, "rho_equal_heldout": f.rho_equal_heldout,
             "train_size": f.train_size, "heldout_size": f.heldout_size}
            for f in folds
        ]

    # --- Cohort tables ---
    def cohort(self) -> Cohort:
        try:
            scores = self.pdi_by_task()
        except EmptyCohort:
            scores = {}
        return Cohort.build(self.bundles.values(), pdi_by_task=scores)

    def agreement(self) -> List[Dict[str, Any]]:
        return [{"model_i": i, "model_j": j, "agreement": rate} for i, j, rate in agreement_matrix(self.cohort())]

    def pass_gain(self) -> List[Dict[str, Any]]:
        cohort = self.cohort()
        rows = []
        for model in cohort.models():
            for group in TaskGroup:
                try:
                    rate = pass_gain_rate(cohort, group, model)
                except EmptyGroup:
                    rate = None
                rows.append({"model_id": model, "group": group.value, "pass_gain_rate": rate})
        return rows

    def attempt_bins(self) -> List[Dict[str, Any]]:
        return [{"model_id": model, "k": k, "mean_gain": r.value, "n_tasks": r.n_tasks}
                for (model, k), r in attempt_bins(self.cohort()).items()]

    def pairs(self) -> List[Dict[str, Any]]:
        cohort = self.cohort()
        return [{"model_id": m, "task_id": t, "pdi": p, "gain": g}
                for m, t, p, g in pair_outcomes(cohort, self.pdi_by_task())]

    def quadrants(self, model: str) -> Tuple[List[Dict[str, Any]], Tuple[str, ...]]:
        """Quadrant table for one student model over its baseline-unsolved iterative tasks."""
        cohort = self.cohort()
        scores = {s.task_id: s for s in self.cohort_scores()}
        components, gains, gaps = [], [], []
        for task in cohort.baseline_unsolved(model):
            if task not in scores:
                continue
            components.append(scores[task].components)
            gains.append(skill_gain(cohort, model, task))
            try:
                gaps.append(gap_to_human(cohort, model, task))
            except MissingRecord:
                gaps.append(None)
        table = quadrant_table(components, gains, gaps)
        rows = [{"plan_level": r.plan_level, "exec_level": r.exec_level, "n_tasks": r.n_tasks,
                 "mean_gain": r.mean_gain, "mean_gap": r.mean_gap} for r in table.rows]
        return rows, table.warnings

    # --- Controller ---
    def calibrate(self) -> str:
        """YAML controller config with reference stats fitted on the loaded corpus."""
        stats = calibrate(list(self.bundles.values()), self.config.alpha, self.config.tokenizer)
        document = {
            "tau": self.config.controller.tau,
            "warmup_W": self.config.controller.warmup_W,
            "reference_stats": {name: {"mean": s.mean, "std": s.std} for name, s in sorted(stats.items())},
        }
        return yaml.safe_dump(document, sort_keys=True)

    def simulate(self, scenario_path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                 pdi_mode: Optional[PdiMode] = None) -> RunResult:
        scenario = load_scenario(scenario_path)
        config = scenario.harness_config().model_copy(update={
            "controller": self.config.controller, "alpha": self.config.alpha, "tokenizer": self.config.tokenizer})
        if pdi_mode is not None:
            config = config.model_copy(update={"pdi_mode": pdi_mode})
        result = run_task(scenario.task, scenario.ports(), config, seed=scenario.seed)
        if out_dir is not None:
            save_bundle(result.bundle, out_dir)
        return result


def _is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def _alpha_row(row: AlphaSweepRow) -> Dict[str, Any]:
    return {"alpha": row.alpha, "spearman_rho": row.spearman_rho, "p_value": row.p_value,
            "stars": significance_stars(row.p_value), "mann_whitney_p": row.mann_whitney_p, "status": row.status}
