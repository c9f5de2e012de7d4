"""Online proxy-PDI monitor: step-level components, warm-up weighting and
soft/strong intervention triggers."""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from config import DEFAULT_ALPHA, ControllerConfig, ReferenceStat, TokenizerConfig
from errors import DegenerateCohort
from models import Memo, TrajectoryBundle
from parsers import rerender
from textstats import distribution, distribution_from_tokens, similarity, tokenize, vocab_from_tokens
from utils.terms import CURRENT_ERROR_PATTERN, VERIFIED_FACTS, Trigger

logger = logging.getLogger(__name__)

TestSummary = Sequence[Tuple[str, bool]]


@dataclass(frozen=True)
class StepComponents:
    phi_exec: float
    phi_plan: float
    phi_oss: float
    has_history: bool

    def proxy_pdi(self, config: ControllerConfig) -> float:
        ref = config.reference_stats
        z_exec = _z(self.phi_exec, ref["exec"])
        # without a previous memo the plan and ossification terms contribute nothing
        if not self.has_history:
            return z_exec
        return z_exec - _z(self.phi_plan, ref["plan"]) - _z(self.phi_oss, ref["oss"])


def _z(value: float, stat: ReferenceStat) -> float:
    return (value - stat.mean) / stat.std


def _failed(tests: Optional[TestSummary]) -> List[str]:
    return sorted({name for name, passed in (tests or ()) if not passed})


def step_components(memo_k: Memo, memo_prev: Optional[Memo], commands_k: Sequence[str],
                    tests_k: Optional[TestSummary] = None, tests_prev: Optional[TestSummary] = None,
                    alpha: float = DEFAULT_ALPHA, tokenizer: Optional[TokenizerConfig] = None) -> StepComponents:
    """Step-level similarities over a vocabulary local to the step's texts."""
    commands_text = "\n".join(commands_k)
    token_lists = [tokenize(memo_k.raw_text, tokenizer), tokenize(commands_text, tokenizer),
                   _failed(tests_k), _failed(tests_prev)]
    if memo_prev is not None:
        token_lists.append(tokenize(memo_prev.raw_text, tokenizer))
    vocab = vocab_from_tokens(token_lists)

    def psi(a: str, b: str) -> float:
        return similarity(distribution(a, vocab, alpha, tokenizer), distribution(b, vocab, alpha, tokenizer))

    phi_exec = psi(commands_text, memo_k.commands_text)
    if memo_prev is None:
        return StepComponents(phi_exec, 0.0, 0.0, has_history=False)
    phi_plan = psi(memo_prev.next_strategy, memo_k.next_strategy)
    tests_psi = similarity(distribution_from_tokens(_failed(tests_prev), vocab, alpha),
                           distribution_from_tokens(_failed(tests_k), vocab, alpha))
    phi_oss = 0.5 * psi(memo_prev.facts_text, memo_k.facts_text) + 0.5 * tests_psi
    return StepComponents(phi_exec, phi_plan, phi_oss, has_history=True)


def step_proxy_pdi(memo_k: Memo, memo_prev: Optional[Memo], commands_k: Sequence[str],
                   tests_k: Optional[TestSummary] = None, tests_prev: Optional[TestSummary] = None,
                   config: Optional[ControllerConfig] = None, alpha: float = DEFAULT_ALPHA,
                   tokenizer: Optional[TokenizerConfig] = None) -> float:
    """Raw (unweighted) PDI_k for one reflection step."""
    config = config or ControllerConfig()
    components = step_components(memo_k, memo_prev, commands_k, tests_k, tests_prev, alpha, tokenizer)
    return components.proxy_pdi(config)


def warmup_weight(k: int, warmup_W: int) -> float:
    return min(1.0, k / warmup_W)


@dataclass(frozen=True)
class Directive:
    kind: Trigger
    withhold_next_strategy: bool = False
    anchor_sections: Tuple[str, ...] = ()

    @classmethod
    def for_trigger(cls, kind: Trigger) -> 'Directive':
        if kind is Trigger.strong:
            return cls(kind, True, (VERIFIED_FACTS, CURRENT_ERROR_PATTERN))
        return cls(kind)


NO_DIRECTIVE = Directive(Trigger.none)


@dataclass(frozen=True)
class InterventionState:
    step_k: int = 0
    proxy_history: Tuple[float, ...] = ()
    last_trigger: Trigger = Trigger.none
    # trailing run of sub-threshold steps since the last strong trigger
    consecutive_below: int = 0


@dataclass(frozen=True)
class ControllerEvent:
    step: int
    raw_pdi: float
    weight: float
    d_hat: float
    trigger: str
    phi_exec: Optional[float] = None
    phi_plan: Optional[float] = None
    phi_oss: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def observe(state: InterventionState, raw_pdi_k: float,
            config: Optional[ControllerConfig] = None) -> Tuple[InterventionState, Directive]:
    config = config or ControllerConfig()
    k = state.step_k + 1
    d_hat = warmup_weight(k, config.warmup_W) * raw_pdi_k
    below = d_hat < config.tau
    if below and state.consecutive_below >= 1:
        trigger, run = Trigger.strong, 0
    elif below:
        trigger, run = Trigger.soft, state.consecutive_below + 1
    else:
        trigger, run = Trigger.none, 0
    logger.debug("step %d raw=%.6f d_hat=%.6f trigger=%s", k, raw_pdi_k, d_hat, trigger.value)
    new_state = InterventionState(
        step_k=k,
        proxy_history=state.proxy_history + (d_hat,),
        last_trigger=trigger,
        consecutive_below=run,
    )
    return new_state, Directive.for_trigger(trigger)


def replay(raw_values: Sequence[float], config: Optional[ControllerConfig] = None) -> List[Tuple[InterventionState, Directive]]:
    """Drive a fresh state through a whole raw proxy sequence."""
    state = InterventionState()
    out = []
    for raw in raw_values:
        state, directive = observe(state, raw, config)
        out.append((state, directive))
    return out


def apply_directive(directive: Directive, memo: Memo) -> Memo:
    """Strong directives withhold Next Strategy; soft ones leave the memo untouched."""
    if not directive.withhold_next_strategy or not memo.next_strategy:
        return memo
    return rerender(memo, next_strategy="")


def bundle_steps(bundle: TrajectoryBundle, alpha: float = DEFAULT_ALPHA,
                 tokenizer: Optional[TokenizerConfig] = None) -> List[StepComponents]:
    """Step components of every reflection step of a recorded trajectory."""
    steps = []
    for i, memo in enumerate(bundle.memos):
        attempt = bundle.attempts[i]
        prev_memo = bundle.memos[i - 1] if i > 0 else None
        prev_tests = bundle.attempts[i - 1].test_summary if i > 0 else None
        steps.append(step_components(memo, prev_memo, attempt.commands, attempt.test_summary,
                                     prev_tests, alpha, tokenizer))
    return steps


def calibrate(bundles: Sequence[TrajectoryBundle], alpha: float = DEFAULT_ALPHA,
              tokenizer: Optional[TokenizerConfig] = None) -> Dict[str, ReferenceStat]:
    """Mean and population std of each step component over a corpus of recorded trajectories.

    Plan and ossification statistics only use steps that have a previous memo.
    """
    columns: Dict[str, List[float]] = {"exec": [], "plan": [], "oss": []}
    for bundle in bundles:
        for step in bundle_steps(bundle, alpha, tokenizer):
            columns["exec"].append(step.phi_exec)
            if step.has_history:
                columns["plan"].append(step.phi_plan)
                columns["oss"].append(step.phi_oss)
    stats = {}
    for name, values in columns.items():
        if len(values) < 2:
            raise DegenerateCohort(f"{len(values)} {name} steps, need at least 2", "calibrate")
        mean = math.fsum(values) / len(values)
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))
        if std == 0:
            raise DegenerateCohort(f"{name} steps have zero spread", "calibrate")
        stats[name] = ReferenceStat(mean=mean, std=std)
    logger.info("calibrated reference stats from %d bundles", len(bundles))
    return stats
