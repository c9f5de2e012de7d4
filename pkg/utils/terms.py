from enum import Enum


class ModeLabel(Enum):
    interaction_free = "interaction_free"
    iterative = "iterative"


class Condition(Enum):
    baseline = "baseline"
    generated_skill = "generated_skill"
    human_skill = "human_skill"


class Trigger(Enum):
    none = "none"
    soft = "soft"
    strong = "strong"


class FeatureGroup(Enum):
    exploration_dynamics = "exploration_dynamics"
    memo_quality = "memo_quality"
    skill_structure = "skill_structure"
    non_predictive = "non_predictive"


class TaskGroup(Enum):
    interaction_free = "interaction_free"
    iter_low_pdi = "iter_low_pdi"
    iter_high_pdi = "iter_high_pdi"


class TrendLabel(Enum):
    Convergent = "Convergent"
    Divergent = "Divergent"


class CommandCategory(Enum):
    Verify = "Verify"
    Implement = "Implement"
    Inspect = "Inspect"
    Prepare = "Prepare"
    Action = "Action"


class PdiMode(Enum):
    off = "off"
    observe = "observe"
    intervene = "intervene"


# Memo section names, in canonical template order
ATTEMPTS_LOG = "Attempts Log"
COMMANDS = "Commands"
VERIFIED_FACTS = "Verified Facts"
CURRENT_ERROR_PATTERN = "Current Error Pattern"
NEXT_STRATEGY = "Next Strategy"
MEMO_SECTIONS = (ATTEMPTS_LOG, COMMANDS, VERIFIED_FACTS, CURRENT_ERROR_PATTERN, NEXT_STRATEGY)
