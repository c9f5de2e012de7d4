from typing import Optional


class TrajectoryError(Exception):
    """Base class for every error raised by the trajectory analytics library."""

    exit_code = 1

    def __init__(self, message: str, location: Optional[str] = None):
        self.message = message
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class InputError(TrajectoryError):
    """Bad input data or arguments (exit code 1)."""
    pass


class InvariantViolation(TrajectoryError):
    """A type invariant does not hold (exit code 2)."""

    exit_code = 2


# --- Bundles and IO ---
class MissingField(InputError):
    """A required field is absent from bundle.json or a bundle file is missing."""
    pass


class MalformedAttempt(InputError):
    """An attempt record cannot be decoded."""
    pass


class MemoParseFailure(InputError):
    """A memo file could not be parsed."""
    pass


class IoFailure(InputError):
    """Reading or writing a bundle failed at the filesystem level."""
    pass


class ConfigError(InputError):
    """A configuration value is out of range."""
    pass


# --- Parsers ---
class EmptyInput(InputError):
    """The text to parse is empty."""
    pass


class MissingSection(InputError):
    """A required memo section is missing (strict mode)."""
    pass


class UnterminatedCodeFence(InputError):
    """A fenced code block is never closed (strict mode)."""
    pass


# --- Text statistics ---
class EmptyCorpus(InputError):
    """No tokens in any segment, a vocabulary cannot be built."""
    pass


class NonPositiveAlpha(InputError):
    """Smoothing constant must be > 0."""
    pass


class VocabMismatch(InputError):
    """Two distributions were built over different vocabularies."""
    pass


# --- PDI and features ---
class MissingSkill(InputError):
    """The bundle has no skill document."""
    pass


class NoStrategyText(InputError):
    """No memo carries a nonempty Next Strategy section."""
    pass


class Unsolved(InputError):
    """The bundle has no successful attempt."""
    pass


class InsufficientHistory(InputError):
    """Not enough memos or attempts for a cross-attempt statistic."""
    pass


class NoMemos(InsufficientHistory):
    """The bundle has no memos."""
    pass


class SingleAttempt(InsufficientHistory):
    """The bundle has only one attempt."""
    pass


class InsufficientMemos(InsufficientHistory):
    """Too few memos for the requested statistic."""
    pass


class DegenerateCohort(InputError):
    """Fewer than two values, or all values equal."""
    pass


class RejectedWeights(InputError):
    """Weight vectors must keep w_e > 0."""
    pass


class FoldTooSmall(InputError):
    """A cross-validation fold is too small to evaluate."""
    pass


# --- Cohort statistics ---
class DegenerateInput(InputError):
    """Statistic undefined for the given input (too short or constant)."""
    pass


class DegenerateCorrelation(DegenerateInput):
    """Correlation undefined because one side is constant."""
    pass


class MissingRecord(InputError):
    """No evaluation record for the requested (task, model, condition)."""
    pass


class EmptyCohort(InputError):
    """No tasks available for an aggregate."""
    pass


class EmptyEligibleSet(InputError):
    """No task satisfies the restriction of the statistic."""
    pass


class EmptyGroup(InputError):
    """A group needed by the statistic is empty."""
    pass


# --- Harness ---
class PortContractViolation(InvariantViolation):
    """A pluggable port returned output outside its contract."""
    pass
