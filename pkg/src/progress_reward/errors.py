"""Exception hierarchy shared across the toolkit."""


class ProgressRewardError(Exception):
    """Base class for every error raised by this package."""


class InvariantViolation(ProgressRewardError):
    pass


class MissingStates(ProgressRewardError):
    pass


class IndexOutOfRange(ProgressRewardError):
    pass


class ShapeMismatch(ProgressRewardError):
    pass


class EmptyInput(ProgressRewardError):
    pass


class UnknownFamily(ProgressRewardError):
    pass


class MissingSubgoalAnnotations(ProgressRewardError):
    pass


class DegenerateRange(ProgressRewardError):
    pass


class DegenerateLength(ProgressRewardError):
    pass


class MissingProvenance(ProgressRewardError):
    pass


class NoMatchingRule(ProgressRewardError):
    pass


class NonFiniteLoss(ProgressRewardError):
    pass


class EmptyKnots(ProgressRewardError):
    pass


class DegenerateSequence(ProgressRewardError):
    pass


class SchemaVersionError(ProgressRewardError):
    pass


class ServiceUnreachable(ProgressRewardError):
    pass


class ProtocolError(ProgressRewardError):
    pass


class ConfigError(ProgressRewardError):
    """Bad or missing configuration, detected before any stage writes output."""


class StageError(ProgressRewardError):
    """A pipeline stage failed; carries the stage name and what it had written."""

    def __init__(self, stage: str, message: str, partial: tuple = ()):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.partial = tuple(partial)


# Response parsing: one class per failure so the format grader can tell them apart.


class ParseError(ProgressRewardError):
    code = "parse_error"


class MissingThink(ParseError):
    code = "missing_think"


class EmptyThink(MissingThink):
    code = "empty_think"


class MissingAnswer(ParseError):
    code = "missing_answer"


class MalformedProgress(ParseError):
    code = "malformed_progress"


class OutOfRange(ParseError):
    code = "out_of_range"


class TagOrderViolation(ParseError):
    code = "tag_order"
