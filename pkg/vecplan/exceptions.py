"""Exception types raised across the pipeline."""

from typing import Optional


class VecPlanError(Exception):
    """Base class for every error raised by this package."""


class InapplicableAction(VecPlanError):
    def __init__(self, action: str, missing: list):
        self.action = action
        self.missing = missing
        super().__init__(
            f"Action '{action}' is not applicable; missing preconditions: {missing}"
        )


class Unsolvable(VecPlanError):
    """The reachable state space was exhausted without meeting the goal."""


class BudgetExceeded(VecPlanError):
    def __init__(self, budget: int, what: str = "nodes"):
        self.budget = budget
        super().__init__(f"Search budget of {budget} {what} exceeded")


class GenerationExhausted(VecPlanError):
    """Not enough distinct solvable instances could be generated."""


class DomainParseError(VecPlanError):
    def __init__(
        self,
        message: str,
        line: int,
        column: int = 1,
        token: Optional[str] = None,
        source: str = "<domain>",
    ):
        self.line = line
        self.column = column
        self.token = token
        self.source = source
        where = f"{source}:{line}:{column}"
        detail = f" (token '{token}')" if token is not None else ""
        super().__init__(f"{where}: {message}{detail}")


class TraceParseError(VecPlanError):
    def __init__(
        self, message: str, line: int, token: Optional[str] = None, source: str = "<traces>"
    ):
        self.line = line
        self.token = token
        self.source = source
        detail = f" (token '{token}')" if token is not None else ""
        super().__init__(f"{source}:{line}: {message}{detail}")


class ShapeMismatch(VecPlanError):
    """An array does not have the shape a network or table expects."""


class NonFiniteLoss(VecPlanError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"Training diverged: loss={loss} at epoch {epoch}, batch {batch}"
        )


class FingerprintMismatch(VecPlanError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            f"Checkpoint was trained on domain {found[:12]}..., "
            f"but the loaded domain is {expected[:12]}..."
        )


class EmptyInput(VecPlanError):
    """An aggregate was requested over no data."""


class ConfigError(VecPlanError):
    """Invalid or unknown configuration value."""


class CheckpointError(VecPlanError):
    """A checkpoint container is malformed or has an unsupported version."""


class StageError(VecPlanError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")
