"""
Exception hierarchy for the coupling toolkit.

Every error carries an ``exit_code`` the CLI hands back to the shell:
1 for configuration / validation problems, 2 for runtime failures.
"""
from typing import Optional


class LagCouplingError(Exception):
    exit_code = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Validation / configuration errors (exit 1)

class ConfigError(LagCouplingError):
    exit_code = 1


class PlanInvalid(LagCouplingError):
    exit_code = 1


class InvalidMatrix(LagCouplingError):
    exit_code = 1


class InvalidDistribution(LagCouplingError):
    exit_code = 1


class InvalidSurvival(LagCouplingError):
    exit_code = 1


class NonEvaluableDensity(LagCouplingError):
    exit_code = 1


class TooFewProcesses(LagCouplingError):
    exit_code = 1


class StateSpaceTooLarge(LagCouplingError):
    exit_code = 1


# Runtime errors (exit 2)

class CapExceeded(LagCouplingError):
    """No meeting within the sweep cap. Provenance is filled in by the runner."""

    def __init__(
        self,
        max_sweeps: int,
        lag: Optional[int] = None,
        replicate: Optional[int] = None,
        process: Optional[int] = None,
    ):
        self.max_sweeps = max_sweeps
        self.lag = lag
        self.replicate = replicate
        self.process = process
        where = ""
        if replicate is not None:
            where = f" (lag={lag}, replicate={replicate}, process={process})"
        super().__init__(
            f"chains did not meet within {max_sweeps} sweeps{where}; "
            "increase max_sweeps or check the coupling"
        )

    def with_provenance(self, lag: int, replicate: int, process: int) -> "CapExceeded":
        return CapExceeded(self.max_sweeps, lag=lag, replicate=replicate, process=process)

    def __reduce__(self):
        # loky workers pickle exceptions back to the parent
        return (CapExceeded, (self.max_sweeps, self.lag, self.replicate, self.process))


class MissingTau(LagCouplingError):
    pass


class IndexOutOfTrace(LagCouplingError):
    pass


class EvaluationError(LagCouplingError):
    pass


class TailTooHeavy(LagCouplingError):
    pass


class ZeroVariance(LagCouplingError):
    pass
