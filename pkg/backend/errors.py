"""
Errors - Exception hierarchy shared by the solvers, the simulator and the CLI
Library code raises these; only cli.main turns them into exit codes
"""

from typing import Optional


class QCDError(Exception):
    """Base class for every error raised by the detection toolkit"""


class ConfigError(QCDError, ValueError):
    """Malformed, unknown or out-of-range experiment configuration"""


class DomainError(QCDError, ValueError):
    """Argument outside the domain of an operation"""


class ConvergenceError(QCDError, RuntimeError):
    """An iterative numerical procedure stopped before reaching its tolerance"""

    def __init__(self, message: str, achieved_tol: float, iterations: Optional[int] = None):
        super().__init__(f"{message} (achieved tolerance {achieved_tol:.3e})")
        self.achieved_tol = achieved_tol
        self.iterations = iterations


class ChainError(QCDError, RuntimeError):
    """Energy chain without a unique aperiodic recurrent class"""


class SimulationCapError(QCDError, RuntimeError):
    """A simulated trajectory ran past the step cap without stopping"""

    def __init__(self, steps: int, message: Optional[str] = None):
        super().__init__(message or f"trajectory exceeded the step cap of {steps} slots")
        self.steps = steps
