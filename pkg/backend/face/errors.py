"""
Exception hierarchy for the face fitting library
"""
from typing import Any, Dict, Optional, Sequence, Tuple


class FaceFitError(Exception):
    """Root of every error raised by the fitting library"""


class ContractViolation(FaceFitError, ValueError):
    """Dimension, domain or precondition violation"""


class AssetError(ContractViolation):
    """A model asset, prior or data file breaks its invariants"""


class BehindCameraError(ContractViolation):
    """One or more points project with non-positive depth"""

    def __init__(self, message: str, indices: Sequence[Tuple[int, int]]):
        super().__init__(message)
        # (camera, point) pairs
        self.indices = list(indices)


class DegenerateComponentError(FaceFitError):
    """EM could not keep a mixture component alive"""


class SolverError(FaceFitError, RuntimeError):
    """Levenberg-Marquardt could not make progress"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
