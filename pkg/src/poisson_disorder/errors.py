"""Named error codes shared by every module."""

from __future__ import annotations

MU_NOT_GT_ONE = "MU_NOT_GT_ONE"
LAMBDA_NOT_POSITIVE = "LAMBDA_NOT_POSITIVE"
C_NOT_POSITIVE = "C_NOT_POSITIVE"
M_OUT_OF_RANGE = "M_OUT_OF_RANGE"
PI_OUT_OF_RANGE = "PI_OUT_OF_RANGE"
NOT_FINITE = "NOT_FINITE"
UNKNOWN_KEY = "UNKNOWN_KEY"
MISSING_KEY = "MISSING_KEY"
LAMBDA_EQ_ONE = "LAMBDA_EQ_ONE"
NEGATIVE_COORDINATE = "NEGATIVE_COORDINATE"
V_OUT_OF_RANGE = "V_OUT_OF_RANGE"
STEP_REJECTED = "STEP_REJECTED"
NEGATIVE_ODDS = "NEGATIVE_ODDS"
BUDGET_EXCEEDED = "BUDGET_EXCEEDED"
DEGENERATE_GRID = "DEGENERATE_GRID"
NO_INTERSECTION = "NO_INTERSECTION"
WRONG_REGIME = "WRONG_REGIME"
INVALID_PRIOR = "INVALID_PRIOR"
INVALID_ARGUMENT = "INVALID_ARGUMENT"
MISSING_ARTIFACT = "MISSING_ARTIFACT"
CACHE_MISMATCH = "CACHE_MISMATCH"


class DisorderError(ValueError):
    """A failure tagged with one or more machine-readable codes."""

    def __init__(self, code: str | list[str], message: str = ""):
        codes = [code] if isinstance(code, str) else list(code)
        self.codes = codes
        self.code = codes[0]
        super().__init__(f"{', '.join(codes)}: {message}" if message else ", ".join(codes))

    def to_dict(self) -> dict:
        return {"error": self.code, "codes": self.codes, "message": str(self)}
