"""Exception types.

Every error carries a short ``code`` (``"origin-not-interior"``,
``"support-violation"``, ...) so callers and the CLI can report a stable tag
without parsing messages.
"""

from __future__ import annotations


class WaveprobeError(Exception):
    code = "error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class GeometryError(WaveprobeError, ValueError):
    code = "geometry"


class GridError(WaveprobeError, ValueError):
    code = "grid"


class SamplingError(WaveprobeError, ValueError):
    code = "sampling"


class ShapeMismatchError(WaveprobeError, ValueError):
    code = "shape-mismatch"


class SupportViolationError(WaveprobeError, ValueError):
    code = "support-violation"


class UnstableSchemeError(WaveprobeError, RuntimeError):
    code = "unstable-scheme"


class IllConditionedInversionError(WaveprobeError, RuntimeError):
    code = "ill-conditioned-inversion"


class LambdaTooSmallError(WaveprobeError, RuntimeError):
    code = "lambda-too-small"


class SupportLeakError(WaveprobeError, RuntimeError):
    code = "support-leak"


class ProbeMismatchError(WaveprobeError, ValueError):
    code = "probe-mismatch"


class HypothesisViolationError(WaveprobeError, ValueError):
    code = "hypothesis-violation"


class GridFormatError(WaveprobeError, ValueError):
    code = "grid-format"


class ConfigError(WaveprobeError, ValueError):
    code = "config-invalid"
