"""Exception hierarchy shared across the pipeline.

Every error raised by library code derives from :class:`PipelineError` so the
CLI can map failures to a stage-tagged message and a nonzero exit status.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all spectradx errors."""


# --- spectrum ingestion / preprocessing ---------------------------------

class EmptyInput(PipelineError):
    pass


class MalformedRow(PipelineError):
    def __init__(self, line_number: int, detail: str = ""):
        self.line_number = line_number
        msg = f"unparseable row at line {line_number}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NegativeIntensity(PipelineError):
    def __init__(self, line_number: int):
        self.line_number = line_number
        super().__init__(f"negative intensity at line {line_number}")


class WindowTooLarge(PipelineError):
    pass


class ZeroCalibrantPeak(PipelineError):
    pass


class CalibrantOutOfRange(PipelineError):
    pass


# --- feature extraction --------------------------------------------------

class EmptyRange(PipelineError):
    pass


class ZeroDenominatorAuc(PipelineError):
    def __init__(self, biomarker: str):
        self.biomarker = biomarker
        super().__init__(f"zero area under curve for biomarker {biomarker}")


class NonuniformGrid(PipelineError):
    pass


class BinTooWide(PipelineError):
    pass


# --- models ---------------------------------------------------------------

class DegenerateData(PipelineError):
    pass


class ArityMismatch(PipelineError):
    pass


class EmptyNode(PipelineError):
    pass


class SingleClassTraining(PipelineError):
    pass


class TooFewPerClass(PipelineError):
    pass


class NonConvergence(PipelineError):
    def __init__(self, gradient_norm: float):
        self.gradient_norm = gradient_norm
        super().__init__(f"sigmoid fit did not converge; final gradient norm {gradient_norm:.3e}")


class UntrainedModel(PipelineError):
    pass


# --- attribution ----------------------------------------------------------

class TooManyFeatures(PipelineError):
    pass


class EmptyBackground(PipelineError):
    pass


class NameMismatch(PipelineError):
    pass


class EmptySummary(PipelineError):
    pass


class AllZeroAttributions(PipelineError):
    pass


# --- evaluation / orchestration -------------------------------------------

class LengthMismatch(PipelineError):
    pass


class InvalidConfig(PipelineError):
    pass


class ConfigParse(PipelineError):
    pass


class IoFailure(PipelineError):
    pass


class SchemeMismatch(PipelineError):
    pass


class MissingArtifact(PipelineError):
    def __init__(self, what: str):
        self.what = what
        super().__init__(f"required artifact missing: {what}")


class StageError(PipelineError):
    """Wraps a module error with the pipeline stage where it occurred."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {cause}")
