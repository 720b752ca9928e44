"""spectradx: calibrated, explainable binary diagnosis from protein mass spectra."""

__version__ = "0.1.0"

from .spectra import MassSpectrum, MzRange  # noqa: E402,F401
from .features import BiomarkerPanel, FeatureVector  # noqa: E402,F401
from .forest import Hyperparameters, RandomForestModel  # noqa: E402,F401
from .calibrate import CalibratedModel, GateDecision  # noqa: E402,F401
from .explain import GlobalImportance, ShapExplanation, ShapMatrix  # noqa: E402,F401
from .framework import DiagnosisReport, FinalDecision  # noqa: E402,F401
