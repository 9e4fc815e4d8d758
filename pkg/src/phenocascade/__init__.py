"""Hybrid disease-status classifier.

Trigger-phrase rules label the rare questionable/absent classes directly;
records the rules defer on go to a dual-channel CNN over trigger words and
linked concept identifiers. See the README for the end-to-end CLI workflow.
"""

from .corpus import AnnotationSet, ClinicalRecord, DiseaseLabel, TaskKind
from .errors import ConfigError, DataFormatError, InternalError, PhenocascadeError

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet",
    "ClinicalRecord",
    "ConfigError",
    "DataFormatError",
    "DiseaseLabel",
    "InternalError",
    "PhenocascadeError",
    "TaskKind",
    "__version__",
]
