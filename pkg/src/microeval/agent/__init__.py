"""Perception strategies over pluggable model backends."""

from .backends import (
    BackendRequest,
    BoxFillSegmenter,
    Decoding,
    ModelBackend,
    RemoteBackend,
    RemoteSegmenter,
    ScriptedBackend,
    Segmenter,
    TransportError,
    UnscriptedRequest,
)
from .oracle import OracleBackend
from .pipeline import (
    ConfigError,
    EvidenceItem,
    MapConfig,
    PolicyMode,
    Prediction,
    RoiBudgetPolicy,
    View,
    discover_rois,
    inspect_roi,
    run_map,
    synthesize,
)
from .strategies import Strategy, run_strategy, validate_strategy

__all__ = [
    "BackendRequest", "BoxFillSegmenter", "ConfigError", "Decoding", "EvidenceItem", "MapConfig",
    "ModelBackend", "OracleBackend", "PolicyMode", "Prediction", "RemoteBackend", "RemoteSegmenter",
    "RoiBudgetPolicy", "ScriptedBackend", "Segmenter", "Strategy", "TransportError", "UnscriptedRequest",
    "View", "discover_rois", "inspect_roi", "run_map", "run_strategy", "synthesize", "validate_strategy",
]
