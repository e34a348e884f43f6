"""Agent-based fault diagnosis for event-driven function block applications."""

from .agent import (
    Agent,
    ConsolidatedDiagnosis,
    NormalBehaviorProfile,
    SessionReport,
    correlate,
    run_session,
)
from .fbnetwork import Application, parse_application, parse_fb_type, validate
from .runtime import BehaviorRegistry, Runtime, instantiate

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "Application",
    "BehaviorRegistry",
    "ConsolidatedDiagnosis",
    "NormalBehaviorProfile",
    "Runtime",
    "SessionReport",
    "correlate",
    "instantiate",
    "parse_application",
    "parse_fb_type",
    "run_session",
    "validate",
]
