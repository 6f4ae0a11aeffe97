"""Certified drift-to-action control for deployed classifiers, at desk scale."""

from .controller import Action, ControllerConfig, ControllerState, DEFAULT_GAINS, controller_step
from .harness import (
    Artifacts, MetricsReport, Policy, RunConfig, calibrate, desk_controller, desk_stream, run_stream, run_sweep,
)
from .riskcert import CertConfig, Certificate, compute_certificate, selective_certificate
from .simenv import StreamConfig

__version__ = "0.1.0"

__all__ = [
    "Action", "Artifacts", "CertConfig", "Certificate", "ControllerConfig", "ControllerState", "DEFAULT_GAINS",
    "MetricsReport", "Policy", "RunConfig", "StreamConfig", "calibrate", "compute_certificate", "controller_step",
    "desk_controller", "desk_stream", "run_stream", "run_sweep", "selective_certificate",
]
