"""Benchmarking suite for brokerless publish/subscribe messaging."""

from .backend import (
    BackendDescriptor,
    BackendKind,
    Endpoint,
    Transport,
    adapter,
    get_backend,
    list_backends,
    publisher_bind,
    register,
    subscriber_connect,
)
from .metrics import LatencyStats, RunMetrics, ThroughputInput
from .runner import ExecutionResult, ExperimentConfig, execute

__version__ = "0.1.0"

__all__ = [
    "BackendDescriptor",
    "BackendKind",
    "Endpoint",
    "ExecutionResult",
    "ExperimentConfig",
    "LatencyStats",
    "RunMetrics",
    "ThroughputInput",
    "Transport",
    "adapter",
    "execute",
    "get_backend",
    "list_backends",
    "publisher_bind",
    "register",
    "subscriber_connect",
]
