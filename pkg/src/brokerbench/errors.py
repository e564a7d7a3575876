"""Exception hierarchy shared by every brokerbench module."""


class BenchError(Exception):
    """Base class for all brokerbench errors."""


# metrics
class MetricError(BenchError, ValueError):
    pass


class EmptySeries(MetricError):
    """No latencies were recorded (total message loss)."""


class InsufficientSamples(MetricError):
    """Jitter needs at least two consecutive latencies."""


class ZeroSpan(MetricError):
    pass


class NoMessages(MetricError):
    pass


class EmptyList(MetricError):
    pass


class EmptyTimeline(MetricError):
    pass


# codec
class CodecError(BenchError, ValueError):
    pass


class PayloadTooSmall(CodecError):
    pass


class MalformedPayload(CodecError):
    pass


# backend / transport
class TransportError(BenchError, OSError):
    pass


class UnsupportedTransport(BenchError, ValueError):
    pass


class InvalidEndpoint(BenchError, ValueError):
    pass


class AddressInUse(TransportError):
    pass


class PermissionDenied(TransportError):
    pass


class PathTooLong(InvalidEndpoint):
    pass


class ConnectionRefusedAfterRetries(TransportError):
    pass


class HandleClosed(TransportError):
    pass


class DuplicateName(TransportError):
    pass


class UnknownBackend(BenchError, KeyError):
    pass


class AdapterError(BenchError, RuntimeError):
    """A subprocess adapter exited abnormally or broke the JSON contract."""


# sampler
class NoSuchProcess(BenchError, LookupError):
    pass


class SamplingUnsupported(BenchError, RuntimeError):
    pass


# runner / sweep
class SendFailed(BenchError, RuntimeError):
    pass


class ClockError(BenchError, RuntimeError):
    """A negative one-way latency was observed."""


class RunFailed(BenchError, RuntimeError):
    pass


class AllRunsFailed(BenchError, RuntimeError):
    pass


class ConfigError(BenchError, ValueError):
    pass


class IncompleteGrid(BenchError, ValueError):
    pass
