"""Exception hierarchy shared across the package."""


class SpindlewatchError(Exception):
    """Base class for all errors raised by this package."""


class ScenarioError(SpindlewatchError):
    """Invalid scenario script (overlaps, unknown anomaly kinds, bad ranges)."""


class ConfigError(SpindlewatchError):
    """Invalid pipeline configuration document."""


class SignalError(SpindlewatchError):
    """Signal array is unusable (wrong length, non-finite samples)."""


class CriterionError(SpindlewatchError):
    """Monitoring criterion precondition violated (stopped spindle, band overflow)."""


class AlignmentError(SpindlewatchError):
    """Signal block and context sample are not time-aligned."""


class OperatorError(SpindlewatchError):
    """Aggregation operator misuse (criterion mismatch, window outside series)."""


class ThresholdLearningError(SpindlewatchError):
    """Threshold learning cannot proceed (too few samples, non-positive result)."""


class ScopeError(SpindlewatchError):
    """Malformed scope filter."""


class KpiError(SpindlewatchError):
    """KPI model cannot be evaluated; message carries the kpi_id."""


class StoreError(SpindlewatchError):
    """Persistence layer failure."""


class UnknownStreamError(StoreError):
    """Requested stream does not exist."""


class SchemaError(StoreError):
    """Row rejected by the stream schema; message names the offending field."""


class PipelineError(SpindlewatchError):
    """A pipeline stage failed; message names the agent and stage."""


class ReportError(SpindlewatchError):
    """Report construction or dispatch failure."""
