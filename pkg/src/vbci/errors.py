"""Exception taxonomy shared across the package."""


class VbciError(Exception):
    """Base class for every error raised by this package."""


# --- signal path ---------------------------------------------------------


class InvalidBand(VbciError):
    """Cut frequencies out of order, non-positive, or at/above Nyquist."""


class ChannelMismatch(VbciError):
    """Block channel count does not match the filter state."""


class SignalTooShort(VbciError):
    """Signal too short for zero-phase edge padding."""


class InsufficientSamples(VbciError):
    """Fewer samples than one analysis window."""


class DegenerateBaseline(VbciError):
    """A baseline power entry is below the dropout epsilon."""


# --- dataset / files -----------------------------------------------------


class FormatError(VbciError):
    """Bad magic, schema version, or inconsistent payload in a data file."""


class ChannelCountMismatch(VbciError):
    """Sample matrix row count disagrees with the channel list."""


class EventOutOfBounds(VbciError):
    """A trial window extends outside the recording."""


class VersionMismatch(VbciError):
    """Artifact schema_version is not supported."""


class DecoderLoadError(VbciError):
    """Decoder file failed validation on load."""


# --- synthetic subject ---------------------------------------------------


class InvalidSchedule(VbciError):
    """Intent intervals overlap, are unordered, or exceed the duration."""


# --- training ------------------------------------------------------------


class DegenerateLabels(VbciError):
    """Only one class present where two are required."""


class EmptyOob(VbciError):
    """Every tree in the ensemble has an empty out-of-bag set."""


class TooFewRuns(VbciError):
    """Leave-one-run-out requires at least two runs."""


# --- online decoding -----------------------------------------------------


class OutOfRangePosterior(VbciError):
    """Posterior outside [0, 1] fed to the accumulator."""


class FeatureMismatch(VbciError):
    """Frame channel count does not cover the decoder's selected features."""


class StreamEnded(VbciError):
    """Sample stream exhausted before a decision or timeout."""


# --- protocol / session --------------------------------------------------


class QuestionTooLong(VbciError):
    """Question audio duration outside the 1-4 s protocol bounds."""


class UnknownNode(VbciError):
    """Assistive tree node id not present in the tree."""


class AbortRequested(VbciError):
    """Operator abort; the partial session log is retained."""


class PortUnavailable(VbciError):
    """Service port already bound."""


class HardwareUnavailable(VbciError):
    """The live-amplifier adapter is a stub; no driver is configured."""


# --- metrics -------------------------------------------------------------


class LengthMismatch(VbciError):
    """Paired label vectors have different lengths."""


class EmptyInput(VbciError):
    """Metric input is empty."""


class EmptyTrace(VbciError):
    """Trial trace has no samples."""


class TooFewSamples(VbciError):
    """Permutation test needs at least two samples per group."""


class OutOfRange(VbciError):
    """A p-value outside [0, 1]."""
