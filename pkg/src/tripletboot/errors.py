"""Exception types shared across the package."""


class TripletbootError(Exception):
    """Base class for all package errors."""


class ConfigError(TripletbootError):
    """Invalid configuration value or violated config precondition."""


class InputError(TripletbootError):
    """Malformed runtime input (shape mismatch, bad label, empty set...)."""


class SamplingError(TripletbootError):
    """A sampling operation cannot produce a value (e.g. singleton category)."""


class ParseError(TripletbootError):
    """Malformed persisted file; message carries the offending line number."""


class CheckpointError(TripletbootError):
    """Corrupt, truncated or version-incompatible checkpoint."""


class StateError(TripletbootError):
    """Operation invoked on an object in the wrong state."""
