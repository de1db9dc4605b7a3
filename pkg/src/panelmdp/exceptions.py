"""Exception hierarchy shared by every panelmdp module."""


class PanelMDPError(Exception):
    """Base class for all package errors."""


class ConfigError(PanelMDPError, ValueError):
    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ShapeError(PanelMDPError, ValueError):
    pass


class NumericError(PanelMDPError, FloatingPointError):
    pass


class ContractViolation(PanelMDPError):
    """An action outside the legal action set was supplied."""


class EpisodeExhausted(PanelMDPError):
    pass


class InvalidPlacement(PanelMDPError):
    pass


class SlotConflict(PanelMDPError):
    pass


class InconsistentFeedback(PanelMDPError):
    pass


class EmptyInputError(PanelMDPError, ValueError):
    pass


class InsufficientDataError(PanelMDPError):
    pass


class EnumerationCapExceeded(PanelMDPError):
    pass


class UndefinedAUCError(PanelMDPError, ValueError):
    pass


class ParseError(PanelMDPError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(PanelMDPError):
    pass
