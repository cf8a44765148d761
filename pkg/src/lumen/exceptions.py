"""Exception hierarchy shared by all lumen modules."""


class LumenError(Exception):
    """Base class for every error raised by lumen."""


class InvalidConfig(LumenError, ValueError):
    pass


class FloatingNode(LumenError):
    """The LED terminal has no DC path to a rail, so its voltage is undefined."""


class SchemaError(LumenError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class InvariantError(LumenError, ValueError):
    pass


class RateExceedsModulatorBandwidth(LumenError, ValueError):
    def __init__(self, rate_hz, max_rate_hz, kind):
        self.rate_hz = rate_hz
        self.max_rate_hz = max_rate_hz
        super().__init__(
            f"bit rate {rate_hz:g} Hz exceeds the {kind} modulator cap of {max_rate_hz:g} Hz"
        )


class PayloadTooLong(LumenError, ValueError):
    pass


class FrameError(LumenError, ValueError):
    pass


class InvalidSymbolPair(LumenError, ValueError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"invalid Manchester symbol pair at index {index}")


class NoPreamble(LumenError):
    pass


class AssemblerError(LumenError, ValueError):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class UnknownMnemonic(AssemblerError):
    pass


class UnknownLabel(AssemblerError):
    pass


class OperandRangeError(AssemblerError):
    pass


class TickLimitExceeded(LumenError):
    pass


class TickMismatch(LumenError, ValueError):
    pass


class EmptyBaseline(LumenError, ValueError):
    pass
