"""Exception hierarchy shared by all modules."""


class RetroVLCError(Exception):
    """Base class for every error raised by the package."""


class InvalidChipPair(RetroVLCError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"chip pair at bit index {index} is not a Manchester symbol")
        self.index = index


class OddLength(RetroVLCError, ValueError):
    pass


class OddBitCount(RetroVLCError, ValueError):
    pass


class UnclassifiablePeriod(RetroVLCError, ValueError):
    def __init__(self, index: int, value: float):
        super().__init__(f"period {value!r} us at index {index} matches no symbol")
        self.index = index
        self.value = value


class PayloadNotByteAligned(RetroVLCError, ValueError):
    pass


class SampleRateTooLow(RetroVLCError, ValueError):
    pass


class ClockNotMonotone(RetroVLCError, ValueError):
    pass


class NoPreamble(RetroVLCError):
    def __init__(self, quality: float, threshold: float):
        super().__init__(f"preamble correlation {quality:.3f} below threshold {threshold:.3f}")
        self.quality = quality
        self.threshold = threshold


class PreambleMissing(NoPreamble):
    pass


class FrameTruncated(RetroVLCError):
    pass


class NeverCharges(RetroVLCError, ValueError):
    pass


class ScheduleOverlap(RetroVLCError, ValueError):
    pass


class ScenarioError(RetroVLCError):
    """Scenario file problem; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field
