import math
import re
from datetime import datetime, timezone
from typing import List, Optional, Sequence

import humanize


class Utils:
    """Utility functions for the simulator"""

    # Time formatting utilities
    @staticmethod
    def format_duration(seconds: float) -> str:
        """Format seconds into a human-readable duration"""
        if seconds < 1:
            return humanize.precisedelta(seconds, minimum_unit="milliseconds")
        return humanize.precisedelta(seconds, minimum_unit="seconds", format="%0.1f")

    @staticmethod
    def utcnow() -> datetime:
        """Get current UTC time with timezone info"""
        return datetime.now(timezone.utc)

    @staticmethod
    def format_timestamp(dt: datetime) -> str:
        """ISO-8601 timestamp as stored in the run ledger"""
        # Handle both timezone-aware and naive datetimes
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.isoformat(timespec="seconds")

    # Number formatting utilities
    @staticmethod
    def format_number(value) -> str:
        """Shortest decimal text that reads back to the same double (at most 17 significant digits)"""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, int):
            return str(value)
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)

    @staticmethod
    def format_percent(value: float, digits: int = 1) -> str:
        return f"{100 * value:.{digits}f}%"

    # Parsing utilities
    @staticmethod
    def parse_bool(text: str) -> Optional[bool]:
        """Parse a boolean setting; None when the text is not a boolean"""
        lowered = str(text).strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        return None

    @staticmethod
    def parse_float_list(text: str) -> List[float]:
        """Parse "0.1, 0.2" or a range "0:1.5:0.1" (start:stop:step, stop included)"""
        text = str(text).strip()
        range_match = re.fullmatch(r"([^:]+):([^:]+):([^:]+)", text)
        if range_match:
            start, stop, step = (float(part) for part in range_match.groups())
            if step <= 0:
                raise ValueError(f"Range step must be > 0, got {step}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            if count < 1:
                raise ValueError(f"Empty range {text!r}")
            return [round(start + k * step, 12) for k in range(count)]
        parts = [p for p in re.split(r"[,\s]+", text) if p]
        return [float(p) for p in parts]

    @staticmethod
    def parse_int_list(text: str) -> List[int]:
        values = []
        for part in (p for p in re.split(r"[,\s]+", str(text).strip()) if p):
            number = float(part)
            if number != int(number):
                raise ValueError(f"Expected an integer, got {part!r}")
            values.append(int(number))
        return values

    # Curve utilities
    @staticmethod
    def crossing(xs: Sequence[float], ys: Sequence[float], level: float) -> Optional[float]:
        """First x where the piecewise-linear curve through (xs, ys) reaches level"""
        for k in range(len(xs) - 1):
            y0, y1 = ys[k], ys[k + 1]
            if y0 == level:
                return xs[k]
            if (y0 - level) * (y1 - level) < 0:
                return xs[k] + (level - y0) * (xs[k + 1] - xs[k]) / (y1 - y0)
        if xs and ys[-1] == level:
            return xs[-1]
        return None
