"""Backports of Python 3.11+ stdlib names used by this package (for older interpreters)."""

import sys
from enum import Enum

if sys.version_info >= (3, 11):
    from datetime import UTC
    from enum import StrEnum
    from typing import Self
else:
    from datetime import timezone

    UTC = timezone.utc

    from typing_extensions import Self

    class StrEnum(str, Enum):
        """Backport of ``enum.StrEnum`` (Python 3.11) with identical str/format semantics."""

        def __new__(cls, *values):
            value = str(*values)
            member = str.__new__(cls, value)
            member._value_ = value
            return member

        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()


__all__ = ["UTC", "Self", "StrEnum"]
