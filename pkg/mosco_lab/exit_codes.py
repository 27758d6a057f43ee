"""Central exit-code taxonomy for mosco-lab."""

from __future__ import annotations

from enum import IntEnum


class ExitCode(IntEnum):
    """CLI exit codes used across mosco-lab."""

    SUCCESS = 0
    CONFIG_ERROR = 2
    INVARIANT_FAILURE = 3
    IO_ERROR = 4
    INTERNAL_ERROR = 70
