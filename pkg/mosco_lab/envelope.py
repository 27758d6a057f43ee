"""JSON envelope models for mosco-lab structured output."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class EnvelopeMeta(BaseModel):
    tool: str
    version: str
    duration_ms: int = Field(ge=0)
    warnings: list[str] = Field(default_factory=list)


class Envelope(BaseModel):
    ok: bool
    result: Any | None = None
    error: dict[str, Any] | None = None
    meta: EnvelopeMeta
