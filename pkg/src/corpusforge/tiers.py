"""Security tier labels shared by the corpus store, the index, and the orchestrator."""
from __future__ import annotations

import enum


class SecurityTier(enum.IntEnum):
    """Ordered access level: public < collaboration < controlled."""

    PUBLIC = 0
    COLLABORATION = 1
    CONTROLLED = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "SecurityTier":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown security tier: {name!r}") from None


TIER_NAMES = tuple(t.label for t in SecurityTier)
