"""Shared decision records: who shares with whom, and how much."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ValidationError


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster heads and their member sets.

    Clients that share with nobody and receive from nobody are recorded as
    heads with an empty member tuple, so ``heads`` plus all members always
    covers every client.
    """

    heads: tuple[int, ...]
    members: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        heads = tuple(sorted(int(h) for h in self.heads))
        members = {int(h): tuple(sorted(int(c) for c in self.members.get(h, ()))) for h in heads}
        unknown = set(int(h) for h in self.members) - set(heads)
        if unknown:
            raise ValidationError(f"members listed for non-head clients {sorted(unknown)}")
        seen: set[int] = set(heads)
        if len(seen) != len(heads):
            raise ValidationError("duplicate head ids")
        for h, cs in members.items():
            for c in cs:
                if c in seen:
                    raise ValidationError(f"client {c} appears twice (clusters must be disjoint)")
                seen.add(c)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "members", members)

    @classmethod
    def singletons(cls, num_clients: int) -> "ClusterAssignment":
        return cls(heads=tuple(range(num_clients)), members={})

    @property
    def clients(self) -> tuple[int, ...]:
        out = list(self.heads)
        for cs in self.members.values():
            out.extend(cs)
        return tuple(sorted(out))

    @property
    def sharing_heads(self) -> tuple[int, ...]:
        """Heads that actually have members."""
        return tuple(h for h in self.heads if self.members[h])

    def head_of(self) -> dict[int, int]:
        """Map member -> head (heads are not keys)."""
        return {c: h for h, cs in self.members.items() for c in cs}

    def check_covers(self, num_clients: int) -> None:
        if self.clients != tuple(range(num_clients)):
            raise ValidationError(
                f"assignment covers {self.clients}, expected clients 0..{num_clients - 1}"
            )

    def to_dict(self) -> dict:
        return {
            "heads": list(self.heads),
            "members": {str(h): list(cs) for h, cs in self.members.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterAssignment":
        return cls(
            heads=tuple(d["heads"]),
            members={int(h): tuple(cs) for h, cs in d.get("members", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["client_id", "role", "head"])
        head_of = self.head_of()
        for k in self.clients:
            if k in self.members:
                w.writerow([k, "head", k])
            else:
                w.writerow([k, "member", head_of[k]])
        return buf.getvalue()


@dataclass
class SharingPlan:
    """Per-head shared volume and per-client CPU frequency (Hz)."""

    volumes: dict[int, float] = field(default_factory=dict)
    frequencies: dict[int, float] = field(default_factory=dict)

    def volume(self, head: int) -> float:
        return float(self.volumes.get(head, 0.0))

    def to_dict(self) -> dict:
        return {
            "volumes": {str(k): v for k, v in sorted(self.volumes.items())},
            "frequencies": {str(k): v for k, v in sorted(self.frequencies.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SharingPlan":
        return cls(
            volumes={int(k): v for k, v in d.get("volumes", {}).items()},
            frequencies={int(k): float(v) for k, v in d.get("frequencies", {}).items()},
        )
