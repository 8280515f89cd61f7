"""Class-name lists with a seen/unseen split, as read from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError


@dataclass(frozen=True)
class LabelSet:
    class_names: tuple[str, ...]
    seen: tuple[int, ...]
    unseen: tuple[int, ...]

    def __post_init__(self):
        C = len(self.class_names)
        s, u = set(self.seen), set(self.unseen)
        if s & u:
            raise ParameterError(f"classes {sorted(s & u)} are both seen and unseen")
        if s | u != set(range(C)):
            raise ParameterError(f"seen and unseen indices must partition [0, {C})")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def seen_mask(self) -> np.ndarray:
        m = np.zeros(self.num_classes, dtype=bool)
        m[list(self.seen)] = True
        return m

    @classmethod
    def from_seen(cls, seen, num_classes: int, names=None) -> "LabelSet":
        seen = tuple(sorted(int(c) for c in seen))
        if seen and (seen[0] < 0 or seen[-1] >= num_classes):
            raise ParameterError(f"seen index out of range [0, {num_classes})")
        names = tuple(names) if names is not None else tuple(f"class_{c}" for c in range(num_classes))
        unseen = tuple(c for c in range(num_classes) if c not in seen)
        return cls(names, seen, unseen)

    def to_json(self) -> dict:
        return {"classes": list(self.class_names), "seen": list(self.seen), "unseen": list(self.unseen)}


def load_label_set(path, num_classes: int | None = None) -> LabelSet:
    """Read either ``{"classes", "seen", "unseen"}`` or a bare list of seen indices.

    The bare-list form needs ``num_classes``.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(obj, list):
        if num_classes is None:
            raise ParameterError("a bare list of seen classes needs --num-classes")
        return LabelSet.from_seen(obj, num_classes)
    if not isinstance(obj, dict) or "seen" not in obj:
        raise FormatError(f"{path}: expected a list or an object with 'seen'")
    unknown = set(obj) - {"classes", "seen", "unseen"}
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")
    names = obj.get("classes")
    C = len(names) if names is not None else num_classes
    if C is None:
        raise ParameterError("label set without 'classes' needs --num-classes")
    ls = LabelSet.from_seen(obj["seen"], C, names)
    if "unseen" in obj and tuple(sorted(obj["unseen"])) != ls.unseen:
        raise ParameterError("seen and unseen indices must partition [0, C)")
    return ls
