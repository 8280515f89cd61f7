"""Multi-seed mode comparisons on the toy, shared by scripts and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import TrainConfig
from .trainer import TrainingHistory, synth_scenario, train_toy

# name -> (mode, unseen image-label source)
VARIANTS = {
    "baseline-bg-embedding": ("baseline-bg-embedding", "gt"),
    "bg-aware": ("bg-aware", "gt"),
    "bg-aware+rank": ("bg-aware+rank", "gt"),
    "bg-aware+rank+pseudo": ("bg-aware+rank+pseudo", "pseudo"),
    "bg-aware+rank(no-unseen)": ("bg-aware+rank", "none"),
}


def ablation_config(**overrides) -> TrainConfig:
    """Default toy config shrunk to 16 queries, as used by the ablation runs."""
    return replace(TrainConfig(num_queries=16), **overrides)


@dataclass
class VariantResult:
    name: str
    histories: list[TrainingHistory]

    def _mean(self, attr) -> float:
        vals = [getattr(h.report, attr) for h in self.histories]
        return float(np.mean([0.0 if v is None else v for v in vals]))

    @property
    def miou_seen(self) -> float:
        return self._mean("miou_seen")

    @property
    def miou_unseen(self) -> float:
        return self._mean("miou_unseen")

    @property
    def unseen_to_seen(self) -> float:
        return float(np.mean([h.unseen_to_seen for h in self.histories]))

    def summary(self) -> dict:
        return {"miou_seen": self.miou_seen, "miou_unseen": self.miou_unseen,
                "unseen_to_seen": self.unseen_to_seen,
                "per_seed_unseen": [h.report.miou_unseen for h in self.histories]}


def run_ablation(config: TrainConfig, seeds, names=tuple(VARIANTS)) -> dict[str, VariantResult]:
    """Train every variant on every seed; variants of one seed share its scenario.

    An undefined unseen mIoU (no unseen class in the held-out scenes) counts as 0.
    """
    out = {n: VariantResult(n, []) for n in names}
    for seed in seeds:
        scenario = synth_scenario(replace(config, seed=seed))
        for n in names:
            mode, source = VARIANTS[n]
            cfg = replace(config, mode=mode, unseen_labels=source, seed=seed)
            out[n].histories.append(train_toy(cfg, scenario))
    return out
