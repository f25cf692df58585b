"""Rolling descriptor banks and the cluster models refitted from them.

Stage 4 picks C by silhouette; stages 1-3 are clustered with that C and their
indices mapped onto stage 4's by co-occurrence matching over the banked
samples. Rows are pushed for all stages together, so row ``i`` of every
stage's bank describes the same pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from pdat_adapt.clustering import ClusterModel, assign_labels, fit_clusters
from pdat_adapt.voting import alignment_permutation, vote_labels
from pdat_common.errors import DataError
from pdat_config.run_config import CsdaConfig

logger = logging.getLogger(__name__)

STAGES = (1, 2, 3, 4)
REFERENCE_STAGE = 4


@dataclass
class RefitSummary:
    num_clusters: int
    silhouettes: dict[int, float]
    histograms: dict[str, list[int]]
    flags: dict[int, dict[str, bool]]

    def as_event(self) -> dict:
        return {
            "C_selected": self.num_clusters,
            "silhouettes": {str(k): v for k, v in self.silhouettes.items()},
            "histograms": self.histograms,
            "flags": {str(k): v for k, v in self.flags.items() if v},
        }


class DescriptorMemory:
    def __init__(self, csda: CsdaConfig = CsdaConfig()) -> None:
        self.cfg = csda
        self.capacity = csda.memory_size
        self.banks: dict[tuple[int, str], np.ndarray] = {}
        self.models: dict[int, ClusterModel] = {}
        self.permutations: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return min((len(self.banks.get((REFERENCE_STAGE, d), ())) for d in ("source", "target")), default=0)

    @property
    def fitted(self) -> bool:
        return REFERENCE_STAGE in self.models

    @property
    def num_clusters(self) -> int:
        return self.models[REFERENCE_STAGE].num_clusters if self.fitted else 0

    def push(self, domain: str, descriptors: dict[int, np.ndarray]) -> None:
        """Append one batch of descriptors for every stage; oldest rows fall out past capacity."""
        if set(descriptors) != set(STAGES):
            raise DataError(f"memory expects descriptors for stages {STAGES}, got {sorted(descriptors)}")
        for m, vecs in descriptors.items():
            arr = np.asarray(vecs, dtype=np.float64)
            key = (m, domain)
            bank = self.banks.get(key)
            bank = arr if bank is None else np.concatenate([bank, arr])
            self.banks[key] = bank[-self.capacity:]

    def pooled(self, stage: int) -> tuple[np.ndarray, np.ndarray]:
        """Both domains' rows for ``stage`` and a parallel domain index (0 source, 1 target)."""
        parts, dom = [], []
        for i, d in enumerate(("source", "target")):
            bank = self.banks.get((stage, d))
            if bank is not None:
                parts.append(bank)
                dom.append(np.full(len(bank), i, dtype=np.int64))
        if not parts:
            raise DataError(f"memory for stage {stage} is empty")
        return np.concatenate(parts), np.concatenate(dom)

    def refit(self, seed: int) -> RefitSummary:
        c = self.cfg
        x4, dom = self.pooled(REFERENCE_STAGE)
        ref = fit_clusters(
            x4, (c.cluster_min, c.cluster_max), seed,
            stage=REFERENCE_STAGE, max_iter=c.kmeans_iter, restarts=c.kmeans_restarts,
        )
        models = {REFERENCE_STAGE: ref}
        ref_labels = assign_labels(ref, x4)
        perms = {REFERENCE_STAGE: np.arange(ref.num_clusters)}
        for m in STAGES:
            if m == REFERENCE_STAGE:
                continue
            xm, _ = self.pooled(m)
            model = fit_clusters(
                xm, (ref.num_clusters, ref.num_clusters), seed,
                stage=m, max_iter=c.kmeans_iter, restarts=c.kmeans_restarts,
            )
            models[m] = model
            if model.num_clusters != ref.num_clusters:
                logger.warning("stage %d: clustering fell back to C=%d; it follows stage 4 labels", m, model.num_clusters)
                continue
            perms[m] = alignment_permutation(
                ref_labels, assign_labels(model, xm),
                reference_clusters=ref.num_clusters, other_clusters=model.num_clusters,
            )
        self.models = models
        self.permutations = perms

        hist = {
            d: np.bincount(ref_labels[dom == i], minlength=ref.num_clusters).tolist()
            for i, d in enumerate(("source", "target"))
        }
        summary = RefitSummary(
            num_clusters=ref.num_clusters,
            silhouettes={m: models[m].silhouette for m in STAGES},
            histograms=hist,
            flags={m: models[m].flags for m in STAGES},
        )
        logger.info("refit clusters: C=%d silhouette(stage 4)=%.4f", ref.num_clusters, ref.silhouette)
        return summary

    def stage_labels(self, descriptors: dict[int, np.ndarray]) -> np.ndarray:
        """(N, 4) labels, each stage mapped into stage 4's index space."""
        if not self.fitted:
            raise DataError("cluster models are not fitted yet")
        ref = assign_labels(self.models[REFERENCE_STAGE], descriptors[REFERENCE_STAGE])
        cols = [
            self.permutations[m][assign_labels(self.models[m], descriptors[m])] if m in self.permutations else ref
            for m in STAGES
        ]
        return np.stack(cols, axis=1)

    def label(self, descriptors: dict[int, np.ndarray]) -> np.ndarray:
        per_stage = self.stage_labels(descriptors)
        if self.cfg.label_mode == "stage4":
            return per_stage[:, STAGES.index(REFERENCE_STAGE)]
        return vote_labels(per_stage, self.cfg.vote_weights, num_classes=self.num_clusters)

    def state_dict(self) -> dict:
        return {
            "banks": {f"{m}:{d}": v.copy() for (m, d), v in self.banks.items()},
            "models": {m: model.to_state() for m, model in self.models.items()},
            "permutations": {m: p.copy() for m, p in self.permutations.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.banks = {}
        for key, v in state.get("banks", {}).items():
            m, d = key.split(":", 1)
            self.banks[(int(m), d)] = np.asarray(v, dtype=np.float64)
        self.models = {int(m): ClusterModel.from_state(s) for m, s in state.get("models", {}).items()}
        self.permutations = {int(m): np.asarray(p, dtype=np.int64) for m, p in state.get("permutations", {}).items()}
