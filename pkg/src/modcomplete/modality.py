"""Per-modality feature matrices, observation masks and relevance scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Stand-in for -inf: strictly below any achievable mean of cosines.
NEG_INF = -1e30


class ModalityError(ValueError):
    pass


@dataclass(frozen=True)
class ModalityStore:
    """Feature matrices, one per modality, all with ``n_items`` rows."""

    names: tuple[str, ...]
    features: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.features) or not self.names:
            raise ModalityError("need one name per feature matrix")
        rows = {f.shape[0] for f in self.features}
        if len(rows) != 1:
            raise ModalityError(f"row counts differ across modalities: {sorted(rows)}")
        for name, f in zip(self.names, self.features):
            if f.ndim != 2:
                raise ModalityError(f"{name}: features must be 2-D")
            if not np.all(np.isfinite(f)):
                raise ModalityError(f"{name}: non-finite feature values")

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray] | Sequence[np.ndarray]) -> "ModalityStore":
        if isinstance(arrays, dict):
            names, mats = tuple(arrays), tuple(arrays.values())
        else:
            mats = tuple(arrays)
            names = tuple(f"m{k}" for k in range(len(mats)))
        return cls(names, tuple(np.ascontiguousarray(m, dtype=np.float64) for m in mats))

    @property
    def n_items(self) -> int:
        return int(self.features[0].shape[0])

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(f.shape[1]) for f in self.features)

    def index(self, modality: int | str) -> int:
        if isinstance(modality, str):
            if modality.isdigit():
                modality = int(modality)
            elif modality in self.names:
                return self.names.index(modality)
            else:
                raise ModalityError(f"unknown modality {modality!r}")
        if not 0 <= modality < self.n_modalities:
            raise ModalityError(f"unknown modality {modality!r}")
        return modality

    def unit_rows(self, m: int) -> np.ndarray:
        """Row-normalized copy of modality ``m``; zero rows stay zero."""
        cache = self.__dict__.setdefault("_unit", {})
        if m not in cache:
            f = self.features[m]
            norm = np.linalg.norm(f, axis=1, keepdims=True)
            cache[m] = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
        return cache[m]

    def zero_unobserved(self, mask: "ModalityMask") -> "ModalityStore":
        """Copy with every unobserved slot overwritten by zeros."""
        feats = []
        for m, f in enumerate(self.features):
            f = f.copy()
            f[~mask.observed[:, m]] = 0.0
            feats.append(f)
        return ModalityStore(self.names, tuple(feats))


@dataclass(frozen=True)
class ModalityMask:
    observed: np.ndarray
    seed: int | None = None
    rate: float = 0.0

    def __post_init__(self) -> None:
        obs = np.asarray(self.observed, dtype=bool)
        object.__setattr__(self, "observed", obs)
        if obs.ndim != 2:
            raise ModalityError("mask must be 2-D")
        if obs.shape[0] and not obs.any(axis=1).all():
            raise ModalityError("every item needs at least one observed modality")

    @classmethod
    def full(cls, n_items: int, n_modalities: int) -> "ModalityMask":
        return cls(np.ones((n_items, n_modalities), dtype=bool), None, 0.0)

    @property
    def n_items(self) -> int:
        return int(self.observed.shape[0])

    def with_hidden(self, item: int, m: int) -> "ModalityMask":
        """Copy with slot (item, m) hidden as well."""
        obs = self.observed.copy()
        obs[item, m] = False
        return ModalityMask(obs, self.seed, self.rate)

    def summary(self) -> dict[str, int]:
        obs = self.observed
        n_obs = obs.sum(axis=1)
        out = {"items": self.n_items, "full": int((n_obs == obs.shape[1]).sum())}
        for m in range(obs.shape[1]):
            out[f"missing_{m}"] = int((~obs[:, m]).sum())
        return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, defined as 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ModalityError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sa, sb = np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)
    if sa == 0.0 or sb == 0.0:
        return 0.0
    # rescale first so squared entries cannot underflow or overflow
    a, b = a / sa, b / sb
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def relevance(store: ModalityStore, mask: ModalityMask, i: int, v: int) -> float:
    """Mean cosine over modalities observed by both ``i`` and ``v``.

    Returns ``NEG_INF`` when no modality is jointly observed.
    """
    total, count = 0.0, 0
    for m, f in enumerate(store.features):
        if mask.observed[i, m] and mask.observed[v, m]:
            total += cosine(f[i], f[v])
            count += 1
    return total / count if count else NEG_INF


def relevance_vector(store: ModalityStore, mask: ModalityMask, i: int) -> np.ndarray:
    """``relevance(store, mask, i, v)`` for every node ``v`` at once."""
    total = np.zeros(store.n_items)
    count = np.zeros(store.n_items)
    obs = mask.observed
    for m in range(store.n_modalities):
        if not obs[i, m]:
            continue
        unit = store.unit_rows(m)
        joint = obs[:, m]
        total += np.where(joint, unit @ unit[i], 0.0)
        count += joint
    with np.errstate(invalid="ignore", divide="ignore"):
        r = total / count
    r[count == 0] = NEG_INF
    return r


def mean_relevance(
    store: ModalityStore, mask: ModalityMask, i: int, nodes: Iterable[int]
) -> float:
    """Average relevance of ``nodes`` to ``i``; any sentinel makes it ``NEG_INF``."""
    nodes = list(nodes)
    if not nodes:
        raise ModalityError("empty node set")
    vals = [relevance(store, mask, i, v) for v in nodes]
    if any(x == NEG_INF for x in vals):
        return NEG_INF
    return sum(vals) / len(vals)


def apply_masking(
    n_items: int, n_modalities: int, rate: float, rng: np.random.Generator | int
) -> ModalityMask:
    """Hide exactly ``round(rate * n_items * n_modalities)`` slots at random.

    One randomly chosen modality per item is protected so every item keeps
    at least one observation; the masked slots are then drawn uniformly from
    the unprotected ones. For two modalities this is uniform over all
    feasible maskings.
    """
    if n_modalities < 1 or n_items < 0:
        raise ModalityError("need at least one modality")
    if rate < 0:
        raise ModalityError("rate must be non-negative")
    if rate > (n_modalities - 1) / n_modalities + 1e-12:
        raise ModalityError("constraint infeasible: rate exceeds (M-1)/M")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        from .seeding import stage_rng

        rng = stage_rng(int(seed), "mask")
    n_mask = int(round(rate * n_items * n_modalities))
    n_mask = min(n_mask, n_items * (n_modalities - 1))
    observed = np.ones((n_items, n_modalities), dtype=bool)
    if n_mask == 0:
        return ModalityMask(observed, seed, rate)
    keep = rng.integers(0, n_modalities, size=n_items)
    cand = np.ones((n_items, n_modalities), dtype=bool)
    cand[np.arange(n_items), keep] = False
    flat = np.flatnonzero(cand.ravel())
    chosen = rng.choice(flat, size=n_mask, replace=False)
    observed.ravel()[chosen] = False
    return ModalityMask(observed, seed, rate)
