"""Model-input feature vectors for every estimator variant.

The base layout for a (source, translation) embedding pair is the
concatenation [s, t, |s - t|, s * t] (elementwise difference magnitude and
product), length 4D. Extensions append fixed-size blocks:

* reference block, directly after the base block: [r, |r - t|, r * t] (3D)
* per additional candidate translation: [t_i, |t_i - t|, t_i * t]
  (3D, +1 when the candidate's gold score is appended)
* per retrieved in-context example: [t_i, |t_i - t|, t_i * t,
  s_i, |s_i - s|, |s_i * s|, y_i] (6D + 1)

Score features enter as score/100 in [0, 1]. The absolute value on the
in-context source product block is intentional and can be switched off
with ``abs_product=False``. Missing candidates/examples are padded with
zero blocks and a zero score feature; which slots were real is recorded in
the vector's ``present`` metadata, not in the features themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

MODES = ("base", "polycand", "polyic")


@dataclass(frozen=True)
class FeatureLayout:
    """Shape contract for one feature vector family."""

    mode: str
    dim: int
    n: int = 0
    with_scores: bool = False
    with_ref: bool = False
    abs_product: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.mode == "base" and self.n != 0:
            raise ValueError("base layout takes no additional blocks")
        if self.mode != "polycand" and self.with_scores:
            raise ValueError("with_scores applies to polycand only")

    def expected_length(self) -> int:
        length = 4 * self.dim
        if self.with_ref:
            length += 3 * self.dim
        if self.mode == "polycand":
            length += self.n * (3 * self.dim + (1 if self.with_scores else 0))
        elif self.mode == "polyic":
            length += self.n * (6 * self.dim + 1)
        return length

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dim": self.dim,
            "n": self.n,
            "with_scores": self.with_scores,
            "with_ref": self.with_ref,
            "abs_product": self.abs_product,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureLayout":
        return cls(**data)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout
    present: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        expected = self.layout.expected_length()
        if self.values.shape != (expected,):
            raise ValueError(
                f"feature vector has length {self.values.shape}, layout expects {expected}"
            )


def feature_length(layout: FeatureLayout) -> int:
    return layout.expected_length()


def _as_unit_input(vec, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (dim,):
        raise ValueError(f"{what} has length {arr.shape}, expected {dim}")
    return arr


def _scaled_score(score, what: str) -> float:
    if score is None:
        raise ValueError(f"missing score for {what} in a score-augmented mode")
    score = float(score)
    if not 0.0 <= score <= 100.0:
        raise ValueError(f"score {score} for {what} outside [0, 100]")
    return score / 100.0


def _pair_block(other: np.ndarray, anchor: np.ndarray) -> list[np.ndarray]:
    return [other, np.abs(other - anchor), other * anchor]


def base_features(s_e, t_e) -> FeatureVector:
    """[s, t, |s - t|, s * t], length 4D."""
    s = np.asarray(s_e, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("s_e must be a non-empty 1-d vector")
    t = _as_unit_input(t_e, s.shape[0], "t_e")
    layout = FeatureLayout(mode="base", dim=s.shape[0])
    values = np.concatenate([s, t, np.abs(s - t), s * t])
    return FeatureVector(values=values, layout=layout)


def polycand_features(
    s_e,
    t_e,
    cands: Sequence[Optional[tuple]],
    with_scores: bool = False,
) -> FeatureVector:
    """Base features plus one [t_i, |t_i - t|, t_i * t(, y_i)] block per candidate.

    ``cands`` holds (embedding, score) pairs in the order the blocks should
    appear; a None entry is a padding slot (zero block, zero score feature).
    """
    base = base_features(s_e, t_e)
    dim = base.layout.dim
    t = np.asarray(t_e, dtype=np.float64)
    parts = [base.values]
    present = []
    for i, cand in enumerate(cands):
        if cand is None:
            parts.append(np.zeros(3 * dim + (1 if with_scores else 0)))
            present.append(False)
            continue
        t_i, y_i = cand
        t_i = _as_unit_input(t_i, dim, f"candidate {i}")
        parts.extend(_pair_block(t_i, t))
        if with_scores:
            parts.append(np.array([_scaled_score(y_i, f"candidate {i}")]))
        present.append(True)
    layout = FeatureLayout(mode="polycand", dim=dim, n=len(cands), with_scores=with_scores)
    return FeatureVector(np.concatenate(parts), layout, tuple(present))


def polyic_features(
    s_e,
    t_e,
    examples: Sequence[Optional[tuple]],
    abs_product: bool = True,
) -> FeatureVector:
    """Base features plus one seven-part block per retrieved scored example.

    ``examples`` holds (source embedding, translation embedding, score)
    triplets; None entries are padding slots.
    """
    base = base_features(s_e, t_e)
    dim = base.layout.dim
    s = np.asarray(s_e, dtype=np.float64)
    t = np.asarray(t_e, dtype=np.float64)
    parts = [base.values]
    present = []
    for i, example in enumerate(examples):
        if example is None:
            parts.append(np.zeros(6 * dim + 1))
            present.append(False)
            continue
        s_i, t_i, y_i = example
        s_i = _as_unit_input(s_i, dim, f"example {i} source")
        t_i = _as_unit_input(t_i, dim, f"example {i} translation")
        parts.extend(_pair_block(t_i, t))
        product = s_i * s
        parts.extend([s_i, np.abs(s_i - s), np.abs(product) if abs_product else product])
        parts.append(np.array([_scaled_score(y_i, f"example {i}")]))
        present.append(True)
    layout = FeatureLayout(
        mode="polyic", dim=dim, n=len(examples), abs_product=abs_product
    )
    return FeatureVector(np.concatenate(parts), layout, tuple(present))


def with_reference(fv: FeatureVector, r_e, t_e) -> FeatureVector:
    """Insert the reference block [r, |r - t|, r * t] directly after the base block."""
    if fv.layout.with_ref:
        raise ValueError("feature vector already carries a reference block")
    dim = fv.layout.dim
    r = _as_unit_input(r_e, dim, "r_e")
    t = _as_unit_input(t_e, dim, "t_e")
    split = 4 * dim
    values = np.concatenate([fv.values[:split], *_pair_block(r, t), fv.values[split:]])
    layout = replace(fv.layout, with_ref=True)
    return FeatureVector(values, layout, fv.present)
