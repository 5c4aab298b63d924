"""The four pruning search spaces and their config -> mask mappings.

=========  ==========================  =====================================
kind       config values               mask
=========  ==========================  =====================================
SMALL      (h, u, l)                   first h heads / u units of layers < l
LAYER      L bits                      row l all ones iff bit l
MEDIUM     (h_0, u_0, ..., h_L-1, ...) first h_l heads / u_l units of row l
LARGE      L*(H+U) bits                reshaped (L, H+U): heads, then units
=========  ==========================  =====================================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import MaskPair, ModelDims


class SpaceKind(str, enum.Enum):
    SMALL = "small"
    LAYER = "layer"
    MEDIUM = "medium"
    LARGE = "large"


@dataclass(frozen=True)
class SearchSpace:
    kind: SpaceKind
    dims: ModelDims

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))

    @cached_property
    def upper(self) -> tuple[int, ...]:
        d = self.dims
        if self.kind is SpaceKind.SMALL:
            return (d.n_heads, d.n_units, d.n_layers)
        if self.kind is SpaceKind.LAYER:
            return (1,) * d.n_layers
        if self.kind is SpaceKind.MEDIUM:
            return (d.n_heads, d.n_units) * d.n_layers
        return (1,) * (d.n_layers * (d.n_heads + d.n_units))

    @property
    def ndim(self) -> int:
        return len(self.upper)

    @property
    def cardinality(self) -> int:
        return math.prod(u + 1 for u in self.upper)

    @property
    def is_binary(self) -> bool:
        return self.kind in (SpaceKind.LAYER, SpaceKind.LARGE)

    def config(self, values) -> SubNetConfig:
        return SubNetConfig(self, tuple(int(v) for v in values))

    def min_config(self) -> SubNetConfig:
        return self.config((0,) * self.ndim)

    def max_config(self) -> SubNetConfig:
        return self.config(self.upper)

    def sample(self, rng: np.random.Generator) -> SubNetConfig:
        """Uniform sample; binary spaces first draw how many entries are on."""
        if self.is_binary:
            k = int(rng.integers(0, self.ndim + 1))
            values = np.zeros(self.ndim, dtype=int)
            values[rng.choice(self.ndim, size=k, replace=False)] = 1
            return self.config(values)
        return self.config(rng.integers(0, np.asarray(self.upper) + 1))

    def mutate(self, cfg: SubNetConfig, rng: np.random.Generator) -> SubNetConfig:
        """Resample one random coordinate uniformly from its full range (may repeat the old value)."""
        d = int(rng.integers(0, self.ndim))
        values = list(cfg.values)
        values[d] = int(rng.integers(0, self.upper[d] + 1))
        return self.config(values)

    def canonical(self, cfg: SubNetConfig) -> SubNetConfig:
        """Collapse SMALL configs whose mask is empty (l = 0, or h = u = 0) to (0, 0, 0).

        (0, u, l) and (h, 0, l) still keep FFN units or heads, so they stay distinct.
        """
        if self.kind is SpaceKind.SMALL:
            h, u, l = cfg.values
            if l == 0 or (h == 0 and u == 0):
                return self.min_config()
        return cfg

    @property
    def n_distinct(self) -> int:
        """Number of configs with pairwise different masks."""
        if self.kind is SpaceKind.SMALL:
            d = self.dims
            return 1 + d.n_layers * ((d.n_heads + 1) * (d.n_units + 1) - 1)
        return self.cardinality

    def encode(self, cfg: SubNetConfig) -> np.ndarray:
        """Coordinates scaled to [0, 1] by their range (surrogate-model input)."""
        return np.asarray(cfg.values, dtype=float) / np.asarray(self.upper, dtype=float)

    def enumerate(self):
        for flat in range(self.cardinality):
            values = []
            for u in reversed(self.upper):
                flat, r = divmod(flat, u + 1)
                values.append(r)
            yield self.config(reversed(values))

    # masks and parameter counts -------------------------------------------------

    def create_mask(self, cfg: SubNetConfig) -> MaskPair:
        cfg.check()
        d = self.dims
        L, H, U = d.n_layers, d.n_heads, d.n_units
        head = np.zeros((L, H))
        neuron = np.zeros((L, U))
        v = cfg.values
        if self.kind is SpaceKind.SMALL:
            h, u, l = v
            head[:l, :h] = 1
            neuron[:l, :u] = 1
        elif self.kind is SpaceKind.LAYER:
            for l in range(L):
                head[l, :] = v[l]
                neuron[l, :] = v[l]
        elif self.kind is SpaceKind.MEDIUM:
            for l in range(L):
                head[l, : v[2 * l]] = 1
                neuron[l, : v[2 * l + 1]] = 1
        else:
            theta = np.asarray(v, dtype=float).reshape(L, H + U)
            head[:] = theta[:, :H]
            neuron[:] = theta[:, H:]
        return MaskPair(head, neuron)

    @cached_property
    def fixed_params(self) -> int:
        """Parameters that no mask can remove: embeddings, layer norms, classifier."""
        d = self.dims
        return (
            d.vocab_size * d.d_model
            + d.max_len * d.d_model
            + d.n_layers * 4 * d.d_model
            + d.d_model * d.n_classes
            + d.n_classes
        )

    @property
    def params_per_head(self) -> int:
        return 4 * self.dims.d_model * self.dims.d_head

    @property
    def params_per_neuron(self) -> int:
        return 2 * self.dims.d_model + 1

    def param_count(self, cfg: SubNetConfig) -> int:
        return mask_param_count(self.create_mask(cfg), self.dims)


def mask_param_count(mask: MaskPair, dims: ModelDims) -> int:
    space = SearchSpace(SpaceKind.SMALL, dims)
    return int(
        space.fixed_params
        + space.params_per_head * int(mask.head.sum())
        + space.params_per_neuron * int(mask.neuron.sum())
    )


@dataclass(frozen=True)
class SubNetConfig:
    space: SearchSpace
    values: tuple[int, ...]

    def check(self) -> None:
        upper = self.space.upper
        if len(self.values) != len(upper):
            raise ValueError(f"{self.space.kind.value} config needs {len(upper)} values, got {len(self.values)}")
        for i, (v, u) in enumerate(zip(self.values, upper)):
            if not 0 <= v <= u:
                raise ValueError(f"{self.space.kind.value} config entry {i} = {v} outside [0, {u}]")

    def to_json(self) -> dict:
        return {"space": self.space.kind.value, "values": list(self.values)}

    @classmethod
    def from_json(cls, doc: dict, dims: ModelDims) -> SubNetConfig:
        cfg = SearchSpace(SpaceKind(doc["space"]), dims).config(doc["values"])
        cfg.check()
        return cfg

    def __repr__(self):
        return f"{self.space.kind.value}{list(self.values)}"
