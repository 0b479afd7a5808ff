"""Extended layer instantiations: spatial grid grouping and channel grouping.

Grid mode shares one sampled node set per g_s x g_s spatial group (anchored
at the group's left-top pixel, offsets regressed from the pooled map) while
every position keeps its own query row.  Group mode splits the C' channels
into G groups and runs the attention independently per group.  Both reduce
bit-exactly to the base layer at g_s = 1 / G = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import Tape
from .errors import ContractError
from .layer import LayerConfig, OffsetField, layer_forward_node
from .tensor import Tensor4


@dataclass(frozen=True)
class GridConfig:
    """g_s is the spatial group edge: g_s = 5 merges 5 x 5 elements into one graph node."""

    gs: int

    def validate(self) -> None:
        if self.gs < 1:
            raise ContractError(f"grid group size must be >= 1, got {self.gs}")


@dataclass(frozen=True)
class GroupConfig:
    """Number of channel groups G; must divide the projected width C'."""

    groups: int

    def validate(self) -> None:
        if self.groups < 1:
            raise ContractError(f"group count must be >= 1, got {self.groups}")


def grid_forward_node(tape, x, params, cfg: LayerConfig, grid: GridConfig,
                      training: bool = False, offsets: Optional[OffsetField] = None,
                      collect: Optional[dict] = None, prefix: str = ""):
    grid.validate()
    return layer_forward_node(tape, x, params, cfg, training=training, offsets=offsets,
                              collect=collect, gs=grid.gs, prefix=prefix)


def grid_repgraph_forward(x: Tensor4, params, cfg: LayerConfig, grid: GridConfig,
                          training: bool = False, offsets: Optional[OffsetField] = None,
                          collect: Optional[dict] = None) -> Tensor4:
    tape = Tape()
    y = grid_forward_node(tape, tape.leaf(x.data), params, cfg, grid,
                          training=training, offsets=offsets, collect=collect)
    return Tensor4(y.value)


def group_forward_node(tape, x, params, cfg: LayerConfig, grp: GroupConfig,
                       training: bool = False, offsets: Optional[OffsetField] = None,
                       collect: Optional[dict] = None, prefix: str = ""):
    grp.validate()
    if cfg.cp % grp.groups != 0:
        raise ContractError(
            f"channel width C'={cfg.cp} is not divisible by G={grp.groups}"
        )
    return layer_forward_node(tape, x, params, cfg, training=training, offsets=offsets,
                              collect=collect, groups=grp.groups, prefix=prefix)


def group_repgraph_forward(x: Tensor4, params, cfg: LayerConfig, grp: GroupConfig,
                           training: bool = False, offsets: Optional[OffsetField] = None,
                           collect: Optional[dict] = None) -> Tensor4:
    tape = Tape()
    y = group_forward_node(tape, tape.leaf(x.data), params, cfg, grp,
                           training=training, offsets=offsets, collect=collect)
    return Tensor4(y.value)
