"""Immutable network graphs and their forward evaluation.

A NetworkGraph is an ordered tuple of named nodes; each node applies one
LayerSpec to the outputs of earlier nodes (or to the network input, named
"input"). Construction order is evaluation order, so the graph is acyclic
by design. The last node is the network output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glioseg.netkit.layers import (
    LayerSpec,
    activation_forward,
    add_skip_forward,
    attention_gate_forward,
    concat_skip_forward,
    conv3d_forward,
    downsample_forward,
    normalization_forward,
    require_tensor5,
    transposed_conv3d_forward,
    upsample_forward,
)

INPUT_NAME = "input"

_ARITY = {"add_skip": 2, "concat_skip": 2, "attention_gate": 2}


@dataclass(frozen=True)
class Node:
    name: str
    layer: LayerSpec
    inputs: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        expected = _ARITY.get(self.layer.kind, 1)
        if len(self.inputs) != expected:
            raise ValueError(
                f"{self.layer.kind} node {self.name!r} needs {expected} inputs, got {len(self.inputs)}"
            )


@dataclass(frozen=True)
class NetworkGraph:
    name: str
    nodes: tuple[Node, ...]
    num_classes: int
    base_features: int
    input_channels: int = 4
    spatial_divisor: int = 1  # every spatial dim must divide by this

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            return
        seen = {INPUT_NAME}
        for node in self.nodes:
            if node.name in seen:
                raise ValueError(f"duplicate node name {node.name!r}")
            for ref in node.inputs:
                if ref not in seen:
                    raise ValueError(f"node {node.name!r} references unknown input {ref!r}")
            seen.add(node.name)
        final = self.nodes[-1].layer
        if final.out_channels != self.num_classes:
            raise ValueError(
                f"final layer emits {final.out_channels} channels, expected {self.num_classes}"
            )

    def node(self, name: str) -> Node:
        for candidate in self.nodes:
            if candidate.name == name:
                return candidate
        raise KeyError(name)


def _apply(layer: LayerSpec, operands: list[np.ndarray]) -> np.ndarray:
    kind = layer.kind
    if kind == "conv3d":
        return conv3d_forward(operands[0], layer)
    if kind == "transposed_conv3d":
        return transposed_conv3d_forward(operands[0], layer)
    if kind == "downsample":
        return downsample_forward(operands[0], layer)
    if kind == "upsample":
        return upsample_forward(operands[0], layer)
    if kind == "activation":
        return activation_forward(operands[0], layer)
    if kind == "normalization":
        return normalization_forward(operands[0], layer)
    if kind == "add_skip":
        return add_skip_forward(operands[0], operands[1])
    if kind == "concat_skip":
        return concat_skip_forward(operands[0], operands[1])
    return attention_gate_forward(operands[0], operands[1], layer)


def forward(net: NetworkGraph, x: np.ndarray) -> np.ndarray:
    """Evaluate the graph on a (batch, channels, D, H, W) tensor."""
    x = require_tensor5(np.asarray(x, dtype=np.float64), net.input_channels)
    for axis, size in zip("DHW", x.shape[2:]):
        if size % net.spatial_divisor:
            raise ValueError(
                f"{axis}={size} not divisible by {net.spatial_divisor} required by {net.name}"
            )
    values = {INPUT_NAME: x}
    out = x
    for node in net.nodes:
        out = _apply(node.layer, [values[ref] for ref in node.inputs])
        values[node.name] = out
    return out


def param_count(net: NetworkGraph) -> int:
    """Total learnable scalars: weights plus biases over all layers."""
    return sum(node.layer.num_parameters for node in net.nodes)


def summary(net: NetworkGraph, spatial=(32, 32, 32), batch: int = 1) -> str:
    """Layer table with output shapes traced on a dry-run input."""
    x = np.zeros((batch, net.input_channels, *spatial))
    values = {INPUT_NAME: require_tensor5(x, net.input_channels)}
    rows = [("node", "kind", "output shape", "params")]
    for node in net.nodes:
        out = _apply(node.layer, [values[ref] for ref in node.inputs])
        values[node.name] = out
        shape = "x".join(str(s) for s in out.shape)
        rows.append((node.name, node.layer.kind, shape, str(node.layer.num_parameters)))
    rows.append(("total", net.name, "", str(param_count(net))))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
