"""Forward-only network toolkit: layers, graphs, builders, training math."""

from glioseg.netkit.builders import build_msavnet, build_unet3d, build_vnet
from glioseg.netkit.graph import INPUT_NAME, NetworkGraph, Node, forward, param_count, summary
from glioseg.netkit.layers import (
    ACTIVATIONS,
    LAYER_KINDS,
    LayerSpec,
    attention_gate_forward,
    conv3d_forward,
    require_tensor5,
    transposed_conv3d_forward,
)
from glioseg.netkit.training import (
    TrainingSchedule,
    cosine_lr,
    soft_dice_grad,
    soft_dice_loss,
)

__all__ = [
    "ACTIVATIONS",
    "INPUT_NAME",
    "LAYER_KINDS",
    "LayerSpec",
    "NetworkGraph",
    "Node",
    "TrainingSchedule",
    "attention_gate_forward",
    "build_msavnet",
    "build_unet3d",
    "build_vnet",
    "conv3d_forward",
    "cosine_lr",
    "forward",
    "param_count",
    "require_tensor5",
    "soft_dice_grad",
    "soft_dice_loss",
    "summary",
    "transposed_conv3d_forward",
]
