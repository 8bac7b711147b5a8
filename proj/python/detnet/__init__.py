"""DetNet/ResNet backbone toolkit: construction, FLOPs/stride/receptive-field
analysis, execution with reverse-mode gradients, FPN graphs and toy training.
"""

from ._core import (
    AnalysisReport,
    ArchSpec,
    BlockSpec,
    DetnetError,
    Fpn,
    Network,
    StageSpec,
    analyze,
    build_fpn,
    build_network,
    builtin_arch_names,
    depth,
    diff_specs,
    gradcheck,
    gradcheck_ops,
    lr_at,
    named_arch,
    network_gradcheck,
    parse_arch_spec,
    receptive_field,
    scale_widths,
    serialize_arch_spec,
    stride_map,
    synth_dataset,
)

__all__ = [
    "AnalysisReport",
    "ArchSpec",
    "BlockSpec",
    "DetnetError",
    "Fpn",
    "Network",
    "StageSpec",
    "analyze",
    "build_fpn",
    "build_network",
    "builtin_arch_names",
    "depth",
    "diff_specs",
    "gradcheck",
    "gradcheck_ops",
    "lr_at",
    "named_arch",
    "network_gradcheck",
    "parse_arch_spec",
    "receptive_field",
    "scale_widths",
    "serialize_arch_spec",
    "stride_map",
    "synth_dataset",
]
