from .types import (
    Image2D,
    LabeledCase,
    Mask,
    PointCountGroup,
    Polarity,
    PromptPoint,
    PromptSet,
    SubRegionKind,
    SubRegionPartition,
    SyntheticSpec,
)
from .geometry import bin_point_count, decompose_subregions, distance_transform, lesion_anchor
from .sampling import sample_prompts
from .synth import generate_synthetic_case
from .caseio import load_case, save_case

__all__ = [
    "Image2D",
    "LabeledCase",
    "Mask",
    "PointCountGroup",
    "Polarity",
    "PromptPoint",
    "PromptSet",
    "SubRegionKind",
    "SubRegionPartition",
    "SyntheticSpec",
    "bin_point_count",
    "decompose_subregions",
    "distance_transform",
    "lesion_anchor",
    "sample_prompts",
    "generate_synthetic_case",
    "load_case",
    "save_case",
]
