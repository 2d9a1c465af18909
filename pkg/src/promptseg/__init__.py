"""promptseg: prompt-placement strategies and a reinforcement-learning
prompting agent for promptable (point-click) lesion segmentation."""

from . import agent, bench, core, features, metrics, nn, segmenter
from .errors import PromptSegError

__version__ = "0.1.0"

__all__ = [
    "agent",
    "bench",
    "core",
    "features",
    "metrics",
    "nn",
    "segmenter",
    "PromptSegError",
    "__version__",
]
