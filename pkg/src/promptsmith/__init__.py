"""Two-stage prompt optimization for small (multimodal) models.

Stage one searches combinations of prompt-rewriting strategies, warm-started
from rewards remembered on similar tasks. Stage two refines the winner by
asking a stronger model to analyse the errors it still makes.
"""

from .data import Dataset, Sample, Task, load_dataset, load_task
from .eso import EsoConfig, run_eso
from .evaluation import EvalResult, evaluate_prompt
from .memory import MemoryKey, MemoryModule
from .rws import SearchConfig, cold_start_search, warm_search
from .strategies import PromptCandidate, StrategyPool, builtin_pool

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EsoConfig",
    "EvalResult",
    "MemoryKey",
    "MemoryModule",
    "PromptCandidate",
    "Sample",
    "SearchConfig",
    "StrategyPool",
    "Task",
    "builtin_pool",
    "cold_start_search",
    "evaluate_prompt",
    "load_dataset",
    "load_task",
    "run_eso",
    "warm_search",
]
