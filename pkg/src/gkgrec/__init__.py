"""Knowledge-graph retrieval experts with a learned router, for LLM-style recommendation.

Submodules are imported on demand so the command line can set thread
counts before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "kg", "embed", "experts", "align", "recommender", "rewards", "mmapo",
    "evaluation", "pipeline", "config", "workflow", "synth", "cli",
]
