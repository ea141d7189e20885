"""polymath: cross-disciplinary retrieval and synthesis assistant.

Library + CLI implementing domain-partitioned hybrid retrieval, prompt-driven
retrieval and translation agents behind a semantic router, an ablation
evaluation harness for MCQ benchmarks, causal analysis of run metrics, and a
streaming HTTP service.
"""

__version__ = "0.1.0"
