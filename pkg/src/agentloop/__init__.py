"""Agentic tool-use rollout harness with verifiable rewards.

Subpackages cover the tag-protocol grammar, the multi-turn rollout engine
with search and code tools, reward computation, a group-relative policy
gradient toy trainer, and the benchmark build/score pipeline.
"""

__version__ = "0.1.0"
