"""Factual precision and recall evaluation for long-form LLM responses."""

__version__ = "0.1.0"
