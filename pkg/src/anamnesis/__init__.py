"""anamnesis: expert-system-driven medical history taking.

A knowledge base of disease/finding associations drives a question-selection
policy; a simulator turns the same policy into synthetic clinical cases; a
paraphrase bank and an emote classifier make the emitted questions varied and
situationally warm; a small HTTP service exposes the dialogue loop.
"""

__version__ = "0.1.0"

from .errors import AnamnesisError  # noqa: F401
