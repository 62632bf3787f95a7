"""Actor-transformer group activity recognition on synthetic multi-actor scenes."""

from ._core import (
    ActorScene,
    Dataset,
    GarError,
    attention,
    evaluate,
    generate,
    known_config_keys,
    load_dataset,
    pe_2d,
    train,
)

__all__ = [
    "ActorScene",
    "Dataset",
    "GarError",
    "attention",
    "evaluate",
    "generate",
    "known_config_keys",
    "load_dataset",
    "pe_2d",
    "train",
]
