"""Service configuration: listen address, pinned model identifiers, limits."""

from __future__ import annotations

from dataclasses import dataclass

# Pinned production checkpoints.  The families are fixed; the exact weights
# are configuration, to be swapped only deliberately.
DEFAULT_CLASSIFIER = "mobilenet_v3_small/IMAGENET1K_V1"
DEFAULT_CLIP = "openai/clip-vit-base-patch32"

WEIGHT_PROFILES = ("pretrained", "random")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8700
    classifier_id: str = DEFAULT_CLASSIFIER
    clip_id: str = DEFAULT_CLIP
    device: str = "cpu"
    max_request_bytes: int = 8_000_000
    # "pretrained" loads the pinned checkpoints (needs the weight files or
    # network); "random" builds the same model families with seeded random
    # weights plus a deterministic hash tokenizer — an offline profile for
    # protocol and determinism testing, not for meaningful scores.
    weights: str = "pretrained"

    def __post_init__(self) -> None:
        if self.weights not in WEIGHT_PROFILES:
            raise ValueError(f"weights must be one of {WEIGHT_PROFILES}, got {self.weights!r}")
        if self.max_request_bytes < 1024:
            raise ValueError("max_request_bytes unreasonably small")
