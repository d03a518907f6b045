"""Run the scoring service: python -m scorer_service [options]."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import DEFAULT_CLASSIFIER, DEFAULT_CLIP, WEIGHT_PROFILES, ServiceConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scorer-service", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700)
    parser.add_argument("--classifier", default=DEFAULT_CLASSIFIER)
    parser.add_argument("--clip", default=DEFAULT_CLIP)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-request-bytes", type=int, default=8_000_000)
    parser.add_argument(
        "--weights",
        choices=WEIGHT_PROFILES,
        default="pretrained",
        help="'pretrained' uses the pinned checkpoints; 'random' is the "
        "offline seeded test profile",
    )
    args = parser.parse_args(argv)

    config = ServiceConfig(
        host=args.host,
        port=args.port,
        classifier_id=args.classifier,
        clip_id=args.clip,
        device=args.device,
        max_request_bytes=args.max_request_bytes,
        weights=args.weights,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
