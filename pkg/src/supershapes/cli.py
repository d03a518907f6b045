"""Command-line pipeline driver: evolve runs, single renders, and view sweeps.

Run configuration is a flat ``key = value`` text file; every key has a
matching command-line flag, and flag values beat file values beat defaults.
Outputs land in a fixed layout under the run directory::

    <out>/checkpoints.jsonl      one JSON line per generation
    <out>/gen_<k>_best.png       best render, every export_every generations
    <out>/final_best.png         best render of the final generation
    <out>/final_best.obj         its mesh

Exit codes: 0 success, 2 configuration or argument error, 3 remote scorer
unreachable at startup, 4 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from .evolve import (
    GAConfig,
    Genome,
    default_gene_bounds,
    genome_mesh,
    load_checkpoint,
    make_evaluator,
    render_genome,
    resume_state,
    run_evolution,
    run_novelty_search,
)
from .geometry import save_obj
from .render import ImageBuffer, RenderConfig, ViewAngles, save_png
from .scoring import (
    BrightnessScorer,
    CoverageTargetScorer,
    NoveltyArchive,
    RemoteScorer,
    SilhouetteFractionScorer,
    SilhouetteIoUScorer,
    check_health,
)

ENDPOINT_ENV = "SUPERSHAPES_ENDPOINT"

OBJECTIVES = ("coverage", "fraction", "brightness", "iou", "remote", "novelty")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNREACHABLE = 3
EXIT_IO = 4


class ConfigError(Exception):
    """Bad run configuration; maps to exit code 2."""


def _parse_rgb(text: str) -> tuple[int, int, int]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected r,g,b triple, got {text!r}")
    try:
        rgb = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"expected integer r,g,b triple, got {text!r}")
    if any(not 0 <= v <= 255 for v in rgb):
        raise ConfigError(f"rgb components must be in [0, 255], got {text!r}")
    return rgb


# key -> (converter, default); the single source of truth for run settings.
SETTING_SPECS = {
    "seed": (int, 0),
    "generations": (int, 30),
    "population": (int, 40),
    "mutation_rate": (float, 0.1),
    "selection_rate": (float, 0.5),
    "elitism": (int, 1),
    "objective": (str, "coverage"),
    "target_coverage": (float, 0.5),
    "mask": (str, ""),
    "endpoint": (str, ""),
    "mode": (str, "clip_text"),
    "target": (str, ""),
    "timeout": (float, 30.0),
    "novelty_k": (int, 15),
    "novelty_threshold": (float, 0.03),
    "out": (str, "run_out"),
    "export_every": (int, 1),
    "width": (int, 224),
    "height": (int, 224),
    "background": (_parse_rgb, (128, 128, 128)),
    "albedo": (_parse_rgb, (230, 205, 160)),
    "fill_fraction": (float, 0.9),
    "resolution_theta": (int, 64),
    "resolution_phi": (int, 64),
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment; unknown keys reject.

    Per-gene bounds use keys like ``bound_r1.m = 0:20``.
    """

    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("bound_"):
            values.setdefault("bounds", {})[key[len("bound_"):]] = value
            continue
        if key not in SETTING_SPECS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        conv = SETTING_SPECS[key][0]
        try:
            values[key] = conv(value)
        except (ValueError, TypeError):
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    return values


def _parse_bound(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected lo:hi bound, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"expected numeric lo:hi bound, got {text!r}")
    return lo, hi


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and flags, in increasing precedence."""

    settings = {key: default for key, (_, default) in SETTING_SPECS.items()}
    settings["bounds"] = {}
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        settings["bounds"].update(file_values.pop("bounds", {}))
        settings.update(file_values)
    for key, (conv, _) in SETTING_SPECS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = conv(flag) if isinstance(flag, str) else flag
    for item in getattr(args, "bound", None) or []:
        if "=" not in item:
            raise ConfigError(f"--bound expects gene=lo:hi, got {item!r}")
        gene, _, value = item.partition("=")
        settings["bounds"][gene.strip()] = value.strip()
    if not settings["endpoint"]:
        settings["endpoint"] = os.environ.get(ENDPOINT_ENV, "")
    return settings


def build_ga_config(settings: dict) -> GAConfig:
    from .evolve import GENE_NAMES

    bounds = default_gene_bounds()
    for gene, text in settings["bounds"].items():
        if gene not in GENE_NAMES:
            raise ConfigError(f"unknown gene {gene!r} in bounds (known: {GENE_NAMES})")
        bounds[GENE_NAMES.index(gene)] = _parse_bound(text)
    config = GAConfig(
        population_size=settings["population"],
        mutation_rate=settings["mutation_rate"],
        selection_rate=settings["selection_rate"],
        generations=settings["generations"],
        rng_seed=settings["seed"],
        gene_bounds=bounds,
        elitism=settings["elitism"],
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))
    return config


def build_render_config(settings: dict) -> RenderConfig:
    try:
        return RenderConfig(
            width=settings["width"],
            height=settings["height"],
            background=tuple(settings["background"]),
            albedo=tuple(settings["albedo"]),
            fill_fraction=settings["fill_fraction"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def build_scorer(settings: dict):
    objective = settings["objective"]
    background = tuple(settings["background"])
    if objective == "coverage":
        return CoverageTargetScorer(settings["target_coverage"], background)
    if objective == "fraction":
        return SilhouetteFractionScorer(background)
    if objective == "brightness":
        return BrightnessScorer()
    if objective == "iou":
        if not settings["mask"]:
            raise ConfigError("objective=iou requires a mask PNG path")
        return SilhouetteIoUScorer.from_png(settings["mask"], background)
    if objective == "remote":
        if not settings["endpoint"]:
            raise ConfigError(
                f"objective=remote requires endpoint (flag, config, or ${ENDPOINT_ENV})"
            )
        if settings["mode"] not in ("imagenet_class", "clip_text"):
            raise ConfigError(f"mode must be imagenet_class or clip_text, got {settings['mode']!r}")
        if not settings["target"]:
            raise ConfigError("objective=remote requires a target")
        return RemoteScorer(
            settings["endpoint"], settings["mode"], settings["target"], settings["timeout"]
        )
    if objective == "novelty":
        return None  # handled by run_novelty_search
    raise ConfigError(f"unknown objective {objective!r} (choose from {OBJECTIVES})")


def _prepare_outdir(settings: dict) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return out


def cmd_evolve(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    config = build_ga_config(settings)
    render_config = build_render_config(settings)
    scorer = build_scorer(settings)
    res_t, res_p = settings["resolution_theta"], settings["resolution_phi"]

    if settings["objective"] == "remote":
        if not check_health(settings["endpoint"], timeout=settings["timeout"]):
            print(
                f"scorer endpoint {settings['endpoint']} failed the health check",
                file=sys.stderr,
            )
            return EXIT_UNREACHABLE

    out = _prepare_outdir(settings)
    export_every = max(1, settings["export_every"])

    state = None
    open_mode = "w"
    if getattr(args, "resume", None):
        entries = load_checkpoint(args.resume)
        if not entries:
            raise ConfigError(f"no checkpoint entries in {args.resume}")
        state = resume_state(entries[-1], config)
        open_mode = "a"

    def on_generation(record):
        best_genome, best_fit = record.best
        print(
            f"generation {record.index}: best raw = {best_fit.raw:.6f}"
            f" (valid={best_fit.valid})"
        )
        if record.index % export_every == 0:
            image = render_genome(best_genome, render_config, res_t, res_p)
            save_png(image, out / f"gen_{record.index}_best.png")

    checkpoint_path = out / "checkpoints.jsonl"
    with open(checkpoint_path, open_mode, encoding="utf-8") as checkpoint:
        if settings["objective"] == "novelty":
            archive = NoveltyArchive(
                k=settings["novelty_k"], add_threshold=settings["novelty_threshold"]
            )
            archive_out, records = run_novelty_search(
                config,
                render_config=render_config,
                resolution_theta=res_t,
                resolution_phi=res_p,
                archive=archive,
                checkpoint=checkpoint,
                on_generation=on_generation,
                state=state,
            )
            final = records[-1] if records else None
            print(f"novelty archive holds {len(archive_out)} descriptors")
        else:
            evaluate = make_evaluator(scorer, render_config, res_t, res_p)
            final = run_evolution(
                config,
                evaluate,
                checkpoint=checkpoint,
                on_generation=on_generation,
                state=state,
            )

    if final is not None:
        best_genome, best_fit = final.best
        save_png(
            render_genome(best_genome, render_config, res_t, res_p),
            out / "final_best.png",
        )
        save_obj(genome_mesh(best_genome, res_t, res_p), out / "final_best.obj")
        print(f"final best raw = {best_fit.raw:.6f}; outputs in {out}")
    return EXIT_OK


_CHECKPOINT_REF = re.compile(r"^gen(\d+):best$")


def parse_genome_spec(spec: str, checkpoint: str | None, bounds: np.ndarray) -> Genome:
    """Parse 15 comma-separated genes or a genNN:best checkpoint reference."""

    ref = _CHECKPOINT_REF.match(spec.strip())
    if ref:
        if not checkpoint:
            raise ConfigError("checkpoint references need --checkpoint <path>")
        wanted = int(ref.group(1))
        for entry in load_checkpoint(checkpoint):
            if entry["generation"] == wanted:
                genes = np.asarray(entry["genomes"][entry["best_index"]])
                return Genome.from_array(genes)
        raise ConfigError(f"generation {wanted} not found in {checkpoint}")

    parts = [p for p in spec.split(",") if p.strip()]
    if len(parts) != 15:
        raise ConfigError(f"genome spec needs exactly 15 values, got {len(parts)}")
    try:
        genes = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise ConfigError(f"genome spec must be numeric, got {spec!r}")
    from .evolve import GENE_NAMES

    for i, (value, (lo, hi)) in enumerate(zip(genes, bounds)):
        if not lo <= value <= hi:
            raise ConfigError(
                f"gene {GENE_NAMES[i]}={value} outside bounds [{lo}, {hi}]"
            )
    return Genome.from_array(genes)


def cmd_render(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    config = build_ga_config(settings)
    render_config = build_render_config(settings)
    genome = parse_genome_spec(args.genome, args.checkpoint, config.gene_bounds)
    res_t, res_p = settings["resolution_theta"], settings["resolution_phi"]
    image = render_genome(genome, render_config, res_t, res_p)
    save_png(image, args.out)
    if args.obj:
        save_obj(genome_mesh(genome, res_t, res_p), args.obj)
    return EXIT_OK


def view_sweep(rows: int, cols: int) -> list:
    """Cell-centered (elevation, azimuth) grid: azimuth sweeps a full turn
    across columns, elevation spans [-pi/3, pi/3] top-down across rows."""

    views = []
    for i in range(rows):
        elevation = math.pi / 3 - (i + 0.5) * (2 * math.pi / 3) / rows
        for j in range(cols):
            azimuth = -math.pi + (j + 0.5) * math.tau / cols
            views.append(ViewAngles(elevation=elevation, azimuth=azimuth, rotation=0.0))
    return views


def cmd_views(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    config = build_ga_config(settings)
    render_config = build_render_config(settings)
    grid = re.match(r"^(\d+)x(\d+)$", args.grid.strip())
    if not grid:
        raise ConfigError(f"--grid expects ROWSxCOLS, got {args.grid!r}")
    rows, cols = int(grid.group(1)), int(grid.group(2))
    if rows < 1 or cols < 1:
        raise ConfigError("grid must be at least 1x1")

    genome = parse_genome_spec(args.genome, args.checkpoint, config.gene_bounds)
    res_t, res_p = settings["resolution_theta"], settings["resolution_phi"]
    mesh = genome_mesh(genome, res_t, res_p)

    from .render import render

    w, h = render_config.width, render_config.height
    sheet = np.empty((rows * h, cols * w, 3), dtype=np.uint8)
    for idx, view in enumerate(view_sweep(rows, cols)):
        i, j = divmod(idx, cols)
        tile = render(mesh, view, render_config).image
        sheet[i * h : (i + 1) * h, j * w : (j + 1) * w] = tile.pixels
    save_png(ImageBuffer(width=cols * w, height=rows * h, pixels=sheet), args.out)
    return EXIT_OK


def _add_setting_flags(parser: argparse.ArgumentParser, skip: tuple = ()) -> None:
    parser.add_argument("--config", help="run configuration file (key = value lines)")
    for key in SETTING_SPECS:
        if key in skip:
            continue
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    parser.add_argument(
        "--bound",
        action="append",
        metavar="GENE=LO:HI",
        help="override one gene's bounds, e.g. --bound r1.m=0:12 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supershapes",
        description="Evolve superformula surfaces and views against image scorers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_evolve = sub.add_parser("evolve", help="run the evolutionary loop")
    _add_setting_flags(p_evolve)
    p_evolve.add_argument("--resume", help="checkpoint stream to continue from")
    p_evolve.set_defaults(func=cmd_evolve)

    p_render = sub.add_parser("render", help="render one genome to PNG (and OBJ)")
    p_render.add_argument("genome", help="15 comma-separated genes or genNN:best")
    p_render.add_argument("--checkpoint", help="checkpoint stream for genNN:best refs")
    p_render.add_argument("--out", required=True, help="output PNG path")
    p_render.add_argument("--obj", help="also export the mesh as OBJ here")
    _add_setting_flags(p_render, skip=("out",))
    p_render.set_defaults(func=cmd_render)

    p_views = sub.add_parser("views", help="render a contact sheet of view sweeps")
    p_views.add_argument("genome", help="15 comma-separated genes or genNN:best")
    p_views.add_argument("--checkpoint", help="checkpoint stream for genNN:best refs")
    p_views.add_argument("--grid", default="2x4", help="ROWSxCOLS tile layout")
    p_views.add_argument("--out", required=True, help="output PNG path")
    _add_setting_flags(p_views, skip=("out",))
    p_views.set_defaults(func=cmd_views)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; checkpoints are flushed per generation", file=sys.stderr)
        return 130
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
