import logging
from pathlib import Path

from pgspot.cli.dependencies import parallel_map, parse_pair
from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.synth import render_scene, scene_record
from pgspot.models.configs import SceneConfig
from pgspot.utils.image_utils import save_graymap
from pgspot.utils.jsonl_utils import save_dataset


def add_arguments(parser):
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0, help="scene i uses seed + i")
    parser.add_argument("--width", type=int, default=192)
    parser.add_argument("--height", type=int, default=192)
    parser.add_argument("--min-words", type=int, default=1)
    parser.add_argument("--max-words", type=int, default=3)
    parser.add_argument("--curved-fraction", type=float, default=0.5)
    parser.add_argument("--curvature", default="0,0.2", help="sagitta range as a fraction of word length")
    parser.add_argument("--rotation", default="-20,20", help="rotation range in degrees")
    parser.add_argument("--noise", type=float, default=0.0)


def run(args) -> dict:
    """
    Render ``--count`` scenes as graymaps plus one annotations.jsonl.
    """
    if args.count < 0:
        raise UsageError("--count must not be negative")
    try:
        config = SceneConfig(
            width=args.width,
            height=args.height,
            min_words=args.min_words,
            max_words=args.max_words,
            curved_fraction=args.curved_fraction,
            curvature_range=parse_pair(args.curvature, "curvature"),
            rotation_range=parse_pair(args.rotation, "rotation"),
            noise=args.noise,
        )
    except ValueError as e:
        raise UsageError(f"invalid scene options: {e}")

    try:
        out = Path(args.out)
        (out / "images").mkdir(parents=True, exist_ok=True)

        def make(index: int):
            scene = render_scene(args.seed + index, config)
            name = f"images/scene_{index:05d}.pgm"
            save_graymap(out / name, scene.image)
            return scene_record(scene, name), scene.flags

        made = parallel_map(make, range(args.count))
        save_dataset(out / "annotations.jsonl", [record for record, _ in made])
        short = sum(1 for _, flags in made if "fewer-words" in flags)
        logging.info(f"Wrote {len(made)} scenes to {out}")
        return {
            "msg": f"Generated {len(made)} scenes",
            "annotations": str(out / "annotations.jsonl"),
            "words": sum(len(record.words) for record, _ in made),
            "fewer_words": short,
        }
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error generating scenes: {str(e)}")
