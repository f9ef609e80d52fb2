import logging

from pgspot.cli.dependencies import add_spot_arguments, load_grm, load_model, spot_config
from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.evalkit import benchmark_timing, spotting_stages, timing_table
from pgspot.core.postprocess import spot
from pgspot.utils.binary_io import load_mapset
from pgspot.utils.image_utils import load_graymap
from pgspot.utils.jsonl_utils import write_json


def add_arguments(parser):
    parser.add_argument("--model", help="model checkpoint, used with --image")
    parser.add_argument("--image", help="image to time the full pipeline on")
    parser.add_argument("--maps", help="map set file, times post-processing only")
    parser.add_argument("--grm", help="refinement checkpoint, adds the refine stage")
    parser.add_argument("--reps", type=int, default=30)
    parser.add_argument("--warmup", type=int, default=3)
    parser.add_argument("--single-thread", action="store_true", help="pin OpenCV and BLAS pools to one thread")
    parser.add_argument("--out", help="write the timing report here")
    add_spot_arguments(parser)


def run(args) -> dict:
    """
    Time the forward pass, post-processing and refinement stages.
    """
    if bool(args.maps) == bool(args.model or args.image):
        raise UsageError("give either --maps or --model with --image")
    if args.maps is None and not (args.model and args.image):
        raise UsageError("--model and --image go together")
    if args.grm and args.maps:
        raise UsageError("--grm needs --model and --image")
    if args.warmup < 0:
        raise UsageError("--warmup must not be negative")
    config = spot_config(args)

    try:
        if args.maps:
            maps = load_mapset(args.maps)
            stages = {"post": lambda: spot(maps, config)}
        else:
            model = load_model(args.model)
            grm = load_grm(args.grm) if args.grm else None
            stages = spotting_stages(model, load_graymap(args.image), grm, config)
        report = benchmark_timing(stages, args.reps, args.warmup, single_thread=args.single_thread)
        logging.info("\n" + timing_table(report))
        if args.out:
            write_json(args.out, report)
        return {"msg": "Benchmark finished", **report.model_dump(mode="json")}
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error running benchmark: {str(e)}")
