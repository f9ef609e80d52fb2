import logging
from pathlib import Path

from pgspot.cli.dependencies import add_spot_arguments, load_images, load_model, parallel_map, spot_config
from pgspot.core.config import settings
from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.postprocess import spot, to_records
from pgspot.models.reports import ImageResults
from pgspot.utils.binary_io import load_mapset
from pgspot.utils.image_utils import load_graymap
from pgspot.utils.jsonl_utils import load_dataset, save_results
from pgspot.utils.svg_utils import write_overlay


def add_arguments(parser):
    parser.add_argument("--maps", nargs="+", help="map set files to decode")
    parser.add_argument("--model", help="model checkpoint, used with --images")
    parser.add_argument("--images", help="dataset file listing the images to spot; with --maps it names the results")
    parser.add_argument("--out", required=True, help="results JSON-lines path")
    parser.add_argument("--svg", help="directory for SVG overlays")
    parser.add_argument("--points", action="store_true", help="keep center sequences so refine can re-gather")
    add_spot_arguments(parser)


def run(args) -> dict:
    """
    Spot every word either from stored map sets or by running a model on
    the images of a dataset.
    """
    if args.maps and args.model:
        raise UsageError("give either --maps or --model, not both")
    if not args.maps and not (args.model and args.images):
        raise UsageError("give --maps, or --model with --images")
    config = spot_config(args)

    try:
        if args.maps:
            names = {Path(r.image).stem: r for r in load_dataset(args.images)} if args.images else {}

            def decode(path):
                maps = load_mapset(path)
                record = names.get(Path(path).stem)
                if record is None:
                    return Path(path).stem, maps, "", (maps.width * settings.MAP_SCALE, maps.height * settings.MAP_SCALE)
                return record.image, maps, record.image, (record.width, record.height)
            sources = parallel_map(decode, args.maps)
        else:
            model = load_model(args.model)

            def predict(item):
                record, path = item
                maps, _ = model.predict(load_graymap(path))
                return record.image, maps, str(path), (record.width, record.height)
            sources = parallel_map(predict, load_images(args.images))

        results = []
        for name, maps, href, (width, height) in sources:
            records = to_records(spot(maps, config), with_points=args.points)
            results.append(ImageResults(image=name, results=records))
            if args.svg:
                Path(args.svg).mkdir(parents=True, exist_ok=True)
                write_overlay(Path(args.svg) / f"{Path(name).stem}.svg", records, width, height, href)

        save_results(args.out, results)
        words = sum(len(r.results) for r in results)
        logging.info(f"Spotted {words} words in {len(results)} images")
        return {"msg": f"Spotted {words} words", "images": len(results), "results": args.out}
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error running inference: {str(e)}")
