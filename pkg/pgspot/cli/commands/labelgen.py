import logging
from pathlib import Path

from pgspot.cli.dependencies import parallel_map
from pgspot.core.config import settings
from pgspot.core.errors import DataError, SpotError
from pgspot.core.labels import generate_label_maps
from pgspot.core.synth import oracle_tcc
from pgspot.utils.binary_io import save_mapset
from pgspot.utils.jsonl_utils import load_dataset


def add_arguments(parser):
    parser.add_argument("--annotations", required=True, help="annotation JSON-lines file")
    parser.add_argument("--out", required=True, help="output directory for .pgms files")
    parser.add_argument("--oracle-tcc", action="store_true", help="fill the TCC block with the ideal classification map")


def run(args) -> dict:
    """
    Write one map set per annotated image, named after the image stem.
    """
    records = load_dataset(args.annotations)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        def convert(record):
            dims = (-(-record.height // settings.MAP_SCALE), -(-record.width // settings.MAP_SCALE))
            labels = generate_label_maps(record.words, dims)
            maps = labels.maps
            if args.oracle_tcc:
                maps.tcc = oracle_tcc(record.words, dims, labels.owner)
            path = out / f"{Path(record.image).stem}.pgms"
            save_mapset(path, maps)
            return str(path)

        written = parallel_map(convert, records)
        logging.info(f"Wrote {len(written)} map sets to {out}")
        return {"msg": f"Generated {len(written)} map sets", "maps": written}
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error generating label maps: {str(e)}")
