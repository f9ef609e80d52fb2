import logging
from typing import List

import numpy as np

from pgspot.cli.dependencies import load_grm, load_images, load_model, parallel_map
from pgspot.core.config import settings
from pgspot.core.errors import DataError, SpotError
from pgspot.core.grm import refine_results
from pgspot.core.postprocess import to_records
from pgspot.models.maps import CenterPointSequence, SpottingResult
from pgspot.models.reports import ImageResults, ResultRecord
from pgspot.utils.image_utils import load_graymap
from pgspot.utils.jsonl_utils import load_results, save_results


def add_arguments(parser):
    parser.add_argument("--results", required=True, help="infer output written with --points")
    parser.add_argument("--model", required=True, help="base model checkpoint")
    parser.add_argument("--grm", required=True, help="refinement checkpoint")
    parser.add_argument("--images", required=True, help="dataset file with the images the results came from")
    parser.add_argument("--out", required=True, help="refined results JSON-lines path")


def restore_result(record: ResultRecord, index: int, scale: int = settings.MAP_SCALE) -> SpottingResult:
    """Rebuild a spotting result in map coordinates from its stored record."""
    points = np.asarray(record.points, dtype=np.float64).reshape(-1, 2) / scale
    if len(points) > 1:
        directions = np.gradient(points, axis=0)
    else:
        directions = np.array([[1.0, 0.0]])
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = np.where(norms > 0, directions / np.maximum(norms, 1e-12), [1.0, 0.0])
    return SpottingResult(
        polygon=np.asarray(record.poly, dtype=np.float64) / scale,
        transcript=record.text,
        confidence=record.conf,
        center=CenterPointSequence(points, directions, instance_id=index),
        flags=list(record.flags),
    )


def run(args) -> dict:
    """
    Re-decode stored results along their center sequences with the refinement
    module. Records without center points are passed through unchanged.
    """
    try:
        stored = {r.image: r for r in load_results(args.results)}
        model = load_model(args.model)
        weights = load_grm(args.grm)

        def refine_image(item) -> ImageResults:
            record, path = item
            entry = stored.get(record.image)
            if entry is None:
                return ImageResults(image=record.image)
            with_points = [i for i, r in enumerate(entry.results) if r.points]
            if not with_points:
                return entry
            maps, fvis = model.predict(load_graymap(path))
            restored = [restore_result(entry.results[i], i) for i in with_points]
            refined = to_records(refine_results(restored, maps.tcc, fvis, weights), with_points=True)
            out: List[ResultRecord] = list(entry.results)
            for i, rec in zip(with_points, refined):
                out[i] = rec
            return ImageResults(image=record.image, results=out)

        results = parallel_map(refine_image, load_images(args.images))
        skipped = sum(1 for image in results for r in image.results if not r.points)
        if skipped:
            logging.warning(f"{skipped} results carry no center points and were left unrefined")
        save_results(args.out, results)
        return {"msg": "Refinement finished", "images": len(results), "unrefined": skipped, "results": args.out}
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error refining results: {str(e)}")

