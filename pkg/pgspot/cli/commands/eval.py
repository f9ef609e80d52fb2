import logging
from pathlib import Path

from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.evalkit import LEXICON_MODES, Lexicon, detection_hmean, e2e_score, report_table
from pgspot.utils.jsonl_utils import load_dataset, load_lexicon, load_results, write_json


def add_arguments(parser):
    parser.add_argument("--results", required=True, help="results JSON-lines file")
    parser.add_argument("--gt", required=True, help="ground-truth dataset file")
    parser.add_argument("--iou", type=float, default=0.5)
    parser.add_argument("--lexicon", default="none", help="none, strong:FILE, weak:FILE or generic:FILE")
    parser.add_argument("--out", help="write the JSON report here")
    parser.add_argument("--table", action="store_true", help="log an aligned-column table")


def parse_lexicon(text: str) -> Lexicon:
    mode, _, path = text.partition(":")
    if mode not in LEXICON_MODES:
        raise UsageError(f"unknown lexicon mode '{mode}', expected one of {', '.join(LEXICON_MODES)}")
    if mode == "none":
        return Lexicon()
    if not path:
        raise UsageError(f"--lexicon {mode} needs a file, e.g. {mode}:words.txt")
    words, per_image = load_lexicon(path)
    if mode == "strong" and not per_image:
        raise DataError(f"{path}: a strong lexicon needs per-image entries")
    return Lexicon(mode, words, per_image)


def run(args) -> dict:
    if not 0.0 < args.iou <= 1.0:
        raise UsageError(f"--iou must lie in (0, 1], got {args.iou}")
    lexicon = parse_lexicon(args.lexicon)
    try:
        preds = load_results(args.results)
        gts = load_dataset(args.gt)
        det = detection_hmean(preds, gts, args.iou)
        e2e = e2e_score(preds, gts, lexicon, args.iou)
        if args.table:
            logging.info("\n" + report_table({"detection": det, f"e2e ({lexicon.mode})": e2e}))
        report = {
            "detection": det.model_dump(mode="json", exclude={"pairs"}),
            "e2e": e2e.model_dump(mode="json", exclude={"pairs"}),
            "iou": args.iou,
            "lexicon": lexicon.mode,
        }
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            write_json(args.out, {"detection": det.model_dump(mode="json"), "e2e": e2e.model_dump(mode="json")})
        return {"msg": "Evaluation finished", **report}
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error evaluating results: {str(e)}")
