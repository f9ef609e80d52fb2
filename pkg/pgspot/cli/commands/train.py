import logging

from pgspot.cli.dependencies import load_model, load_samples
from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.evalkit import evaluate_model
from pgspot.core.training import fit_toy_model
from pgspot.models.configs import LossWeights, TrainConfig
from pgspot.utils.binary_io import save_checkpoint
from pgspot.utils.jsonl_utils import write_jsonl


def add_arguments(parser):
    parser.add_argument("--annotations", action="append", required=True, help="dataset file, repeat to mix sources")
    parser.add_argument("--mix", help="sampling ratios of the sources, e.g. 3,2")
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--init", help="resume from this checkpoint")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=0.002)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    parser.add_argument("--lw", default="1,1,1,5", help="loss weights for tcl, tbo, tdo, tcc")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-every", type=int, default=0, help="epochs between spotting metrics, 0 disables")
    parser.add_argument("--log", help="JSON-lines training log")
    parser.add_argument("--progress", action="store_true", help="show a progress bar")


def _ratios(text, sources: int):
    if text is None:
        return None
    try:
        ratios = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--mix expects comma separated numbers, got '{text}'")
    if len(ratios) != sources:
        raise UsageError(f"--mix gives {len(ratios)} ratios for {sources} datasets")
    return ratios


def run(args) -> dict:
    try:
        config = TrainConfig(
            epochs=args.epochs,
            lr=args.lr,
            batch_size=args.batch_size,
            optimizer=args.optimizer,
            seed=args.seed,
            weights=LossWeights.parse(args.lw),
            eval_every=args.eval_every,
            progress=args.progress,
        )
    except ValueError as e:
        raise UsageError(f"invalid training options: {e}")
    ratios = _ratios(args.mix, len(args.annotations))

    try:
        sources = [load_samples(path) for path in args.annotations]
        if not any(sources):
            raise DataError("no training images found")
        model = load_model(args.init) if args.init else None
        evaluate = None
        if config.eval_every:
            held = [s for source in sources for s in source]
            evaluate = lambda m: evaluate_model(m, held)
        model, records = fit_toy_model(sources, config, ratios, model, evaluate)
        save_checkpoint(args.out, model.to_tensors())
        if args.log:
            write_jsonl(args.log, records)
        logging.info(f"Saved model to {args.out}")
        return {
            "msg": "Training finished",
            "model": args.out,
            "epochs": len(records),
            "final_loss": records[-1].loss if records else None,
        }
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error training model: {str(e)}")
