import logging

from pgspot.cli.dependencies import load_grm, load_model, load_samples
from pgspot.core.errors import DataError, SpotError, UsageError
from pgspot.core.training import fit_grm, grm_exact_match
from pgspot.models.configs import NoiseConfig, TrainConfig
from pgspot.utils.binary_io import save_checkpoint
from pgspot.utils.jsonl_utils import write_jsonl


def add_arguments(parser):
    parser.add_argument("--annotations", required=True, help="training dataset")
    parser.add_argument("--heldout", help="dataset for the coarse versus refined comparison")
    parser.add_argument("--model", required=True, help="frozen base model checkpoint")
    parser.add_argument("--out", required=True, help="refinement checkpoint path")
    parser.add_argument("--init", help="resume from this refinement checkpoint")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--lr", type=float, default=0.002)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--label-noise", type=float, default=0.0, help="rate of swapped TCC classes")
    parser.add_argument("--tcc-noise", type=float, default=0.0, help="TCC logit noise sigma")
    parser.add_argument("--log", help="JSON-lines training log")
    parser.add_argument("--progress", action="store_true")


def run(args) -> dict:
    """
    Train the refinement weights on top of a frozen base model and report
    exact-match rates of coarse and refined decoding.
    """
    try:
        config = TrainConfig(
            epochs=args.epochs,
            lr=args.lr,
            batch_size=args.batch_size,
            optimizer=args.optimizer,
            seed=args.seed,
            progress=args.progress,
        )
        noise = None
        if args.label_noise or args.tcc_noise:
            noise = NoiseConfig(tcc_label_noise=args.label_noise, tcc_noise=args.tcc_noise)
    except ValueError as e:
        raise UsageError(f"invalid training options: {e}")

    try:
        base = load_model(args.model)
        samples = load_samples(args.annotations)
        weights = load_grm(args.init) if args.init else None
        weights, records = fit_grm(base, samples, config, noise, weights)
        save_checkpoint(args.out, weights.to_tensors())
        if args.log:
            write_jsonl(args.log, records)

        scored = load_samples(args.heldout) if args.heldout else samples
        coarse, refined = grm_exact_match(base, weights, scored, noise, args.seed + 1)
        logging.info(f"Exact match: coarse {coarse:.4f}, refined {refined:.4f}")
        return {
            "msg": "Refinement training finished",
            "grm": args.out,
            "coarse_exact": round(coarse, 6),
            "refined_exact": round(refined, 6),
        }
    except SpotError:
        raise
    except Exception as e:
        raise DataError(f"Error training refinement: {str(e)}")
