import os
import sys

# BLAS pools read their size at import time
if "--single-thread" in sys.argv:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"

import logging  # noqa: E402

from pgspot.cli.cli_router import cli_router  # noqa: E402
from pgspot.core.config import settings  # noqa: E402
from pgspot.core.errors import SpotError  # noqa: E402
from pgspot.utils.jsonl_utils import dumps  # noqa: E402


def main(argv=None) -> int:
    """
    Entry point of the pgspot command line.

    Prints the command summary as JSON on stdout and returns the exit code:
    0 ok, 1 usage, 2 data error, 3 numeric failure.
    """
    parser = cli_router.build_parser()
    try:
        args = parser.parse_args(argv)
    except SpotError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.LOG_LEVEL.upper(),
        format="%(asctime)s %(levelname)s %(message)s",
        force=True,
    )
    try:
        summary = args.handler(args)
    except SpotError as e:
        logging.error(f"{args.command} failed: {e.detail}")
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    print(dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
