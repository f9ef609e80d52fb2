import argparse

from pgspot.cli.commands import bench, eval, infer, labelgen, refine, synth, train, train_grm
from pgspot.core.errors import UsageError


class SpotArgumentParser(argparse.ArgumentParser):
    """Argument errors surface as UsageError (exit code 1) instead of argparse's exit 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class CommandRouter:
    def __init__(self):
        self.commands = []

    def include_command(self, module, name: str, help: str):
        self.commands.append((name, module, help))

    def build_parser(self) -> argparse.ArgumentParser:
        parser = SpotArgumentParser(prog="pgspot", description="Point-gathering text spotting toolkit")
        parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        subparsers = parser.add_subparsers(dest="command", required=True, parser_class=SpotArgumentParser)
        for name, module, help in self.commands:
            sub = subparsers.add_parser(name, help=help, description=help)
            module.add_arguments(sub)
            sub.set_defaults(handler=module.run)
        return parser


cli_router = CommandRouter()

cli_router.include_command(synth, name="synth", help="generate synthetic scenes and annotations")
cli_router.include_command(labelgen, name="labelgen", help="rasterize annotations into map set files")
cli_router.include_command(train, name="train", help="fit the toy model on annotated images")
cli_router.include_command(train_grm, name="train-grm", help="fit the graph refinement module on a frozen model")
cli_router.include_command(infer, name="infer", help="spot words from map sets or images")
cli_router.include_command(refine, name="refine", help="re-decode inference results with graph refinement")
cli_router.include_command(eval, name="eval", help="score results against ground truth")
cli_router.include_command(bench, name="bench", help="time the forward, post-processing and refinement stages")
