import sys

from .cli import build_parser, run

__version__ = "0.1.0"


def main() -> None:
    """react-sg - Relocalize object instances across mapping sessions."""
    parser = build_parser(__version__)
    args = parser.parse_args()
    sys.exit(run(args, __version__))


if __name__ == "__main__":
    main()
