import argparse
import sys
from typing import List, Optional

from loguru import logger

from config import settings
from exceptions import TransResNetError
from handlers import HANDLERS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 4


def setup_logging(level: Optional[str] = None) -> None:
    """Configure logging: colourised stdout plus a rotating file sink."""
    logger.remove()
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level or settings.log_level
    )
    try:
        logger.add(
            settings.log_file,
            rotation=settings.log_rotation,
            retention=settings.log_retention,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level="INFO"
        )
    except OSError as e:
        logger.warning(f"File logging disabled, cannot open {settings.log_file}: {e}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transresnet",
        description="Multimodal retrieval and classification with (attentive) multimodal combiners.",
    )
    parser.add_argument("--log-level", default=None, help=f"log level (default: {settings.log_level})")
    router = parser.add_subparsers(dest="command", metavar="COMMAND")
    router.required = True
    for handler_cls in HANDLERS:
        handler_cls().register(router)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one CLI verb and map failures onto exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(args.log_level)

    try:
        return args.handler.handle(args)
    except TransResNetError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ I/O error on {e.filename or 'unknown path'}: {e.strerror or e}")
        return EXIT_DATA
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
