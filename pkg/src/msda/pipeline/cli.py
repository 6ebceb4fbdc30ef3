"""Command-line entry point: ``msda <stage> [--config FILE] [--section-key VALUE ...]``.

Every config key has a flag ``--<section>-<key>`` (underscores become
dashes). Flags override the config file unless ``--config-priority`` is
given. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure.
"""
import argparse
import logging
import sys
from dataclasses import MISSING

from ..exceptions import (ConfigurationError, DataError, FitError, NumericError, ProtocolError,
                          SpecError)
from .config import SECTIONS, build_config, merge, read_config_file, section_fields
from .stages import ORDER, StageError, output_root, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ORDER + ["run-all"]

log = logging.getLogger("msda")


def _flag(section, key):
    return f"--{section}-{key}".replace("_", "-")


def _dest(section, key):
    return f"cfg__{section}__{key}"


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_value(text, default, annotation=None):
    """Convert ``text`` using the type of the field default."""
    if annotation in (object, "object"):
        default = None
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, tuple):
        return tuple(part for part in text.split(",") if part)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
        return None if text.lower() == "none" else text
    return text


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def build_parser():
    parser = argparse.ArgumentParser(prog="msda", description="Multi-source domain adaptation "
                                     "pipeline for speaker verification on a synthetic corpus.")
    parser.add_argument("command", choices=COMMANDS, help="pipeline stage to run")
    parser.add_argument("--config", help="TOML experiment config")
    parser.add_argument("--config-priority", action="store_true",
                        help="let the config file override command-line flags")
    parser.add_argument("--force", action="store_true", help="rerun even if outputs are current")
    parser.add_argument("-v", "--verbose", action="store_true")
    for section in SECTIONS:
        group = parser.add_argument_group(f"[{section}]")
        for key, f in section_fields(section).items():
            group.add_argument(_flag(section, key), dest=_dest(section, key), metavar="VALUE",
                               default=None, help=f"default: {_default(f)!r}")
    return parser


def flag_overrides(args):
    out = {}
    for section in SECTIONS:
        for key, f in section_fields(section).items():
            text = getattr(args, _dest(section, key))
            if text is None:
                continue
            try:
                value = _parse_value(text, _default(f), f.type)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigurationError(f"{_flag(section, key)}: {exc}") from None
            out.setdefault(section, {})[key] = value
    return out


def resolve_config(args):
    file_layer = read_config_file(args.config) if args.config else {}
    flags = flag_overrides(args)
    layers = (flags, file_layer) if args.config_priority else (file_layer, flags)
    return build_config(merge(*layers))


def exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (ConfigurationError, SpecError)):
        return EXIT_CONFIG
    if isinstance(cause, (NumericError, FitError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(cause, (DataError, ProtocolError, OSError, KeyError, ValueError)):
        return EXIT_DATA
    return None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        stages = ORDER if args.command == "run-all" else [args.command]
        status = run_experiment(cfg, stages, force=args.force)
    except Exception as exc:
        code = exit_code(exc)
        if code is None:
            raise
        print(f"msda: error: {exc}", file=sys.stderr)
        return code
    for name, state in status.items():
        log.info("%s: %s", name, state)
    print(f"msda: {args.command} finished in {output_root(cfg)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
