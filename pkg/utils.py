#utils.py
import os
import tempfile
import logging
from pathlib import Path

import numpy as np
import torch
from dotenv.parser import parse_stream

logger = logging.getLogger(__name__)


# --- Error Hierarchy ---
# main.py maps these to process exit codes; library code only raises.

class DiffLoadError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(DiffLoadError):
    """Invalid configuration value or unknown key."""


class DataError(DiffLoadError):
    """Malformed, missing or inconsistent input data or files."""


class TrainingAborted(DiffLoadError):
    """Training produced a non-finite loss."""


class DomainError(DiffLoadError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(DiffLoadError, ValueError):
    """Array or tensor dimensions do not line up."""


# --- Random Streams ---

def derive_seed(root: int, *counters: int) -> int:
    """
    Derives an independent 63-bit seed from a root seed and a tuple of counters.

    Streams derived this way do not depend on the order in which they are
    requested, so parallel workers reproduce sequential results exactly.
    """
    entropy = [int(root)] + [int(c) for c in counters]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_generator(root: int, *counters: int) -> torch.Generator:
    """Returns a CPU torch.Generator seeded from `derive_seed(root, *counters)`."""
    generator = torch.Generator()
    generator.manual_seed(derive_seed(root, *counters))
    return generator


# --- Atomic File Output ---

def atomic_write_bytes(path, payload: bytes):
    """
    Writes `payload` to `path` through a temporary file in the same directory
    followed by a rename, so a reader never observes a partially written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {len(payload)} bytes to {path}")


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


# --- Flat Config Files ---

def read_flat_config(path) -> dict[str, str]:
    """
    Parses a flat `key = value` text file into a dict of raw strings.

    Parsing is python-dotenv's, so blank lines, `#` comments and quoted
    values behave as in a `.env` file. Hyphens in keys are
    normalised to underscores so file keys match command-line overrides.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    values = {}
    with open(path, encoding='utf-8') as stream:
        bindings = list(parse_stream(stream))
    for binding in bindings:
        text = binding.original.string
        # A binding starts at any blank lines that precede it.
        line_no = binding.original.line + text[:len(text) - len(text.lstrip())].count('\n')
        raw_line = text.strip()
        if binding.error or (binding.key is not None and binding.value is None):
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got '{raw_line}'")
        if binding.key is None:
            continue
        key = binding.key.strip().replace('-', '_')
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key '{key}'")
        values[key] = binding.value.strip()
    logger.info(f"Read {len(values)} config keys from {path}")
    return values


def parse_override_args(args: list[str]) -> dict[str, str]:
    """
    Turns trailing `--key value` command-line pairs into a dict of raw strings.
    """
    overrides = {}
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith('--') or len(token) <= 2:
            raise ConfigError(f"Unexpected argument '{token}'; overrides must be '--key value' pairs")
        if i + 1 >= len(args):
            raise ConfigError(f"Override '{token}' is missing a value")
        overrides[token[2:].replace('-', '_')] = args[i + 1]
        i += 2
    return overrides
