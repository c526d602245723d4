"""Sectioned ``key = value`` configuration files.

A file holds one section per subcommand, for example::

    [expA]
    eps = 0, 0.01, 0.05
    shadows = 128

Keys are typed per subcommand (see :data:`SCHEMAS`). Unknown sections or
keys are rejected with the offending name and its line number.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass

from .errors import InvalidConfigurationError


def _float(text):
    return float(text)


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _str(text):
    return text.strip()


def _list(item):
    def convert(text):
        parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
        return tuple(item(p) for p in parts)

    return convert


def _optional_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


_TRAINING = {
    "seed": _int, "teacher_seed": _int, "shadows": _int, "trials": _int, "n": _int,
    "max_epochs": _int, "learning_rate": _float, "init_variance": _float, "batch_size": _int,
    "hidden": _int, "modes": _list(_str),
}

SCHEMAS = {
    "expA": {**_TRAINING, "eps": _list(_float)},
    "expA-earlystop": {**_TRAINING, "eps": _float, "target_mse": _list(_float)},
    "expB": {**_TRAINING, "target_mse": _list(_float), "task": _str},
    "expC": {**_TRAINING, "sizes": _list(_int), "task": _str},
    "membership": {
        **{k: v for k, v in _TRAINING.items() if k not in ("teacher_seed", "n")},
        "variants": _list(_str), "n_attacks": _int, "parties": _int, "records_per_party": _int,
        "absent_party": _int, "penalty_weight": _float, "warmup_epochs": _int,
    },
    "theory": {
        "seed": _int, "n": _int, "trials": _int, "noise_variance": _float, "c": _float,
        "p0": _float, "p1": _float, "subsample_n": _int, "relative_tolerance": _float,
    },
    "subsampling": {"seed": _int, "p0": _float, "p1": _float, "n": _int},
    "game": {
        "seed": _int, "teacher_seed": _int, "family": _str, "eps": _float, "task": _str, "mode": _str,
        "shadows": _int, "trials": _int, "distance": _str, "n": _int, "max_epochs": _int,
        "target_mse": _optional_float,
    },
}


@dataclass
class LoadedConfig:
    section: str
    values: dict
    digest: str
    source: str | None = None


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index, section = {}, None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), number)
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", stripped)
        if m and not line[:1].isspace():
            index.setdefault((section, m.group(1).strip()), number)
    return index


def parse_config(text: str, section: str, source: str | None = None) -> LoadedConfig:
    """Parse ``text`` and return the typed values of ``section``.

    Other sections are allowed when they name a known subcommand, so one file
    can configure several runs. A missing section yields an empty value set.
    """
    where = source or "<config>"
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00", strict=True,
                                       inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=where)
    except configparser.Error as exc:
        raise InvalidConfigurationError(f"{where}: cannot parse configuration: {exc}") from exc
    lines = _line_index(text)
    for name in parser.sections():
        if name not in SCHEMAS:
            line = lines.get((name, None), "?")
            raise InvalidConfigurationError(f"{where}:{line}: unknown section [{name}]")
        schema = SCHEMAS[name]
        for key in parser[name]:
            if key not in schema:
                line = lines.get((name, key), "?")
                raise InvalidConfigurationError(f"{where}:{line}: unknown key '{key}' in section [{name}]")
    values = {}
    if parser.has_section(section):
        schema = SCHEMAS[section]
        for key, raw in parser[section].items():
            try:
                values[key] = schema[key](raw)
            except ValueError as exc:
                line = lines.get((section, key), "?")
                raise InvalidConfigurationError(f"{where}:{line}: bad value for '{key}': {exc}") from exc
    return LoadedConfig(section, values, digest_bytes(text.encode("utf-8")), source)


def load_config(path: str | None, section: str) -> LoadedConfig:
    """Read ``path`` (or use an empty configuration when ``path`` is None)."""
    if path is None:
        return LoadedConfig(section, {}, digest_bytes(b""), None)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InvalidConfigurationError(f"cannot read configuration {path}: {exc.strerror}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidConfigurationError(f"{path}: configuration is not UTF-8 text") from exc
    loaded = parse_config(text, section, path)
    loaded.digest = digest_bytes(data)
    return loaded
