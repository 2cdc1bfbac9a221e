"""Experiment configuration: a flat key=value file with sections.

The format is deliberately diff-friendly; ``dump_config`` emits the
canonical file and ``parse_config`` round-trips it exactly.  Unknown
sections or keys are rejected.  Optional integers ("auto") resolve at run
time: memory size from the run's longest length, curriculum start from
min_len, digital-loss bins from max_target_bins.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
import configparser
import io

from .training import TrainConfig

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "dump_config",
           "default_config"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig
    checkpoint_dir: str = "runs"
    log_dir: str = "runs"
    data_path: str = "runs/data.tsv"


# (section, key, attribute on TrainConfig or ExperimentConfig, type tag)
_SCHEMA = [
    ("run", "task", "task", "str"),
    ("run", "seed", "seed", "int"),
    ("run", "binned", "binned_eval", "bool"),
    ("run", "digital_loss", "digital_loss", "bool"),
    ("model", "hidden_units", "hidden_units", "int"),
    ("model", "state_count", "state_count", "int"),
    ("model", "mem_size", "mem_size", "optint"),
    ("train", "min_len", "min_len", "int"),
    ("train", "max_len", "max_len", "int"),
    ("train", "val_len", "val_len", "int"),
    ("train", "batch_size", "batch_size", "int"),
    ("train", "learning_rate", "learning_rate", "float"),
    ("train", "beta1", "beta1", "float"),
    ("train", "beta2", "beta2", "float"),
    ("train", "epsilon", "epsilon", "float"),
    ("train", "digital_weight", "digital_weight", "float"),
    ("train", "digital_bins", "digital_bins", "optint"),
    ("train", "digital_start_step", "digital_start_step", "int"),
    ("train", "max_target_bins", "max_target_bins", "int"),
    ("train", "curriculum_start", "curriculum_start", "optint"),
    ("train", "curriculum_step", "curriculum_step", "int"),
    ("train", "promotion_threshold", "promotion_threshold", "float"),
    ("train", "promotion_window", "promotion_window", "int"),
    ("train", "val_interval", "val_interval", "int"),
    ("train", "val_batch", "val_batch", "int"),
    ("train", "log_interval", "log_interval", "int"),
    ("train", "max_steps", "max_steps", "int"),
    ("eval", "test_lengths", "test_lengths", "intlist"),
    ("eval", "eval_count", "eval_count", "int"),
    ("eval", "bin_search_cap", "bin_search_cap", "int"),
    ("paths", "checkpoint_dir", "checkpoint_dir", "str"),
    ("paths", "log_dir", "log_dir", "str"),
    ("paths", "data_path", "data_path", "str"),
]

_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


def _format_value(value, kind: str) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "optint":
        return "auto" if value is None else str(value)
    if kind == "intlist":
        return ",".join(str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def _parse_value(text: str, kind: str, where: str):
    text = text.strip()
    try:
        if kind == "str":
            return text
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "optint":
            return None if text.lower() == "auto" else int(text)
        if kind == "intlist":
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value for {where}: {text!r}") from None
    raise AssertionError(kind)


def default_config() -> ExperimentConfig:
    return ExperimentConfig(train=TrainConfig())


def dump_config(config: ExperimentConfig) -> str:
    """Canonical text for a config; parse_config(dump_config(c)) == c."""
    out = io.StringIO()
    section = None
    for sec, key, attr, kind in _SCHEMA:
        if sec != section:
            if section is not None:
                out.write("\n")
            out.write(f"[{sec}]\n")
            section = sec
        holder = config.train if attr in _TRAIN_FIELDS else config
        out.write(f"{key} = {_format_value(getattr(holder, attr), kind)}\n")
    return out.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {(sec, key): (attr, kind) for sec, key, attr, kind in _SCHEMA}
    known_sections = {sec for sec, *_ in _SCHEMA}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"unknown config section [{sec}]")
        for key in parser[sec]:
            if (sec, key) not in known:
                raise ConfigError(f"unknown config key {key!r} in [{sec}]")

    train_kwargs = {}
    other_kwargs = {}
    for sec, key, attr, kind in _SCHEMA:
        if parser.has_option(sec, key):
            value = _parse_value(parser.get(sec, key), kind, f"[{sec}] {key}")
            if attr in _TRAIN_FIELDS:
                train_kwargs[attr] = value
            else:
                other_kwargs[attr] = value
    return ExperimentConfig(train=TrainConfig(**train_kwargs), **other_kwargs)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
