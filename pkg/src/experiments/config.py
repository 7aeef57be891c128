"""
INI experiment configuration.

Each section maps onto one part of ``ExperimentConfig``. Keys listed in ``GRID_KEYS`` accept a
comma-separated list and expand into the cross product of runs; keys in ``LIST_KEYS`` are plain
comma-separated lists.
"""

import configparser
import io
import itertools
from logging import getLogger
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from src.common import exceptions
from src.common.seeding import derive_seed
from src.data.models import PartitionMode
from src.simulation.models import ExperimentConfig

logger = getLogger(__name__)

TOP_LEVEL_SECTION = "experiment"
NESTED_SECTIONS = ("partition", "model", "local", "strategy", "adversary", "synthetic")

GRID_KEYS = {
    ("experiment", "dataset"),
    ("experiment", "rounds"),
    ("experiment", "num_clients"),
    ("partition", "mode"),
    ("partition", "alpha"),
    ("strategy", "kind"),
}
LIST_KEYS = {("model", "hidden_dims"), ("adversary", "clients")}

# INI key -> model field, where they differ.
KEY_ALIASES = {("adversary", "factor"): "scale_factor", ("adversary", "clients"): "affected_clients"}
FIELD_ALIASES = {(section, field): key for (section, key), field in KEY_ALIASES.items()}

Run = dict[str, Any]


def _split(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _format_validation_error(err: ValidationError) -> str:
    lines = []
    for error in err.errors():
        location = [str(part) for part in error["loc"]]
        if location and location[0] not in NESTED_SECTIONS:
            location.insert(0, TOP_LEVEL_SECTION)
        lines.append(f"{'.'.join(location) or TOP_LEVEL_SECTION}: {error['msg']}")
    return "; ".join(lines)


def read_grid(text: str, source: str = "<string>") -> list[Run]:
    """Parse INI text into raw run dicts, one per cell of the grid."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise exceptions.ConfigurationError(f"Cannot parse {source}: {err}") from err

    base: Run = {}
    axes: list[tuple[str, str, list[str]]] = []
    for section in parser.sections():
        if section != TOP_LEVEL_SECTION and section not in NESTED_SECTIONS:
            raise exceptions.ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            field = KEY_ALIASES.get((section, key), key)
            if (section, key) in GRID_KEYS:
                values = _split(raw)
                if not values:
                    raise exceptions.ConfigurationError(f"{section}.{key}: needs at least one value")
                axes.append((section, field, values))
                continue
            value: Any = _split(raw) if (section, key) in LIST_KEYS else raw
            if section == TOP_LEVEL_SECTION:
                base[field] = value
            else:
                base.setdefault(section, {})[field] = value

    runs = []
    for combination in itertools.product(*(values for _, _, values in axes)):
        run = {key: dict(value) if isinstance(value, dict) else value for key, value in base.items()}
        for (section, field, _), value in zip(axes, combination):
            if section == TOP_LEVEL_SECTION:
                run[field] = value
            else:
                run.setdefault(section, {})[field] = value
        runs.append(run)
    return runs


def _same_run(kept: ExperimentConfig, cfg: ExperimentConfig) -> bool:
    """Whether two configs with one run id describe the same run; alpha is irrelevant to iid splits."""
    if kept == cfg:
        return True
    if kept.partition.mode != PartitionMode.IID:
        return False
    relabelled = kept.partition.model_copy(update={"alpha": cfg.partition.alpha})
    return kept.model_copy(update={"partition": relabelled}) == cfg


def build_configs(runs: list[Run], replicas: int = 1, master_seed: int | None = None) -> list[ExperimentConfig]:
    """
    Validate raw runs into configs, repeating each for ``replicas`` seeds.

    Replica 0 keeps the configured master seed; replica r uses a seed derived from (seed, r).
    iid runs crossed with several alphas are kept once. Any other pair of runs sharing a run id
    is a configuration error.
    """
    if replicas < 1:
        raise exceptions.ConfigurationError(f"replicas must be >= 1, got {replicas}")

    configs: dict[str, ExperimentConfig] = {}
    for run in runs:
        for replicate in range(replicas):
            candidate = dict(run)
            if master_seed is not None:
                candidate["master_seed"] = master_seed
            try:
                if replicate:
                    candidate["master_seed"] = derive_seed(int(candidate.get("master_seed", 0)), replicate)
                    candidate["replicate"] = replicate
                cfg = ExperimentConfig.model_validate(candidate)
            except ValidationError as err:
                msg = _format_validation_error(err)
                logger.error(f"Invalid configuration: {msg}")
                raise exceptions.ConfigurationError(msg) from err
            except ValueError as err:
                raise exceptions.ConfigurationError(str(err)) from err
            kept = configs.setdefault(cfg.run_id, cfg)
            if not _same_run(kept, cfg):
                msg = f"Runs collide on id {cfg.run_id}; their settings differ beyond what the id shows"
                logger.error(msg)
                raise exceptions.ConfigurationError(msg)
    return list(configs.values())


def parse_config(path: Path, replicas: int = 1, master_seed: int | None = None) -> list[ExperimentConfig]:
    """Read an INI file and return the validated configs of every run it describes."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        msg = f"Cannot read config file {path}: {err}"
        logger.error(msg)
        raise exceptions.ConfigurationError(msg) from err
    configs = build_configs(read_grid(text, source=str(path)), replicas, master_seed)
    logger.debug(f"Parsed {len(configs)} runs from {path}")
    return configs


def _render_value(value: Any) -> str:
    if isinstance(value, (set, frozenset)):
        value = sorted(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(str(item) for item in value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """INI text that ``parse_config`` turns back into an equal config."""
    dumped = cfg.model_dump(mode="python")
    parser = configparser.ConfigParser(interpolation=None)

    parser[TOP_LEVEL_SECTION] = {}
    for field, value in dumped.items():
        if field in NESTED_SECTIONS or value is None:
            continue
        parser[TOP_LEVEL_SECTION][field] = _render_value(value)

    for section in NESTED_SECTIONS:
        parser[section] = {}
        for field, value in dumped[section].items():
            if value is None or (section, field) == ("partition", "num_clients"):
                continue
            key = FIELD_ALIASES.get((section, field), field)
            parser[section][key] = _render_value(value)

    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()
