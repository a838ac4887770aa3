"""
Experiment configuration files.

A config is flat ``section.key = value`` text; ``#`` starts a comment. Values
are read as JSON (numbers, booleans, lists, quoted strings) and fall back to
bare strings::

    experiment.name = mnist-2layer
    train.eta = 0.001
    data.shots = [1, 2, 5, 10]
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from core.inference import GenerationConfig
from core.network import FeedbackConfig, TrainConfig
from experiments.presets import dataset_preset, model_preset
from experiments.readout import ReadoutConfig


class ConfigError(ValueError):
    def __init__(self, message, errors=None):
        self.errors = errors or {}
        super().__init__(message)


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_key(config, key, value, source="<config>"):
    section, dot, name = key.strip().partition(".")
    if not dot or not section or not name or "." in name:
        raise ConfigError(f"{source}: key {key!r} must look like section.name.")
    config.setdefault(section, {})[name] = value


def parse_config_text(text, source="<config>"):
    config = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}.")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}.")
        seen.add(key)
        set_key(config, key, parse_value(value.strip()), f"{source}:{lineno}")
    return config


def apply_overrides(config, overrides):
    """Apply ``section.key=value`` strings on top of a parsed config."""
    for item in overrides or ():
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"override {item!r} must look like section.key=value.")
        set_key(config, key, parse_value(value.strip()), "override")
    return config


def validate_config(raw):
    from experiments.serializers import ExperimentConfigSerializer

    serializer = ExperimentConfigSerializer(data=raw)
    if not serializer.is_valid():
        raise ConfigError(f"invalid configuration: {json.dumps(serializer.errors, sort_keys=True)}",
                          serializer.errors)
    return json.loads(json.dumps(serializer.validated_data))


def load_config(path=None, overrides=(), flags=None):
    """
    Read, override and validate a config.

    ``flags`` maps ``section.key`` to values from command-line flags; they win
    over the file, ``overrides`` win over both.
    """
    raw = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    for key, value in (flags or {}).items():
        if value is not None:
            set_key(raw, key, value, "flag")
    apply_overrides(raw, overrides)
    return validate_config(raw)


# ------------------ manifests ------------------

def canonical_json(value, indent=None):
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(value, sort_keys=True, indent=indent, separators=separators, default=str)


def manifest_hash(manifest):
    """Git blob hash of the canonical JSON manifest."""
    body = canonical_json(manifest).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def file_fingerprint(path, chunk=1 << 20):
    path = Path(path)
    digest = hashlib.sha1()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(chunk), b""):
            digest.update(block)
    return {"path": str(path), "bytes": path.stat().st_size, "sha1": digest.hexdigest()}


# ------------------ resolved experiment ------------------

def _learning_settings():
    return getattr(settings, "ACTIVATION_LEARNING", {})


@dataclass(frozen=True)
class ExperimentSpec:
    config: dict

    @classmethod
    def from_config(cls, config):
        spec = cls(config=config)
        # Fail on unknown presets before any work is done.
        spec.dataset
        spec.model
        return spec

    def section(self, name):
        return self.config[name]

    @property
    def name(self):
        return self.config["experiment"]["name"]

    @property
    def protocol(self):
        return self.config["experiment"]["protocol"]

    @property
    def seed(self):
        return self.config["experiment"]["seed"]

    @property
    def deterministic(self):
        return bool(self.config["experiment"]["deterministic"] or _learning_settings().get("DETERMINISTIC"))

    @property
    def dataset(self):
        return dataset_preset(self.config["data"]["preset"])

    @property
    def model(self):
        return model_preset(self.config["model"]["preset"])

    @property
    def dataset_dir(self):
        return Path(self.config["data"]["dir"] or _learning_settings().get("DATASET_DIR", "datasets"))

    @property
    def output_dir(self):
        out = self.config["experiment"]["out"]
        if out:
            return Path(out)
        runs = Path(_learning_settings().get("RUNS_DIR", "runs"))
        return runs / f"{self.name}-s{self.seed}"

    def feedback_config(self):
        if not self.config["train"]["feedback"]:
            return None
        return FeedbackConfig(**self.config["feedback"])

    def train_config(self, seed=None):
        train = self.config["train"]
        return TrainConfig(
            eta=train["eta"],
            epochs=train["epochs"],
            batch_size=train["batch_size"],
            mode=train["mode"],
            seed=self.seed if seed is None else seed,
            feedback=self.feedback_config(),
            eta_final=train["eta_final"],
            shuffle=train["shuffle"],
        )

    def generation_config(self, seed=None):
        inference = self.config["inference"]
        return GenerationConfig(
            l1_beta=inference["l1_beta"],
            noise_std=inference["noise_std"],
            steps=inference["steps"],
            step_size=inference["step_size"],
            penalty=inference["penalty"],
            seed=self.seed if seed is None else seed,
        )

    def readout_config(self):
        readout = self.config["readout"]
        return ReadoutConfig(
            step_size=readout["step_size"],
            epochs=readout["epochs"],
            batch_size=readout["batch_size"],
            seed=self.seed,
        )
