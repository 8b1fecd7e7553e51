"""YAML run configuration: likelihood, response, data file and effect blocks.

Example::

    likelihood:
      family: binomial
      trials_column: n
    response: y
    data: tokyo.csv
    effects:
      - name: time
        kind: cyclic_rw2
        size: 366
        prior_precision: 10000
        index: day

A relative ``data`` path is resolved against the config file's directory.
Errors carry the 1-based line and column of the offending node.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .exceptions import ConfigError, ModelError
from .model import (DEFAULT_FIXED_PRECISION, EffectKind, EffectSpec, LikelihoodSpec,
                    ModelSpec, ObservationData)

_TOP_KEYS = {"likelihood", "response", "data", "effects"}
_LIK_KEYS = {"family", "precision", "trials", "trials_column"}
_EFFECT_KEYS = {"name", "kind", "size", "prior_precision", "covariate", "index", "standardize"}


class _Node:
    """A composed YAML node with its source position."""

    def __init__(self, node):
        self.node = node
        self.line = node.start_mark.line + 1
        self.column = node.start_mark.column + 1

    def error(self, message):
        return ConfigError(message, line=self.line, column=self.column)

    def mapping(self, what, allowed):
        if not isinstance(self.node, yaml.MappingNode):
            raise self.error(f"{what} must be a mapping")
        out = {}
        for k, v in self.node.value:
            key = _Node(k)
            if not isinstance(k, yaml.ScalarNode) or k.value not in allowed:
                raise key.error(f"unknown key {k.value!r} in {what}; expected one of "
                                f"{sorted(allowed)}")
            if k.value in out:
                raise key.error(f"duplicate key {k.value!r} in {what}")
            out[k.value] = _Node(v)
        return out

    def sequence(self, what):
        if not isinstance(self.node, yaml.SequenceNode):
            raise self.error(f"{what} must be a list")
        return [_Node(v) for v in self.node.value]

    def text(self, what):
        if not isinstance(self.node, yaml.ScalarNode) or self.node.value == "":
            raise self.error(f"{what} must be a non-empty string")
        return self.node.value

    def number(self, what):
        if isinstance(self.node, yaml.ScalarNode):
            try:
                return float(self.node.value)
            except ValueError:
                pass
        raise self.error(f"{what} must be a number")

    def integer(self, what):
        value = self.number(what)
        if value != int(value):
            raise self.error(f"{what} must be an integer")
        return int(value)

    def boolean(self, what):
        value = self.node.value.lower() if isinstance(self.node, yaml.ScalarNode) else None
        if value in ("true", "yes", "on"):
            return True
        if value in ("false", "no", "off"):
            return False
        raise self.error(f"{what} must be true or false")


@dataclass(frozen=True)
class RunConfig:
    likelihood: LikelihoodSpec
    response: str
    data_path: Path | None
    effects: tuple
    source: Path | None = None

    def load_data(self, override=None) -> ObservationData:
        path = Path(override) if override is not None else self.data_path
        if path is None:
            raise ConfigError("no data file given in the config or on the command line")
        if not path.exists():
            raise ConfigError(f"data file {str(path)!r} does not exist")
        return ObservationData.from_csv(path, self.response,
                                        trials_column=self.likelihood.trials_column)

    def model(self, data: ObservationData) -> ModelSpec:
        return ModelSpec(self.likelihood, self.effects, data.n_obs)

    def echo(self) -> dict:
        """Plain-data copy of the configuration for run reports."""
        lik = self.likelihood
        return {
            "likelihood": {"family": lik.family.value, "precision": lik.precision,
                           "trials": lik.trials, "trials_column": lik.trials_column},
            "response": self.response,
            "data": None if self.data_path is None else str(self.data_path),
            "effects": [{"name": e.name, "kind": e.kind.value, "size": e.size,
                         "prior_precision": e.prior_precision, "covariate": e.covariate,
                         "index": e.index, "standardize": e.standardize}
                        for e in self.effects],
        }


def _likelihood(node):
    fields = node.mapping("likelihood", _LIK_KEYS)
    if "family" not in fields:
        raise node.error("likelihood needs a 'family'")
    kwargs = {"family": fields["family"].text("family")}
    if "precision" in fields:
        kwargs["precision"] = fields["precision"].number("precision")
    if "trials" in fields:
        kwargs["trials"] = fields["trials"].integer("trials")
    if "trials_column" in fields:
        kwargs["trials_column"] = fields["trials_column"].text("trials_column")
    try:
        return LikelihoodSpec(**kwargs)
    except ValueError as exc:
        raise node.error(str(exc)) from None


def _effect(node):
    fields = node.mapping("effect", _EFFECT_KEYS)
    for required in ("name", "kind"):
        if required not in fields:
            raise node.error(f"effect needs a {required!r}")
    try:
        kind = EffectKind.parse(fields["kind"].text("kind"))
    except ModelError as exc:
        raise fields["kind"].error(str(exc)) from None
    kwargs = {"name": fields["name"].text("name"), "kind": kind}
    if "size" in fields:
        kwargs["size"] = fields["size"].integer("size")
    if "prior_precision" in fields:
        kwargs["prior_precision"] = fields["prior_precision"].number("prior_precision")
    elif kind is not EffectKind.FIXED:
        raise node.error(f"random effect {kwargs['name']!r} needs a prior_precision")
    else:
        kwargs["prior_precision"] = DEFAULT_FIXED_PRECISION
    for key in ("covariate", "index"):
        if key in fields:
            kwargs[key] = fields[key].text(key)
    if "standardize" in fields:
        kwargs["standardize"] = fields["standardize"].boolean("standardize")
    try:
        return EffectSpec(**kwargs)
    except ValueError as exc:
        raise node.error(str(exc)) from None


def parse_config(text: str, source=None) -> RunConfig:
    try:
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ConfigError(f"invalid YAML: {exc.problem}", line=line, column=column) from None
    if root is None:
        raise ConfigError("empty configuration", line=1, column=1)
    fields = _Node(root).mapping("configuration", _TOP_KEYS)
    for required in ("likelihood", "response", "effects"):
        if required not in fields:
            raise _Node(root).error(f"configuration needs {required!r}")
    likelihood = _likelihood(fields["likelihood"])
    response = fields["response"].text("response")
    data_path = None
    if "data" in fields:
        data_path = Path(fields["data"].text("data"))
        if source is not None and not data_path.is_absolute():
            data_path = Path(source).parent / data_path
    effect_nodes = fields["effects"].sequence("effects")
    if not effect_nodes:
        raise fields["effects"].error("effects must not be empty")
    effects = tuple(_effect(n) for n in effect_nodes)
    names = [e.name for e in effects]
    for node, name in zip(effect_nodes, names):
        if names.count(name) > 1:
            raise node.error(f"duplicate effect name {name!r}")
    if sum(e.is_intercept for e in effects) > 1:
        raise effect_nodes[-1].error("at most one intercept is allowed")
    return RunConfig(likelihood, response, data_path, effects,
                     source=None if source is None else Path(source))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, source=path)


def dump_config(config: RunConfig, path) -> None:
    """Write ``config`` back as YAML (data path written as given)."""
    echo = config.echo()
    effects = []
    for e in echo["effects"]:
        effects.append({k: v for k, v in e.items()
                        if v is not None and not (k == "standardize" and v is False)
                        and not (k == "size" and v == 1)})
    lik = {k: v for k, v in echo["likelihood"].items() if v is not None}
    doc = {"likelihood": lik, "response": echo["response"], "effects": effects}
    if echo["data"] is not None:
        doc["data"] = echo["data"]
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
