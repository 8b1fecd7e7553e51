"""Model declarations: likelihood, effect blocks, observation data and the
layout of the (augmented) latent field.

Latent indices are 0-based. In the augmented field the ``n`` linear
predictors come first, followed by the effect blocks in declaration order.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ModelError
from .likelihood import Family

DEFAULT_FIXED_PRECISION = 0.001


class EffectKind(enum.Enum):
    FIXED = "fixed"
    IID = "iid"
    RW1 = "rw1"
    RW2 = "rw2"
    CYCLIC_RW2 = "cyclic_rw2"

    @classmethod
    def parse(cls, name) -> "EffectKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"fixedeffect": "fixed", "fixed_effect": "fixed", "linear": "fixed",
                   "cyclicrw2": "cyclic_rw2", "rw2_cyclic": "cyclic_rw2"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ModelError(f"unknown effect kind {name!r}") from None


@dataclass(frozen=True)
class LikelihoodSpec:
    """Likelihood family with its fixed parameters.

    Binomial trial counts come either from ``trials_column`` in the data or
    from the constant ``trials``; the Gaussian family needs ``precision``.
    """

    family: Family
    precision: float | None = None
    trials: int | None = None
    trials_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.family is Family.GAUSSIAN_IDENTITY:
            if self.precision is None or not np.isfinite(self.precision) or self.precision <= 0:
                raise ModelError("Gaussian observation precision must be finite and > 0")
        if self.trials is not None and (int(self.trials) != self.trials or self.trials < 1):
            raise ModelError("binomial trial count must be an integer >= 1")


@dataclass(frozen=True)
class EffectSpec:
    name: str
    kind: EffectKind
    size: int = 1
    prior_precision: float = DEFAULT_FIXED_PRECISION
    covariate: str | None = None
    index: str | None = None
    standardize: bool = False

    def __post_init__(self):
        kind = EffectKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is EffectKind.FIXED and self.size != 1:
            raise ModelError(f"fixed effect {self.name!r} must have size 1")
        if int(self.size) != self.size or self.size < 1:
            raise ModelError(f"effect {self.name!r} size must be a positive integer")
        minimum = {EffectKind.RW1: 2, EffectKind.RW2: 3, EffectKind.CYCLIC_RW2: 3}.get(kind, 1)
        if self.size < minimum:
            raise ModelError(f"effect {self.name!r} of kind {kind.value} needs size >= {minimum}")
        if not np.isfinite(self.prior_precision) or self.prior_precision <= 0:
            raise ModelError(f"effect {self.name!r} prior precision must be finite and > 0")
        if kind is not EffectKind.FIXED and self.covariate is not None:
            raise ModelError(f"random effect {self.name!r} takes an index column, not a covariate")

    @property
    def is_intercept(self) -> bool:
        return self.kind is EffectKind.FIXED and self.covariate is None


@dataclass(frozen=True)
class ModelSpec:
    likelihood: LikelihoodSpec
    effects: tuple
    n_obs: int

    def __post_init__(self):
        effects = tuple(self.effects)
        object.__setattr__(self, "effects", effects)
        if not effects:
            raise ModelError("model needs at least one effect")
        names = [e.name for e in effects]
        if len(set(names)) != len(names):
            raise ModelError("effect names must be unique")
        if sum(e.is_intercept for e in effects) > 1:
            raise ModelError("at most one intercept is allowed")
        if self.n_obs < 1:
            raise ModelError("n_obs must be positive")

    @property
    def m_star(self) -> int:
        return sum(e.size for e in self.effects)


@dataclass(frozen=True, eq=False)
class ObservationData:
    y: np.ndarray
    covariates: dict = field(default_factory=dict)
    trials: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size == 0:
            raise ModelError("no observations")
        if not np.all(np.isfinite(y)):
            raise ModelError("responses contain missing or non-finite values")
        cov = {}
        for k, v in dict(self.covariates).items():
            arr = np.asarray(v, dtype=float).ravel()
            if arr.size != y.size:
                raise ModelError(f"column {k!r} has {arr.size} rows, expected {y.size}")
            cov[k] = arr
        trials = None
        if self.trials is not None:
            trials = np.broadcast_to(np.asarray(self.trials, dtype=float), y.shape).copy()
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "trials", trials)

    @property
    def n_obs(self) -> int:
        return self.y.size

    def column(self, name) -> np.ndarray:
        try:
            return self.covariates[name]
        except KeyError:
            raise ModelError(f"data has no column {name!r}") from None

    @classmethod
    def from_csv(cls, path, response, trials_column=None):
        """Read a header-row CSV; every non-response column becomes a covariate."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ModelError(f"{path}: empty CSV")
            rows = list(reader)
        columns = {}
        for name in reader.fieldnames:
            try:
                columns[name] = np.array([float(r[name]) for r in rows])
            except (TypeError, ValueError):
                raise ModelError(f"{path}: column {name!r} has missing or non-numeric values") from None
        if response not in columns:
            raise ModelError(f"{path}: response column {response!r} not found")
        y = columns.pop(response)
        trials = None
        if trials_column is not None:
            if trials_column not in columns:
                raise ModelError(f"{path}: trials column {trials_column!r} not found")
            trials = columns[trials_column]
        return cls(y=y, covariates=columns, trials=trials)


@dataclass(frozen=True)
class BlockSlot:
    name: str
    kind: EffectKind
    offset: int  # effect-space offset
    size: int


@dataclass(frozen=True)
class LatentLayout:
    """Index bookkeeping for the augmented field ``(eta, effects...)``."""

    n: int
    blocks: tuple

    @property
    def m_star(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def m(self) -> int:
        return self.n + self.m_star

    def block(self, name) -> BlockSlot:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def effect_slice(self, name) -> slice:
        b = self.block(name)
        return slice(b.offset, b.offset + b.size)

    def locate(self, index):
        """Map an augmented latent index to ``(block name, offset)``."""
        if not 0 <= index < self.m:
            raise IndexError(index)
        if index < self.n:
            return ("predictor", index)
        return self.locate_effect(index - self.n)

    def locate_effect(self, index):
        for b in self.blocks:
            if b.offset <= index < b.offset + b.size:
                return (b.name, index - b.offset)
        raise IndexError(index)

    def index_of(self, block, offset) -> int:
        if block == "predictor":
            if not 0 <= offset < self.n:
                raise IndexError(offset)
            return offset
        b = self.block(block)
        if not 0 <= offset < b.size:
            raise IndexError(offset)
        return self.n + b.offset + offset

    def effect_labels(self):
        out = []
        for b in self.blocks:
            if b.size == 1:
                out.append(b.name)
            else:
                out.extend(f"{b.name}[{k}]" for k in range(b.size))
        return out


def _effect_rows(effect, data):
    """0-based block positions used by each observation of a random effect."""
    if effect.index is None:
        if effect.size != data.n_obs:
            raise ModelError(f"effect {effect.name!r} has no index column and size "
                             f"{effect.size} != n_obs {data.n_obs}")
        return np.arange(data.n_obs)
    idx = data.column(effect.index)
    if np.any(np.floor(idx) != idx):
        raise ModelError(f"index column {effect.index!r} must hold integers")
    pos = idx.astype(np.int64) - 1
    if pos.min() < 0 or pos.max() >= effect.size:
        raise ModelError(f"index column {effect.index!r} out of range 1..{effect.size}")
    return pos


def build_layout(model: ModelSpec, data: ObservationData) -> LatentLayout:
    if model.n_obs != data.n_obs:
        raise ModelError(f"model declares {model.n_obs} observations, data has {data.n_obs}")
    blocks, offset = [], 0
    for e in model.effects:
        if e.kind is EffectKind.FIXED:
            if e.covariate is not None:
                data.column(e.covariate)
        else:
            _effect_rows(e, data)
        blocks.append(BlockSlot(e.name, e.kind, offset, e.size))
        offset += e.size
    return LatentLayout(model.n_obs, tuple(blocks))


def _covariate_values(effect, data):
    x = data.column(effect.covariate)
    if effect.standardize:
        sd = x.std(ddof=1)
        if not sd > 0:
            raise ModelError(f"covariate {effect.covariate!r} is constant; cannot standardise")
        x = (x - x.mean()) / sd
    return x


def predictor_map(model: ModelSpec, data: ObservationData) -> sp.csr_matrix:
    """Sparse ``A`` (n x m*) with ``eta = A @ effects``."""
    layout = build_layout(model, data)
    n = data.n_obs
    rows, cols, vals = [], [], []
    obs = np.arange(n)
    for e, slot in zip(model.effects, layout.blocks):
        if e.kind is EffectKind.FIXED:
            v = np.ones(n) if e.is_intercept else _covariate_values(e, data)
            rows.append(obs)
            cols.append(np.full(n, slot.offset))
            vals.append(v)
        else:
            rows.append(obs)
            cols.append(slot.offset + _effect_rows(e, data))
            vals.append(np.ones(n))
    a = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, layout.m_star))
    a.sum_duplicates()
    return a
