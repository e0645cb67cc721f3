"""Experiment configuration: a JSON document parsed into frozen dataclasses."""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

from config import DEFAULT_PERMISSION_FEE, DEFAULT_REWARD_POOL, DEFAULT_TREASURY, ROUND_RETRY_CAP
from services.adversary import AttackConfig
from services.consensus import ElectionVariant, QualificationMode, QualificationPolicy
from services.datasets import PartitionKind, PartitionScheme
from services.learning import Aggregator, TrainConfig
from utils.errors import ConfigError, InvalidArgument
from utils.helpers import find_key_line, nearest_odd

logger = logging.getLogger(__name__)

FRAMEWORKS = ("bflc", "basic_fl", "cwmed", "standalone")
BASELINES = FRAMEWORKS[1:]


class DataSource(str, Enum):
    SYNTHETIC = "synthetic"
    CSV = "csv"


@dataclass(frozen=True)
class DataConfig:
    source: DataSource = DataSource.SYNTHETIC
    n_samples: int = 20000
    n_features: int = 32
    n_classes: int = 10
    class_separation: float = 3.0
    csv_path: Optional[str] = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class IncentiveConfig:
    reward_pool: int = DEFAULT_REWARD_POOL
    permission_fee: int = DEFAULT_PERMISSION_FEE
    treasury: int = DEFAULT_TREASURY


# genesis committee: None (seeded random), "honest" (seeded random among honest nodes) or explicit ids
GenesisSpec = Union[None, str, Tuple[int, ...]]


class RoundSizes(NamedTuple):
    n_active: int
    committee_size: int
    n_trainers: int
    k: int


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    n_nodes: int = 200
    active_fraction: float = 0.1
    committee_fraction: float = 0.4
    rounds: int = 30
    k_updates_per_round: Optional[int] = None
    aggregator: Aggregator = Aggregator.MEAN
    election: ElectionVariant = ElectionVariant.BY_SCORE
    qualification: QualificationPolicy = field(default_factory=QualificationPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionScheme = field(default_factory=PartitionScheme)
    attack: AttackConfig = field(default_factory=AttackConfig)
    incentive: IncentiveConfig = field(default_factory=IncentiveConfig)
    baselines: Tuple[str, ...] = BASELINES
    genesis_committee: GenesisSpec = None
    retry_cap: int = ROUND_RETRY_CAP
    prune_history: bool = False

    def __post_init__(self):
        for name in ("active_fraction", "committee_fraction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise InvalidArgument(f"{name} must lie in (0, 1]")
        if self.rounds < 1:
            raise InvalidArgument("rounds must be at least 1")
        if self.n_nodes < 2:
            raise InvalidArgument("n_nodes must be at least 2")
        if self.k_updates_per_round is not None and self.k_updates_per_round < 1:
            raise InvalidArgument("k_updates_per_round must be positive")
        if self.retry_cap < 1:
            raise InvalidArgument("retry_cap must be at least 1")
        unknown = [b for b in self.baselines if b not in BASELINES]
        if unknown:
            raise InvalidArgument(f"unknown baselines {unknown}")
        self._check_sizes()

    @property
    def malicious_count(self) -> int:
        return int(round(self.n_nodes * self.attack.malicious_fraction))

    def round_sizes(self) -> RoundSizes:
        """Active, committee, trainer and k counts shared by every round.

        Without an explicit k, a round closes once half the trainers (at most the
        committee size) have qualified.
        """
        n_active = max(2, int(round(self.n_nodes * self.active_fraction)))
        committee_size = min(nearest_odd(self.committee_fraction * n_active), n_active - 1)
        n_trainers = n_active - committee_size
        k = self.k_updates_per_round or min(committee_size, math.ceil(n_trainers / 2))
        return RoundSizes(n_active, committee_size, n_trainers, k)

    def _check_sizes(self):
        sizes = self.round_sizes()
        if sizes.k > sizes.n_trainers:
            raise InvalidArgument(
                f"k_updates_per_round={sizes.k} exceeds the {sizes.n_trainers} trainers of a round"
            )
        if self.n_nodes < 2 * sizes.committee_size:
            raise InvalidArgument(
                f"n_nodes={self.n_nodes} cannot host two disjoint committees of {sizes.committee_size}"
            )
        genesis = self.genesis_committee
        if isinstance(genesis, tuple):
            unknown = [n for n in genesis if n >= self.n_nodes]
            if unknown:
                raise InvalidArgument(f"genesis_committee names unknown nodes {unknown}")
        elif genesis == "honest" and self.n_nodes - self.malicious_count < sizes.committee_size:
            raise InvalidArgument(
                f"genesis_committee 'honest' needs {sizes.committee_size} honest nodes, "
                f"only {self.n_nodes - self.malicious_count} exist"
            )


# key -> (expected JSON types, section parser or None)
_TOP_LEVEL = {
    "name": (str,),
    "seed": (int,),
    "n_nodes": (int,),
    "active_fraction": (int, float),
    "committee_fraction": (int, float),
    "rounds": (int,),
    "k_updates_per_round": (int, type(None)),
    "aggregator": (str,),
    "election": (dict,),
    "qualification": (dict,),
    "train": (dict,),
    "data": (dict,),
    "partition": (dict,),
    "attack": (dict,),
    "incentive": (dict,),
    "baselines": (list,),
    "genesis_committee": (str, list, type(None)),
    "retry_cap": (int,),
    "prune_history": (bool,),
}

_SECTIONS = {
    "election": {"variant": (str,)},
    "qualification": {"mode": (str,), "theta": (int, float), "rho": (int, float), "floor": (int, float)},
    "train": {"epochs": (int,), "learning_rate": (int, float), "batch_size": (int,)},
    "data": {
        "source": (str,), "n_samples": (int,), "n_features": (int,), "n_classes": (int,),
        "class_separation": (int, float), "csv_path": (str, type(None)), "test_fraction": (int, float),
    },
    "partition": {"kind": (str,), "alpha": (int, float), "shards_per_node": (int,)},
    "attack": {
        "malicious_fraction": (int, float), "noise_sigma": (int, float), "collusion": (bool,),
        "suppress_honest": (bool,), "relative_sigma": (bool,),
    },
    "incentive": {"reward_pool": (int,), "permission_fee": (int,), "treasury": (int,)},
}


class _Reader:
    """Type-checks keys against the schema, reporting the source line of each problem."""

    def __init__(self, text: str):
        self.text = text

    def fail(self, key: str, message: str):
        raise ConfigError(message, find_key_line(self.text, key))

    def check(self, section: Dict[str, Any], schema: Dict[str, tuple], where: str):
        for key, value in section.items():
            if key not in schema:
                self.fail(key, f"unknown key '{key}' in {where}")
            allowed = schema[key]
            # bool is an int subclass; only accept it where bool is declared
            if isinstance(value, bool) and bool not in allowed:
                self.fail(key, f"'{key}' must be {_type_names(allowed)}, got boolean")
            if not isinstance(value, allowed):
                self.fail(key, f"'{key}' must be {_type_names(allowed)}, got {type(value).__name__}")

    def build(self, key: str, factory, **kwargs):
        try:
            return factory(**kwargs)
        except (InvalidArgument, ValueError) as e:
            # point at the offending field when the message names one
            named = next((name for name in kwargs if str(e).startswith(name)), key)
            self.fail(named, f"invalid '{named}': {e}")


def _type_names(types: tuple) -> str:
    names = {int: "an integer", float: "a number", str: "a string", bool: "a boolean",
             dict: "an object", list: "a list", type(None): "null"}
    return " or ".join(dict.fromkeys(names[t] for t in types))


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment document."""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", e.lineno)
    if not isinstance(document, dict):
        raise ConfigError("top level must be a JSON object", 1)

    reader = _Reader(text)
    reader.check(document, _TOP_LEVEL, "config")
    for section, schema in _SECTIONS.items():
        reader.check(document.get(section, {}), schema, f"'{section}'")

    base = ExperimentConfig()
    seed = document.get("seed", base.seed)

    qualification = document.get("qualification", {})
    policy = reader.build(
        "qualification", QualificationPolicy,
        mode=reader.build("mode", QualificationMode, value=qualification.get("mode", base.qualification.mode.value)),
        theta=float(qualification.get("theta", base.qualification.theta)),
        rho=float(qualification.get("rho", base.qualification.rho)),
        floor=float(qualification.get("floor", base.qualification.floor)),
    )

    train = document.get("train", {})
    train_cfg = reader.build(
        "train", TrainConfig,
        epochs=train.get("epochs", base.train.epochs),
        learning_rate=float(train.get("learning_rate", base.train.learning_rate)),
        batch_size=train.get("batch_size", base.train.batch_size),
        seed=seed,
    )

    data = document.get("data", {})
    data_cfg = reader.build(
        "data", DataConfig,
        source=reader.build("source", DataSource, value=data.get("source", base.data.source.value)),
        n_samples=data.get("n_samples", base.data.n_samples),
        n_features=data.get("n_features", base.data.n_features),
        n_classes=data.get("n_classes", base.data.n_classes),
        class_separation=float(data.get("class_separation", base.data.class_separation)),
        csv_path=data.get("csv_path", base.data.csv_path),
        test_fraction=float(data.get("test_fraction", base.data.test_fraction)),
    )
    if data_cfg.source == DataSource.CSV and not data_cfg.csv_path:
        reader.fail("source", "data source 'csv' needs 'csv_path'")
    if not 0 < data_cfg.test_fraction < 1:
        reader.fail("test_fraction", "'test_fraction' must lie in (0, 1)")

    partition = document.get("partition", {})
    scheme = reader.build(
        "partition", PartitionScheme,
        kind=reader.build("kind", PartitionKind, value=partition.get("kind", base.partition.kind.value)),
        alpha=float(partition.get("alpha", base.partition.alpha)),
        shards_per_node=partition.get("shards_per_node", base.partition.shards_per_node),
    )

    attack = document.get("attack", {})
    attack_cfg = reader.build(
        "attack", AttackConfig,
        malicious_fraction=float(attack.get("malicious_fraction", base.attack.malicious_fraction)),
        noise_sigma=float(attack.get("noise_sigma", base.attack.noise_sigma)),
        collusion=attack.get("collusion", base.attack.collusion),
        suppress_honest=attack.get("suppress_honest", base.attack.suppress_honest),
        relative_sigma=attack.get("relative_sigma", base.attack.relative_sigma),
        seed=seed,
    )

    incentive = document.get("incentive", {})
    incentive_cfg = IncentiveConfig(
        reward_pool=incentive.get("reward_pool", base.incentive.reward_pool),
        permission_fee=incentive.get("permission_fee", base.incentive.permission_fee),
        treasury=incentive.get("treasury", base.incentive.treasury),
    )
    for key in ("reward_pool", "permission_fee", "treasury"):
        if getattr(incentive_cfg, key) < 0:
            reader.fail(key, f"'{key}' must be non-negative")

    genesis = document.get("genesis_committee", base.genesis_committee)
    if isinstance(genesis, str) and genesis != "honest":
        reader.fail("genesis_committee", "'genesis_committee' must be null, \"honest\" or a list of node ids")
    if isinstance(genesis, list):
        if not genesis or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 0 for n in genesis):
            reader.fail("genesis_committee", "'genesis_committee' ids must be non-negative integers")
        genesis = tuple(sorted(set(genesis)))

    baselines = document.get("baselines", list(base.baselines))
    if not all(isinstance(b, str) for b in baselines):
        reader.fail("baselines", "'baselines' must be a list of strings")

    return reader.build(
        "config", ExperimentConfig,
        name=document.get("name", base.name),
        seed=seed,
        n_nodes=document.get("n_nodes", base.n_nodes),
        active_fraction=float(document.get("active_fraction", base.active_fraction)),
        committee_fraction=float(document.get("committee_fraction", base.committee_fraction)),
        rounds=document.get("rounds", base.rounds),
        k_updates_per_round=document.get("k_updates_per_round", base.k_updates_per_round),
        aggregator=reader.build("aggregator", Aggregator, value=document.get("aggregator", base.aggregator.value)),
        election=reader.build(
            "variant", ElectionVariant,
            value=document.get("election", {}).get("variant", base.election.value),
        ),
        qualification=policy,
        train=train_cfg,
        data=data_cfg,
        partition=scheme,
        attack=attack_cfg,
        incentive=incentive_cfg,
        baselines=tuple(baselines),
        genesis_committee=genesis,
        retry_cap=document.get("retry_cap", base.retry_cap),
        prune_history=document.get("prune_history", base.prune_history),
    )


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Error reading config {path}: {e}")
        raise
    cfg = parse_experiment_config(text)
    logger.info(f"Loaded experiment config '{cfg.name}' from {path}")
    return cfg
