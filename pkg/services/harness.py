"""Experiment orchestration.

Runs the BFLC round lifecycle and the basic-FL, CwMed and stand-alone baselines over
the same partitions and seeds, and writes one metrics CSV per framework plus the BFLC
chain file and ledger snapshot.
"""
import csv
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from services.adversary import collusion_score, poison_delta
from services.community import Community
from services.consensus import (
    CommitteeState,
    ElectionStrategy,
    SubmissionStatus,
    elect_committee,
    finalize_round,
    open_round,
    submit_update,
)
from services.datasets import generate_synthetic, load_dataset_csv, partition_data, split_holdout
from services.experiment import DataSource, ExperimentConfig
from services.learning import Aggregator, Dataset, ParamVector, aggregate, evaluate, init_model, local_train
from storage.chain import Chain, NodeId, init_chain
from storage.chain_store import ChainStore
from utils.errors import ElectionFailure, ExperimentFailure, RoundAborted
from utils.helpers import derive_seed, format_ids

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "round", "global_accuracy", "accepted", "rejected", "poisoned_accepted", "committee",
    "P", "Q", "validations", "broadcast_equiv", "attempts",
]


@dataclass(frozen=True)
class RoundCostReport:
    """Consensus cost of one round: P trainers validated by Q members."""

    P: int
    Q: int
    validations: int

    @property
    def broadcast_equiv(self) -> int:
        return (self.P + self.Q) ** 2

    @property
    def committee_bound(self) -> int:
        return self.P * self.Q


@dataclass(frozen=True)
class MetricsRow:
    round: int
    global_accuracy: float
    accepted: int
    rejected: int
    poisoned_accepted: int
    committee: Tuple[NodeId, ...]
    cost: RoundCostReport
    attempts: int = 1

    def as_csv_row(self) -> list:
        return [
            self.round,
            f"{self.global_accuracy:.6f}",
            self.accepted,
            self.rejected,
            self.poisoned_accepted,
            format_ids(self.committee),
            self.cost.P,
            self.cost.Q,
            self.cost.validations,
            self.cost.broadcast_equiv,
            self.attempts,
        ]


@dataclass
class BFLCState:
    """Full BFLC system state between rounds."""

    chain: Chain
    committee: FrozenSet[NodeId]
    community: Community
    completed_rounds: int = 0
    history: List[FrozenSet[NodeId]] = field(default_factory=list)


class ExperimentRunner:
    """Builds data, partitions and seeds once and runs every framework on them."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.train_data, self.test_data = self._load_data()
        self.node_ids: List[NodeId] = list(range(cfg.n_nodes))
        self.node_data: Dict[NodeId, Dataset] = dict(zip(
            self.node_ids,
            partition_data(self.train_data, cfg.n_nodes, cfg.partition, derive_seed(cfg.seed, "partition")),
        ))
        self.malicious: FrozenSet[NodeId] = self._pick_malicious()
        self.state: Optional[BFLCState] = None

        self.n_active, self.committee_size, self.n_trainers, self.k = cfg.round_sizes()

        self.shape = (self.train_data.n_features, self.train_data.n_classes)
        self.genesis_model = init_model(derive_seed(cfg.seed, "init"), self.shape)
        logger.info(
            f"Experiment '{cfg.name}': {cfg.n_nodes} nodes, {self.n_active} active, "
            f"committee {self.committee_size}, k={self.k}, {len(self.malicious)} malicious"
        )

    # setup

    def _load_data(self) -> Tuple[Dataset, Dataset]:
        data_cfg = self.cfg.data
        if data_cfg.source == DataSource.CSV:
            data = load_dataset_csv(data_cfg.csv_path, data_cfg.n_classes)
        else:
            data = generate_synthetic(
                derive_seed(self.cfg.seed, "data"),
                data_cfg.n_samples, data_cfg.n_features, data_cfg.n_classes, data_cfg.class_separation,
            )
        return split_holdout(data, data_cfg.test_fraction, derive_seed(self.cfg.seed, "holdout"))

    def _pick_malicious(self) -> FrozenSet[NodeId]:
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "malicious"))
        return frozenset(int(n) for n in rng.choice(self.node_ids, size=self.cfg.malicious_count, replace=False))

    def _genesis_committee(self) -> FrozenSet[NodeId]:
        genesis = self.cfg.genesis_committee
        if isinstance(genesis, tuple):
            return frozenset(genesis)
        pool = self.node_ids
        if genesis == "honest":
            pool = [n for n in self.node_ids if n not in self.malicious]
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "genesis"))
        return frozenset(int(n) for n in rng.choice(pool, size=self.committee_size, replace=False))

    def initial_state(self) -> BFLCState:
        incentive = self.cfg.incentive
        community = Community.create(self.node_ids, incentive.permission_fee, incentive.treasury)
        committee = self._genesis_committee()
        return BFLCState(init_chain(self.k, self.genesis_model), committee, community, history=[committee])

    # shared round pieces

    def _train_cfg(self, framework: str, round_number: int, attempt: int, node: NodeId):
        return replace(self.cfg.train, seed=derive_seed(self.cfg.seed, "train", framework, round_number, attempt, node))

    def _local_deltas(self, framework: str, global_model: ParamVector, trainers: Sequence[NodeId],
                      round_number: int, attempt: int = 0) -> Dict[NodeId, ParamVector]:
        """Train every node, then let malicious trainers poison their deltas."""
        deltas = {
            node: local_train(global_model, self.node_data[node], self._train_cfg(framework, round_number, attempt, node))
            for node in trainers
        }
        attackers = [n for n in trainers if n in self.malicious]
        if not attackers:
            return deltas

        attack = self.cfg.attack
        sigma = attack.noise_sigma
        if attack.relative_sigma:
            honest = [deltas[n].values for n in trainers if n not in self.malicious]
            if not honest:
                honest = [d.values for d in deltas.values()]
            sigma *= float(np.median(np.abs(np.concatenate(honest))))
        for node in attackers:
            seed = derive_seed(self.cfg.seed, "poison", framework, round_number, attempt, node)
            deltas[node] = poison_delta(deltas[node], sigma, seed)
        return deltas

    def _sample(self, label: str, pool: Sequence[NodeId], size: int, *path) -> List[NodeId]:
        rng = np.random.default_rng(derive_seed(self.cfg.seed, label, *path))
        size = min(size, len(pool))
        return sorted(int(n) for n in rng.choice(sorted(pool), size=size, replace=False))

    # BFLC

    def _score_override(self, round_number: int, attempt: int):
        attack = self.cfg.attack
        if not attack.collusion or not self.malicious:
            return None

        def override(member: NodeId, uploader: NodeId, honest_score: float) -> float:
            if member not in self.malicious:
                return honest_score
            seed = derive_seed(self.cfg.seed, "collude", round_number, attempt, member, uploader)
            return collusion_score(uploader in self.malicious, honest_score, seed, attack.suppress_honest)

        return override

    def run_round(self, state: BFLCState) -> Tuple[BFLCState, MetricsRow]:
        """One BFLC round; aborted attempts are rolled back and retried with a fresh active sample."""
        round_number = state.chain.current_round
        for attempt in range(self.cfg.retry_cap):
            try:
                row = self._attempt_round(state, round_number, attempt)
                return state, row
            except RoundAborted as e:
                state.chain.rollback(round_number)
                logger.warning(f"Round {round_number} attempt {attempt + 1} aborted: {e}")
        raise ExperimentFailure(f"round {round_number} aborted {self.cfg.retry_cap} times")

    def _attempt_round(self, state: BFLCState, round_number: int, attempt: int) -> MetricsRow:
        chain, committee = state.chain, state.committee
        others = [n for n in sorted(state.community.members) if n not in committee]
        trainers = self._sample("active", others, self.n_active - len(committee), round_number, attempt)
        if set(trainers) & committee:
            raise ExperimentFailure(f"round {round_number}: committee member in the training set")

        _, global_model = chain.latest_model()
        deltas = self._local_deltas("bflc", global_model, trainers, round_number, attempt)
        round_state = open_round(
            chain, committee, self.node_data, self.cfg.qualification,
            self._score_override(round_number, attempt),
        )
        for node in trainers:
            result = submit_update(round_state, chain, node, deltas[node])
            if result.status == SubmissionStatus.ROUND_CLOSED:
                break
        if not round_state.closed:
            raise RoundAborted(
                f"{len(round_state.pending)} of {self.k} updates qualified among {len(trainers)} submitters"
            )

        new_global = finalize_round(round_state, chain, self.cfg.aggregator)
        next_committee = self._elect(round_state, trainers, committee, round_number)
        if next_committee & committee:
            raise ExperimentFailure(f"round {round_number}: consecutive committees overlap")
        state.community.distribute_rewards(round_state.accepted_scores, self.cfg.incentive.reward_pool)
        if self.cfg.prune_history:
            chain.prune(chain.current_round)

        state.committee = next_committee
        state.history.append(next_committee)
        state.completed_rounds += 1

        accepted = round_state.accepted_scores
        rejected = len(round_state.rejected)
        cost = RoundCostReport(len(trainers), len(committee), round_state.validations)
        return MetricsRow(
            round=round_number,
            global_accuracy=evaluate(new_global, self.test_data),
            accepted=len(accepted),
            rejected=rejected,
            poisoned_accepted=sum(1 for n in accepted if n in self.malicious),
            committee=tuple(sorted(committee)),
            cost=cost,
            attempts=attempt + 1,
        )

    def _elect(self, round_state: CommitteeState, trainers: Sequence[NodeId],
               committee: FrozenSet[NodeId], round_number: int) -> FrozenSet[NodeId]:
        strategy = ElectionStrategy(
            self.cfg.election, self.committee_size, derive_seed(self.cfg.seed, "elect", round_number)
        )
        try:
            return elect_committee(round_state.accepted_scores, strategy, committee)
        except ElectionFailure as e:
            logger.warning(f"Round {round_number}: {e}; widening candidates to all submitters")

        candidates = {n: 0.0 for n in trainers}
        candidates.update(round_state.submitted_scores)
        try:
            return elect_committee(candidates, strategy, committee)
        except ElectionFailure:
            logger.warning(f"Round {round_number}: widening candidates to the whole community")
        for node in self._community_fill(candidates, committee, round_number):
            candidates[node] = 0.0
        try:
            return elect_committee(candidates, strategy, committee)
        except ElectionFailure as e:
            raise ExperimentFailure(f"round {round_number}: {e}")

    def _community_fill(self, candidates, committee, round_number) -> List[NodeId]:
        pool = [n for n in self.node_ids if n not in candidates and n not in committee]
        return self._sample("fill", pool, self.committee_size, round_number)

    def failback(self, state: BFLCState, to_round: int) -> BFLCState:
        """Roll the chain back to an earlier round's model (recovery after an attack)."""
        state.chain.rollback(to_round)
        logger.warning(f"Failback to round {to_round}")
        return state

    def run_bflc(self) -> Tuple[BFLCState, List[MetricsRow]]:
        state = self.initial_state()
        rows = []
        for _ in range(self.cfg.rounds):
            state, row = self.run_round(state)
            rows.append(row)
            logger.info(f"BFLC round {row.round}: accuracy {row.global_accuracy:.4f}")
        return state, rows

    # baselines

    def run_federated_baseline(self, aggregator: Aggregator) -> List[MetricsRow]:
        """No committee: every active node trains and all updates are aggregated."""
        global_model = self.genesis_model
        rows = []
        for round_number in range(self.cfg.rounds):
            active = self._sample("baseline-active", self.node_ids, self.n_active, round_number)
            deltas = self._local_deltas("baseline", global_model, active, round_number)
            global_model = aggregate(aggregator, global_model, [deltas[n] for n in active])
            rows.append(MetricsRow(
                round=round_number,
                global_accuracy=evaluate(global_model, self.test_data),
                accepted=len(active),
                rejected=0,
                poisoned_accepted=sum(1 for n in active if n in self.malicious),
                committee=(),
                cost=RoundCostReport(len(active), 0, 0),
            ))
        return rows

    def run_standalone(self) -> List[MetricsRow]:
        """Centralized training on the union of all node data."""
        union = Dataset.concat([self.node_data[n] for n in self.node_ids])
        model = self.genesis_model
        rows = []
        for round_number in range(self.cfg.rounds):
            model = model + local_train(model, union, self._train_cfg("standalone", round_number, 0, 0))
            rows.append(MetricsRow(
                round=round_number,
                global_accuracy=evaluate(model, self.test_data),
                accepted=0,
                rejected=0,
                poisoned_accepted=0,
                committee=(),
                cost=RoundCostReport(0, 0, 0),
            ))
        return rows

    def run(self) -> Dict[str, List[MetricsRow]]:
        results: Dict[str, List[MetricsRow]] = {}
        self.state, results["bflc"] = self.run_bflc()
        if "basic_fl" in self.cfg.baselines:
            results["basic_fl"] = self.run_federated_baseline(Aggregator.MEAN)
        if "cwmed" in self.cfg.baselines:
            results["cwmed"] = self.run_federated_baseline(Aggregator.CWMED)
        if "standalone" in self.cfg.baselines:
            results["standalone"] = self.run_standalone()
        return results


def summary(results: Dict[str, List[MetricsRow]]) -> Dict[str, float]:
    """Final test accuracy per framework."""
    return {name: rows[-1].global_accuracy for name, rows in results.items() if rows}


def write_metrics_csv(path, rows: Sequence[MetricsRow]):
    path = Path(path)
    try:
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(METRICS_COLUMNS)
            for row in rows:
                writer.writerow(row.as_csv_row())
    except OSError as e:
        logger.error(f"Error writing metrics {path}: {e}")
        raise


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, List[MetricsRow]]:
    """Run BFLC and the configured baselines; write CSVs, chain and ledger when out_dir is given."""
    runner = ExperimentRunner(cfg)
    results = runner.run()
    if out_dir is not None:
        out = Path(out_dir)
        os.makedirs(out, exist_ok=True)
        for name, rows in results.items():
            write_metrics_csv(out / f"{name}_metrics.csv", rows)
        ChainStore(out / "bflc_chain.jsonl").save(runner.state.chain)
        runner.state.community.export_csv(out / "ledger.csv")
        logger.info(f"Experiment '{cfg.name}' written to {out}")
    return results
