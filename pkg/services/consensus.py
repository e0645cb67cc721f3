"""Committee Consensus Mechanism.

A committee scores each submitted update against its members' local data, packs
qualified updates onto the chain until k are accepted, aggregates them into the next
round's model and hands over to a newly elected committee drawn from the round's
accepted uploaders.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_RHO, DEFAULT_THETA
from services.learning import Aggregator, Dataset, ParamVector, aggregate, evaluate
from storage.chain import Chain, NodeId
from utils.errors import DuplicateSubmission, ElectionFailure, Forbidden, InvalidArgument, RoundIncomplete
from utils.helpers import median_of

logger = logging.getLogger(__name__)

# (member, uploader, honest_score) -> score the member actually reports
ScoreOverride = Callable[[NodeId, NodeId, float], float]


class QualificationMode(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class QualificationPolicy:
    """AbsoluteThreshold(theta): score >= theta. RelativeToGlobal(rho): score >= rho * global score.

    `floor` is an optional absolute lower bound applied in the relative mode.
    """

    mode: QualificationMode = QualificationMode.RELATIVE
    theta: float = DEFAULT_THETA
    rho: float = DEFAULT_RHO
    floor: float = 0.0

    def __post_init__(self):
        if not 0 < self.theta <= 1 or not 0 < self.rho <= 1:
            raise InvalidArgument("theta and rho must lie in (0, 1]")
        if not 0 <= self.floor <= 1:
            raise InvalidArgument("floor must lie in [0, 1]")


class ElectionVariant(str, Enum):
    RANDOM = "random"
    BY_SCORE = "by_score"


@dataclass(frozen=True)
class ElectionStrategy:
    variant: ElectionVariant = ElectionVariant.BY_SCORE
    committee_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.committee_size < 1:
            raise InvalidArgument("committee_size must be at least 1")


@dataclass
class PendingUpdate:
    uploader: NodeId
    delta: ParamVector
    member_scores: List[float]
    median_score: float
    index: Optional[int] = None


class SubmissionStatus(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    ROUND_CLOSED = "round_closed"


@dataclass(frozen=True)
class SubmissionResult:
    status: SubmissionStatus
    index: Optional[int] = None
    median_score: Optional[float] = None


@dataclass
class CommitteeState:
    """One round's committee; frozen for the whole round."""

    members: Tuple[NodeId, ...]
    round: int
    policy: QualificationPolicy
    member_data: Dict[NodeId, Dataset]
    global_model: ParamVector
    global_score: float
    k: int
    pending: List[PendingUpdate] = field(default_factory=list)
    rejected: List[PendingUpdate] = field(default_factory=list)
    validations: int = 0
    score_override: Optional[ScoreOverride] = None

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidArgument("a committee needs at least one member")
        missing = [m for m in self.members if m not in self.member_data]
        if missing:
            raise InvalidArgument(f"no validation data for committee members {missing}")

    @property
    def closed(self) -> bool:
        return len(self.pending) >= self.k

    @property
    def accepted_scores(self) -> Dict[NodeId, float]:
        return {p.uploader: p.median_score for p in self.pending}

    @property
    def submitted_scores(self) -> Dict[NodeId, float]:
        scores = {p.uploader: p.median_score for p in self.rejected}
        scores.update(self.accepted_scores)
        return scores


def score_update(member_data: Sequence[Dataset], global_model: ParamVector, delta: ParamVector) -> Tuple[List[float], float]:
    """Each member validates global + delta on its own data; the median is the score."""
    if not member_data:
        raise InvalidArgument("scoring needs at least one committee member")
    candidate = global_model + delta
    member_scores = [evaluate(candidate, data) for data in member_data]
    return member_scores, median_of(member_scores)


def qualify(median_score: float, policy: QualificationPolicy, global_score: float) -> bool:
    if policy.mode == QualificationMode.ABSOLUTE:
        return median_score >= policy.theta
    return median_score >= max(policy.rho * global_score, policy.floor)


def open_round(
    chain: Chain,
    members: Iterable[NodeId],
    member_data: Mapping[NodeId, Dataset],
    policy: QualificationPolicy,
    score_override: Optional[ScoreOverride] = None,
) -> CommitteeState:
    """Committee state for the chain's open round, with the committee-median score of the global model."""
    members = tuple(sorted(members))
    round_number, global_model = chain.latest_model()
    data = {m: member_data[m] for m in members if m in member_data}
    global_score = median_of([evaluate(global_model, data[m]) for m in members if m in data]) if data else 0.0
    state = CommitteeState(
        members=members,
        round=round_number,
        policy=policy,
        member_data=data,
        global_model=global_model,
        global_score=global_score,
        k=chain.k,
        score_override=score_override,
    )
    logger.debug(f"Round {round_number} opened: committee {list(members)}, global score {global_score:.4f}")
    return state


def submit_update(state: CommitteeState, chain: Chain, uploader: NodeId, delta: ParamVector) -> SubmissionResult:
    """Score an update, pack it on-chain if it qualifies and the round still has room."""
    if uploader in state.members:
        raise Forbidden(f"committee member {uploader} cannot submit updates in round {state.round}")
    if state.closed:
        return SubmissionResult(SubmissionStatus.ROUND_CLOSED)
    if uploader in state.accepted_scores:
        raise DuplicateSubmission(f"node {uploader} already has an accepted update in round {state.round}")

    member_scores, _ = score_update([state.member_data[m] for m in state.members], state.global_model, delta)
    state.validations += len(state.members)
    if state.score_override is not None:
        member_scores = [
            state.score_override(member, uploader, score)
            for member, score in zip(state.members, member_scores)
        ]
    median_score = median_of(member_scores)
    pending = PendingUpdate(uploader, delta, member_scores, median_score)

    if not qualify(median_score, state.policy, state.global_score):
        state.rejected.append(pending)
        logger.debug(f"Round {state.round}: update from {uploader} rejected (score {median_score:.4f})")
        return SubmissionResult(SubmissionStatus.REJECTED, median_score=median_score)

    pending.index = chain.append_update_block(state.round, delta, uploader, median_score)
    state.pending.append(pending)
    logger.debug(f"Round {state.round}: update from {uploader} accepted at block {pending.index}")
    return SubmissionResult(SubmissionStatus.ACCEPTED, index=pending.index, median_score=median_score)


def finalize_round(state: CommitteeState, chain: Chain, aggregator: Aggregator = Aggregator.MEAN) -> ParamVector:
    """Aggregate the round's k on-chain updates and append the next model block."""
    updates = chain.updates_of_round(state.round)
    if len(updates) < chain.k:
        raise RoundIncomplete(f"round {state.round} holds {len(updates)} of {chain.k} accepted updates")
    new_global = aggregate(aggregator, state.global_model, [u.delta for u in updates])
    chain.append_model_block(state.round + 1, new_global)
    logger.info(f"Round {state.round} finalized with {len(updates)} updates ({Aggregator(aggregator).value})")
    return new_global


def elect_committee(
    round_scores: Mapping[NodeId, float],
    strategy: ElectionStrategy,
    prev_members: Iterable[NodeId] = (),
) -> frozenset:
    """Next committee from this round's scored uploaders, disjoint from the current one."""
    prev = set(prev_members)
    candidates = sorted(node for node in round_scores if node not in prev)
    if len(candidates) < strategy.committee_size:
        raise ElectionFailure(
            f"{len(candidates)} candidates for a committee of {strategy.committee_size}"
        )

    if strategy.variant == ElectionVariant.RANDOM:
        rng = np.random.default_rng(strategy.seed)
        chosen = rng.choice(len(candidates), size=strategy.committee_size, replace=False)
        elected = frozenset(candidates[i] for i in chosen)
    else:
        ranked = sorted(candidates, key=lambda node: (-round_scores[node], node))
        elected = frozenset(ranked[: strategy.committee_size])
    logger.info(f"Elected committee {sorted(elected)} ({ElectionVariant(strategy.variant).value})")
    return elected
