import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Set

from storage.chain import NodeId
from utils.errors import AdmissionDenied, InvalidArgument, NotFound, PaymentRequired

logger = logging.getLogger(__name__)


@dataclass
class Community:
    """Training community with blacklist-mode admission and a token ledger.

    Permission fees are paid into the managers' treasury and rewards are paid out of it,
    so the sum of balances plus the treasury only changes when tokens enter through join.
    """

    members: Set[NodeId] = field(default_factory=set)
    managers: Set[NodeId] = field(default_factory=set)
    blacklist: Set[NodeId] = field(default_factory=set)
    ledger: Dict[NodeId, int] = field(default_factory=dict)
    permission_fee: int = 0
    treasury: int = 0
    joined_round: Dict[NodeId, int] = field(default_factory=dict)

    @classmethod
    def create(cls, initial_nodes: Iterable[NodeId], permission_fee: int = 0, treasury: int = 0) -> "Community":
        """The initial nodes form the community and act as its managers."""
        if permission_fee < 0 or treasury < 0:
            raise InvalidArgument("permission_fee and treasury must be non-negative")
        nodes = set(initial_nodes)
        return cls(
            members=set(nodes),
            managers=set(nodes),
            ledger={node: 0 for node in nodes},
            permission_fee=permission_fee,
            treasury=treasury,
            joined_round={node: 0 for node in nodes},
        )

    @property
    def total_tokens(self) -> int:
        return sum(self.ledger.values()) + self.treasury

    def join(self, node: NodeId, fee_paid: int, round_number: int = 0) -> "Community":
        """Admit a node that is not blacklisted and pays at least the permission fee.

        The fee goes to the treasury; any overpayment is credited to the node's balance.
        """
        if node in self.members:
            raise InvalidArgument(f"node {node} is already a member")
        if node in self.blacklist:
            logger.warning(f"Admission denied for blacklisted node {node}")
            raise AdmissionDenied(f"node {node} is blacklisted")
        if fee_paid < self.permission_fee:
            raise PaymentRequired(f"node {node} paid {fee_paid}, permission fee is {self.permission_fee}")

        self.members.add(node)
        self.treasury += self.permission_fee
        self.ledger[node] = self.ledger.get(node, 0) + fee_paid - self.permission_fee
        self.joined_round[node] = round_number
        logger.info(f"Node {node} joined in round {round_number}")
        return self

    def expel(self, node: NodeId, reason: str) -> "Community":
        if node not in self.members:
            raise NotFound(f"node {node} is not a member")
        self.members.discard(node)
        self.managers.discard(node)
        self.blacklist.add(node)
        logger.info(f"Node {node} expelled: {reason}")
        return self

    def distribute_rewards(self, round_scores: Mapping[NodeId, float], pool: int) -> "Community":
        """Profit sharing by contribution.

        Node i receives floor(pool * score_i / sum(scores)); the remainder goes to the
        highest scorer, ties to the lowest node id.
        """
        if pool < 0:
            raise InvalidArgument("reward pool must be non-negative")
        if any(score < 0 for score in round_scores.values()):
            raise InvalidArgument("scores must be non-negative")
        total = sum(round_scores.values())
        if pool == 0 or total <= 0:
            return self
        if pool > self.treasury:
            logger.warning(f"Reward pool {pool} capped at treasury balance {self.treasury}")
            pool = self.treasury
            if pool == 0:
                return self

        payouts = {node: int(pool * score // total) for node, score in round_scores.items()}
        remainder = pool - sum(payouts.values())
        top = min(round_scores, key=lambda node: (-round_scores[node], node))
        payouts[top] += remainder

        for node, amount in payouts.items():
            self.ledger[node] = self.ledger.get(node, 0) + amount
        self.treasury -= pool
        logger.debug(f"Distributed {pool} tokens over {len(payouts)} nodes")
        return self

    def export_csv(self, path):
        """Ledger snapshot: node_id, balance, joined_round, blacklisted."""
        path = Path(path)
        os.makedirs(path.parent, exist_ok=True)
        try:
            with path.open("w", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(["node_id", "balance", "joined_round", "blacklisted"])
                for node in sorted(set(self.ledger) | self.blacklist):
                    writer.writerow([
                        node,
                        self.ledger.get(node, 0),
                        self.joined_round.get(node, ""),
                        int(node in self.blacklist),
                    ])
        except OSError as e:
            logger.error(f"Error writing ledger {path}: {e}")
            raise
