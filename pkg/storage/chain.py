"""Hash-linked, append-only storage of model blocks and update blocks.

Layout with k updates per round: the model of round t sits at index t*(k+1) and the
updates of round t occupy [t*(k+1)+1, (t+1)*(k+1)-1]. Block digests are SHA-256 over a
canonical binary header that embeds the payload digest, so pruning payloads keeps the
link structure verifiable.
"""
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Tuple, Union

from services.learning import ParamVector
from utils.errors import InvalidArgument, OutOfOrder, PrunedUnavailable, RoundFull, RoundIncomplete
from utils.helpers import ZERO_DIGEST, generate_digest, pack_float64_array, pack_uint64

logger = logging.getLogger(__name__)

NodeId = int
MAX_NODE_ID = 2 ** 64 - 1


class BlockKind(str, Enum):
    MODEL = "model"
    UPDATE = "update"


_KIND_TAG = {BlockKind.MODEL: b"\x00", BlockKind.UPDATE: b"\x01"}


@dataclass(frozen=True)
class BlockHeader:
    index: int
    round: int
    kind: BlockKind
    prev_digest: bytes
    payload_digest: bytes

    def canonical_bytes(self) -> bytes:
        return (
            pack_uint64(self.index, self.round)
            + _KIND_TAG[self.kind]
            + self.prev_digest
            + self.payload_digest
        )

    def digest(self) -> bytes:
        return generate_digest(self.canonical_bytes())


def model_payload_digest(model: ParamVector) -> bytes:
    return generate_digest(
        b"model",
        pack_uint64(*model.shape, len(model)),
        pack_float64_array(model.values),
    )


def update_payload_digest(delta: ParamVector, uploader: NodeId, score: float) -> bytes:
    return generate_digest(
        b"update",
        pack_uint64(*delta.shape, len(delta)),
        pack_float64_array(delta.values),
        pack_uint64(uploader),
        struct.pack("<d", score),
    )


@dataclass(eq=False)
class ModelBlock:
    header: BlockHeader
    model: Optional[ParamVector]  # None once pruned

    @property
    def pruned(self) -> bool:
        return self.model is None

    def payload_digest(self) -> bytes:
        return model_payload_digest(self.model)

    def stripped(self) -> "ModelBlock":
        return ModelBlock(self.header, None)


@dataclass(eq=False)
class UpdateBlock:
    header: BlockHeader
    delta: Optional[ParamVector]
    uploader: Optional[NodeId]
    score: Optional[float]

    @property
    def pruned(self) -> bool:
        return self.delta is None

    def payload_digest(self) -> bytes:
        return update_payload_digest(self.delta, self.uploader, self.score)

    def stripped(self) -> "UpdateBlock":
        return UpdateBlock(self.header, None, None, None)


Block = Union[ModelBlock, UpdateBlock]


@dataclass(frozen=True)
class VerifyResult:
    valid: bool
    first_bad_index: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


class Chain:
    """Append-only block sequence; single writer, any number of readers."""

    def __init__(self, k: int, blocks: List[Block], pruned_before: int = 0):
        if k < 1:
            raise InvalidArgument("k must be at least 1")
        self.k = k
        self._blocks = list(blocks)
        self.pruned_before = pruned_before

    @classmethod
    def create(cls, k: int, genesis_model: ParamVector) -> "Chain":
        if k < 1:
            raise InvalidArgument("k must be at least 1")
        if genesis_model is None or len(genesis_model) == 0:
            raise InvalidArgument("genesis model must be non-empty")
        header = BlockHeader(0, 0, BlockKind.MODEL, ZERO_DIGEST, model_payload_digest(genesis_model))
        return cls(k, [ModelBlock(header, genesis_model)])

    # round arithmetic

    def __len__(self) -> int:
        return len(self._blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self._blocks)

    def __getitem__(self, index: int) -> Block:
        return self._blocks[index]

    @property
    def blocks(self) -> Tuple[Block, ...]:
        return tuple(self._blocks)

    def model_index(self, round_number: int) -> int:
        return round_number * (self.k + 1)

    @property
    def current_round(self) -> int:
        return (len(self._blocks) - 1) // (self.k + 1)

    @property
    def updates_in_current_round(self) -> int:
        return len(self._blocks) - 1 - self.model_index(self.current_round)

    @property
    def is_round_complete(self) -> bool:
        return self.updates_in_current_round == self.k

    def block_digest(self, index: int) -> bytes:
        return self._blocks[index].header.digest()

    @property
    def tip_digest(self) -> bytes:
        return self.block_digest(len(self._blocks) - 1)

    # appends

    def append_update_block(self, round_number: int, delta: ParamVector, uploader: NodeId, score: float) -> int:
        if not 0.0 <= score <= 1.0:
            raise InvalidArgument(f"score {score} outside [0, 1]")
        if not 0 <= uploader <= MAX_NODE_ID:
            raise InvalidArgument(f"uploader id {uploader} is not a 64-bit node id")
        if round_number != self.current_round:
            raise OutOfOrder(f"update for round {round_number} while round {self.current_round} is open")
        if self.is_round_complete:
            raise RoundFull(f"round {round_number} already holds {self.k} updates")
        _, model = self.latest_model()
        if delta.shape != model.shape:
            raise InvalidArgument(f"delta shape {delta.shape} does not match model shape {model.shape}")

        index = len(self._blocks)
        header = BlockHeader(
            index, round_number, BlockKind.UPDATE, self.tip_digest,
            update_payload_digest(delta, uploader, score),
        )
        self._blocks.append(UpdateBlock(header, delta, uploader, float(score)))
        logger.debug(f"Update block {index} appended (round {round_number}, uploader {uploader}, score {score:.4f})")
        return index

    def append_model_block(self, round_number: int, model: ParamVector) -> int:
        if round_number != self.current_round + 1:
            raise OutOfOrder(f"model for round {round_number} while round {self.current_round} is open")
        if not self.is_round_complete:
            raise RoundIncomplete(
                f"round {self.current_round} holds {self.updates_in_current_round} of {self.k} updates"
            )
        _, previous = self.latest_model()
        if model.shape != previous.shape:
            raise InvalidArgument(f"model shape {model.shape} does not match {previous.shape}")

        index = len(self._blocks)
        header = BlockHeader(index, round_number, BlockKind.MODEL, self.tip_digest, model_payload_digest(model))
        self._blocks.append(ModelBlock(header, model))
        logger.info(f"Model block {index} appended for round {round_number}")
        return index

    # reads

    def latest_model(self) -> Tuple[int, ParamVector]:
        round_number = self.current_round
        return round_number, self._blocks[self.model_index(round_number)].model

    def updates_of_round(self, round_number: int) -> List[UpdateBlock]:
        if round_number < 0 or round_number > self.current_round:
            raise InvalidArgument(f"round {round_number} not on chain (latest {self.current_round})")
        if round_number < self.pruned_before:
            raise PrunedUnavailable(f"round {round_number} was pruned (retained from {self.pruned_before})")
        start = self.model_index(round_number) + 1
        stop = min(len(self._blocks), self.model_index(round_number + 1))
        return list(self._blocks[start:stop])

    def verify(self) -> VerifyResult:
        prev = ZERO_DIGEST
        retained_from = self.model_index(self.pruned_before)
        for position, block in enumerate(self._blocks):
            header = block.header
            expected_kind = BlockKind.MODEL if position % (self.k + 1) == 0 else BlockKind.UPDATE
            if header.index != position or header.round != position // (self.k + 1) or header.kind != expected_kind:
                return VerifyResult(False, position, "layout")
            if header.prev_digest != prev:
                return VerifyResult(False, position, "prev-digest")
            if block.pruned:
                if position >= retained_from:
                    return VerifyResult(False, position, "missing-payload")
            else:
                if isinstance(block, UpdateBlock) != (header.kind == BlockKind.UPDATE):
                    return VerifyResult(False, position, "kind")
                if block.payload_digest() != header.payload_digest:
                    return VerifyResult(False, position, "payload-digest")
                if isinstance(block, UpdateBlock) and not 0.0 <= block.score <= 1.0:
                    return VerifyResult(False, position, "score")
            prev = header.digest()
        return VerifyResult(True)

    # history management

    def rollback(self, to_round: int) -> "Chain":
        """Truncate so the model block of `to_round` is the tip."""
        if to_round < 0 or to_round > self.current_round:
            raise InvalidArgument(f"cannot roll back to round {to_round} (latest {self.current_round})")
        if to_round < self.pruned_before:
            raise PrunedUnavailable(f"round {to_round} was pruned (retained from {self.pruned_before})")
        dropped = len(self._blocks) - (self.model_index(to_round) + 1)
        del self._blocks[self.model_index(to_round) + 1:]
        if dropped:
            logger.info(f"Rolled back to round {to_round}, dropped {dropped} blocks")
        return self

    def prune(self, keep_from_round: int) -> "Chain":
        """Drop payloads before the model block of `keep_from_round`; headers stay."""
        if keep_from_round < 0 or keep_from_round > self.current_round:
            raise InvalidArgument(f"cannot prune from round {keep_from_round} (latest {self.current_round})")
        cut = self.model_index(keep_from_round)
        for position in range(cut):
            if not self._blocks[position].pruned:
                self._blocks[position] = self._blocks[position].stripped()
        if keep_from_round > self.pruned_before:
            self.pruned_before = keep_from_round
            logger.info(f"Pruned payloads before round {keep_from_round} (block {cut})")
        return self

    def copy(self) -> "Chain":
        return Chain(self.k, list(self._blocks), self.pruned_before)


def init_chain(k: int, genesis_model: ParamVector) -> Chain:
    return Chain.create(k, genesis_model)


def verify_chain(chain: Chain) -> VerifyResult:
    return chain.verify()
