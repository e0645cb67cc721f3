import json
import logging
import os
from pathlib import Path
from typing import Any, Dict

from services.learning import ParamVector
from storage.chain import BlockHeader, BlockKind, Chain, ModelBlock, UpdateBlock
from utils.errors import ChainFormatError, InvalidArgument

logger = logging.getLogger(__name__)


class ChainStore:
    """Persists chains as JSON lines, one block per line.

    Each line holds {index, round, kind, k, prev_digest, payload_digest, payload}; payload
    is {model, shape} or {delta, shape, uploader, score}, or null for pruned blocks.
    Digests are hex and are never recomputed on load, so a tampered file stays detectable
    by `Chain.verify`.
    """

    def __init__(self, path):
        self.path = Path(path)

    def _ensure_directory(self):
        """Ensure the chain file's directory exists."""
        if self.path.parent and str(self.path.parent) not in ("", "."):
            os.makedirs(self.path.parent, exist_ok=True)

    def save(self, chain: Chain):
        """Write the whole chain, replacing any previous file."""
        self._ensure_directory()
        try:
            with self.path.open("w", encoding="utf-8", newline="\n") as handle:
                for block in chain:
                    handle.write(json.dumps(self._block_to_record(block, chain.k), separators=(",", ":")))
                    handle.write("\n")
            logger.info(f"Chain with {len(chain)} blocks written to {self.path}")
        except OSError as e:
            logger.error(f"Error writing chain file {self.path}: {e}")
            raise

    def load(self) -> Chain:
        """Read a chain file; structural problems raise ChainFormatError with the line number."""
        try:
            text = self.path.read_text(encoding="utf-8")
        except OSError as e:
            logger.error(f"Error reading chain file {self.path}: {e}")
            raise

        blocks = []
        k = None
        for line_number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                block, block_k = self._record_to_block(record)
            except ChainFormatError as e:
                raise ChainFormatError(str(e), line_number)
            except (ValueError, KeyError, TypeError) as e:
                raise ChainFormatError(f"malformed block record: {e}", line_number)
            if k is None:
                k = block_k
            elif block_k != k:
                raise ChainFormatError(f"k changes from {k} to {block_k}", line_number)
            blocks.append(block)

        if not blocks:
            raise ChainFormatError("chain file holds no blocks")
        try:
            chain = Chain(k, blocks, pruned_before=self._retained_round(blocks, k))
        except InvalidArgument as e:
            raise ChainFormatError(str(e))
        logger.info(f"Loaded chain with {len(chain)} blocks from {self.path}")
        return chain

    @staticmethod
    def _retained_round(blocks, k: int) -> int:
        for position, block in enumerate(blocks):
            if not block.pruned:
                return position // (k + 1)
        return 0

    @staticmethod
    def _block_to_record(block, k: int) -> Dict[str, Any]:
        header = block.header
        record = {
            "index": header.index,
            "round": header.round,
            "kind": header.kind.value,
            "k": k,
            "prev_digest": header.prev_digest.hex(),
            "payload_digest": header.payload_digest.hex(),
            "payload": None,
        }
        if block.pruned:
            return record
        if isinstance(block, ModelBlock):
            record["payload"] = {"model": block.model.to_list(), "shape": list(block.model.shape)}
        else:
            record["payload"] = {
                "delta": block.delta.to_list(),
                "shape": list(block.delta.shape),
                "uploader": block.uploader,
                "score": block.score,
            }
        return record

    @staticmethod
    def _record_to_block(record: Dict[str, Any]):
        kind = BlockKind(record["kind"])
        header = BlockHeader(
            index=int(record["index"]),
            round=int(record["round"]),
            kind=kind,
            prev_digest=_digest_from_hex(record["prev_digest"]),
            payload_digest=_digest_from_hex(record["payload_digest"]),
        )
        payload = record["payload"]
        k = int(record["k"])
        if kind is BlockKind.MODEL:
            if payload is None:
                return ModelBlock(header, None), k
            return ModelBlock(header, ParamVector(payload["model"], tuple(payload["shape"]))), k
        if payload is None:
            return UpdateBlock(header, None, None, None), k
        return UpdateBlock(
            header,
            ParamVector(payload["delta"], tuple(payload["shape"])),
            int(payload["uploader"]),
            float(payload["score"]),
        ), k


def _digest_from_hex(value: str) -> bytes:
    digest = bytes.fromhex(value)
    if len(digest) != 32:
        raise ChainFormatError(f"digest must be 32 bytes, got {len(digest)}")
    return digest
