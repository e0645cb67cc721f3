import json

import numpy as np
import pytest

from storage.chain_store import ChainStore
from utils.errors import ChainFormatError


def test_round_trip_is_digest_identical(tmp_path, make_chain):
    chain = make_chain(3, 4)
    chain.append_update_block(4, chain.latest_model()[1].zeros_like(), 11, 0.625)
    store = ChainStore(tmp_path / "chain.jsonl")
    store.save(chain)

    loaded = store.load()
    assert loaded.k == 3
    assert len(loaded) == len(chain)
    assert [loaded.block_digest(i) for i in range(len(loaded))] == [chain.block_digest(i) for i in range(len(chain))]
    assert loaded.verify()
    np.testing.assert_array_equal(loaded.latest_model()[1].values, chain.latest_model()[1].values)
    assert loaded[-1].uploader == 11
    assert loaded[-1].score == 0.625


def test_one_json_object_per_block(tmp_path, make_chain):
    chain = make_chain(2, 1)
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(chain)

    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(records) == 4
    assert [r["index"] for r in records] == [0, 1, 2, 3]
    assert [r["kind"] for r in records] == ["model", "update", "update", "model"]
    assert set(records[1]["payload"]) == {"delta", "shape", "uploader", "score"}
    assert len(records[0]["prev_digest"]) == 64


def test_save_creates_parent_directory(tmp_path, make_chain):
    path = tmp_path / "nested" / "dir" / "chain.jsonl"
    ChainStore(path).save(make_chain(1, 1))
    assert path.exists()


def test_tampered_file_fails_verification(tmp_path, make_chain):
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(make_chain(2, 3))

    lines = path.read_text().splitlines()
    record = json.loads(lines[4])
    record["payload"]["delta"][0] += 1.0
    lines[4] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")

    result = ChainStore(path).load().verify()
    assert not result.valid
    assert result.first_bad_index == 4


def test_pruned_chain_round_trip(tmp_path, make_chain):
    chain = make_chain(2, 4).prune(3)
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(chain)

    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert all(r["payload"] is None for r in records[:9])
    assert records[9]["payload"] is not None

    loaded = ChainStore(path).load()
    assert loaded.pruned_before == 3
    assert loaded.verify()
    assert loaded.latest_model()[0] == 4


def test_malformed_line_reports_line_number(tmp_path, make_chain):
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(make_chain(1, 1))
    lines = path.read_text().splitlines()
    lines[1] = "{not json"
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(ChainFormatError) as excinfo:
        ChainStore(path).load()
    assert excinfo.value.line == 2
    assert str(excinfo.value).startswith("line 2:")


def test_inconsistent_k_is_rejected(tmp_path, make_chain):
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(make_chain(1, 1))
    lines = path.read_text().splitlines()
    record = json.loads(lines[2])
    record["k"] = 2
    lines[2] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(ChainFormatError) as excinfo:
        ChainStore(path).load()
    assert excinfo.value.line == 3


def test_short_digest_is_rejected(tmp_path, make_chain):
    path = tmp_path / "chain.jsonl"
    ChainStore(path).save(make_chain(1, 0))
    record = json.loads(path.read_text())
    record["payload_digest"] = "abcd"
    path.write_text(json.dumps(record) + "\n")

    with pytest.raises(ChainFormatError) as excinfo:
        ChainStore(path).load()
    assert excinfo.value.line == 1


def test_empty_file_is_rejected(tmp_path):
    path = tmp_path / "chain.jsonl"
    path.write_text("")
    with pytest.raises(ChainFormatError):
        ChainStore(path).load()


def test_missing_file_raises_os_error(tmp_path):
    with pytest.raises(OSError):
        ChainStore(tmp_path / "absent.jsonl").load()
