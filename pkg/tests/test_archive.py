import numpy as np
import pytest

from patchdelta.archive import ArchiveError, decode_archive, decode_bytes, encode_archive, encode_bytes
from patchdelta.codec import CompressConfig, DeltaArchive, compress_checkpoint
from patchdelta.metrics import archive_storage
from patchdelta.patches import BitPlan


@pytest.fixture(params=["dct", "sign", "svd"])
def archive(request, toy):
    base, ft = toy
    return compress_checkpoint(base, ft, CompressConfig(method=request.param, bit_plan=BitPlan.parse("8:0.1,3:0.4,2:0.5")))


def test_round_trip_is_byte_identical(archive, tmp_path):
    path = tmp_path / "a.ddc"
    encode_archive(archive, path)
    data = path.read_bytes()
    back = decode_archive(path)
    assert encode_bytes(back) == data
    assert [r.name for r in back.records] == [r.name for r in archive.records]
    assert back.config == archive.config


def test_layout_prefix(archive):
    data = encode_bytes(archive)
    assert data[:4] == b"DDC1"
    assert int.from_bytes(data[4:6], "little") == 1
    assert int.from_bytes(data[6:8], "little") == 0


def test_storage_report_matches_file_size(archive):
    assert archive_storage(archive).total_bytes == len(encode_bytes(archive))


def test_float16_ranges_round_trip(toy):
    base, ft = toy
    archive = compress_checkpoint(base, ft, CompressConfig(range_dtype="float16"))
    data = encode_bytes(archive)
    assert int.from_bytes(data[6:8], "little") == 1
    back = decode_bytes(data)
    assert back.config.range_dtype == "float16"
    assert encode_bytes(back) == data
    assert archive_storage(archive).total_bytes == len(data)


def test_bad_magic(archive):
    data = bytearray(encode_bytes(archive))
    data[:4] = b"NOPE"
    with pytest.raises(ArchiveError, match="magic"):
        decode_bytes(bytes(data))


def test_unknown_version(archive):
    data = bytearray(encode_bytes(archive))
    data[4] = 7
    with pytest.raises(ArchiveError, match="version"):
        decode_bytes(bytes(data))


def test_truncated_payload_names_tensor(archive):
    data = encode_bytes(archive)
    with pytest.raises(ArchiveError, match="layers.1.bias"):
        decode_bytes(data[:-3])


def test_truncated_mid_payload(toy):
    base, ft = toy
    archive = compress_checkpoint(base, ft, CompressConfig(passthrough=()))
    data = encode_bytes(archive)
    with pytest.raises(ArchiveError, match="truncated"):
        decode_bytes(data[: len(data) - 300])


def test_truncated_header(archive):
    data = encode_bytes(archive)
    with pytest.raises(ArchiveError):
        decode_bytes(data[:40])


def test_trailing_bytes_rejected(archive):
    with pytest.raises(ArchiveError, match="payload"):
        decode_bytes(encode_bytes(archive) + b"\0")


def test_empty_archive_refused(tmp_path):
    with pytest.raises(ArchiveError):
        encode_archive(DeltaArchive(CompressConfig(), []), tmp_path / "e.ddc")


def test_decoded_archive_reconstructs_identically(toy):
    from patchdelta.codec import apply_archive

    base, ft = toy
    archive = compress_checkpoint(base, ft, CompressConfig())
    a = apply_archive(base, archive)
    b = apply_archive(base, decode_bytes(encode_bytes(archive)))
    for name in a:
        np.testing.assert_array_equal(a[name].values, b[name].values)
