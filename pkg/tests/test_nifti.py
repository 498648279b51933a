import os

import numpy as np
import pytest

from fcreg.pipeline import nifti
from fcreg.pipeline.nifti import (
    BadMagicError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    encode_nifti,
    read_header,
    read_nifti,
    write_nifti,
)
from fcreg.volume import DisplacementField, LabelVolume, ScalarVolume, TimeSeriesVolume


def f32(rng, shape):
    return rng.standard_normal(shape).astype(np.float32).astype(np.float64)


def raw_file(path, data, datatype=4, slope=0.0, inter=0.0, order="<", magic=b"n+1"):
    hdr = np.zeros((), dtype=nifti.HEADER_DTYPE.newbyteorder(order))
    hdr["sizeof_hdr"] = 348
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1:data.ndim + 1] = data.shape
    hdr["dim"] = dim
    hdr["datatype"] = datatype
    hdr["pixdim"] = [1, 2, 2, 2, 1, 1, 1, 1]
    hdr["vox_offset"] = 352
    hdr["scl_slope"] = slope
    hdr["scl_inter"] = inter
    hdr["magic"] = magic
    payload = data.astype(np.dtype(data.dtype).newbyteorder(order)).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes() + b"\0" * 4 + payload)


@pytest.mark.parametrize("make", [
    lambda r: ScalarVolume(f32(r, (4, 5, 6)), (1.0, 2.0, 3.0)),
    lambda r: TimeSeriesVolume(f32(r, (3, 4, 5, 7)), (3.0, 3.0, 3.0)),
    lambda r: DisplacementField(f32(r, (4, 3, 2, 3))),
    lambda r: LabelVolume(r.integers(0, 9, (5, 4, 3))),
])
def test_round_trip_bit_exact(tmp_path, make):
    vol = make(np.random.default_rng(0))
    p = tmp_path / "v.nii"
    write_nifti(vol, p)
    back = read_nifti(p)
    assert type(back) is type(vol)
    for attr in ("data", "vectors", "labels"):
        if hasattr(vol, attr):
            np.testing.assert_array_equal(getattr(back, attr), getattr(vol, attr))
    assert back.spacing == vol.spacing
    write_nifti(back, tmp_path / "w.nii")
    assert (tmp_path / "w.nii").read_bytes() == p.read_bytes()


def test_layout(tmp_path):
    p = tmp_path / "big.nii"
    write_nifti(ScalarVolume(np.zeros((48, 64, 64))), p)
    assert os.path.getsize(p) == 352 + 48 * 64 * 64 * 4
    hdr = read_header(p)
    assert hdr["magic"] == b"n+1" and int(hdr["vox_offset"]) == 352 and int(hdr["datatype"]) == 16


def test_field_is_5d_vector_intent(tmp_path):
    p = tmp_path / "f.nii"
    write_nifti(DisplacementField.zeros((2, 3, 4)), p)
    hdr = read_header(p)
    assert list(hdr["dim"][:6]) == [5, 2, 3, 4, 1, 3]
    assert int(hdr["intent_code"]) == nifti.INTENT_VECTOR


def test_x_fastest_order(tmp_path):
    data = np.arange(24.0).reshape(2, 3, 4)
    blob = encode_nifti(ScalarVolume(data))
    payload = np.frombuffer(blob[352:], dtype="<f4")
    assert payload[1] == data[1, 0, 0] and payload[2] == data[0, 1, 0]


def test_slope_intercept(tmp_path):
    p = tmp_path / "s.nii"
    raw_file(p, np.full((2, 2, 2), 3, dtype=np.int16), datatype=4, slope=2.0, inter=1.0)
    assert (read_nifti(p).data == 7.0).all()


def test_zero_slope_means_unscaled(tmp_path):
    p = tmp_path / "s.nii"
    raw_file(p, np.full((2, 2, 2), 3, dtype=np.int16), datatype=4, slope=0.0, inter=5.0)
    assert (read_nifti(p).data == 3.0).all()


@pytest.mark.parametrize("dt, np_dt", [(2, np.uint8), (8, np.int32), (64, np.float64)])
def test_big_endian_and_datatypes(tmp_path, dt, np_dt):
    p = tmp_path / "b.nii"
    data = np.arange(24).reshape(2, 3, 4).astype(np_dt)
    raw_file(p, data, datatype=dt, order=">")
    vol = read_nifti(p)
    np.testing.assert_array_equal(vol.data, data)
    assert vol.spacing == (2.0, 2.0, 2.0)


def test_unsupported_datatype(tmp_path):
    p = tmp_path / "u.nii"
    raw_file(p, np.zeros((2, 2, 2), dtype=np.int16), datatype=128)
    with pytest.raises(UnsupportedDatatypeError, match="unsupported datatype"):
        read_nifti(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "m.nii"
    raw_file(p, np.zeros((2, 2, 2), dtype=np.int16), magic=b"abc")
    with pytest.raises(BadMagicError):
        read_nifti(p)


def test_truncated(tmp_path):
    p = tmp_path / "t.nii"
    write_nifti(ScalarVolume(np.ones((4, 4, 4))), p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(TruncatedPayloadError):
        read_nifti(p)


def test_error_codes_distinct():
    codes = {c.code for c in (BadMagicError, UnsupportedDatatypeError, TruncatedPayloadError)}
    assert len(codes) == 3


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_nifti(ScalarVolume(np.ones((2, 2, 2))), tmp_path / "missing" / "x.nii")
