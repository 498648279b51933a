"""Single-file NIfTI-1 (``.nii``) reader and writer.

Supports uncompressed files without extensions, datatypes uint8, int16,
int32, float32 and float64, either byte order. Files are always written
little-endian float32 with ``vox_offset`` 352.
"""

import os
import tempfile

import numpy as np

from ..volume import DisplacementField, LabelVolume, ScalarVolume, TimeSeriesVolume

HEADER_SIZE = 348
VOX_OFFSET = 352

INTENT_NONE = 0
INTENT_LABEL = 1002
INTENT_VECTOR = 1007

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE


class NiftiError(ValueError):
    code = "nifti-error"


class BadMagicError(NiftiError):
    code = "bad-magic"


class UnsupportedDatatypeError(NiftiError):
    code = "unsupported-datatype"


class TruncatedPayloadError(NiftiError):
    code = "truncated-payload"


class BadHeaderError(NiftiError):
    code = "bad-header"


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError("truncated header")
    for order in "<>":
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(order))[0]
        if hdr["sizeof_hdr"] == HEADER_SIZE:
            return hdr, order
    raise BadHeaderError("sizeof_hdr is not 348 in either byte order")


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    return _parse_header(raw)[0]


def read_nifti(path, kind=None):
    """Decode a ``.nii`` file into the matching volume type.

    ``kind`` forces the result type (``"scalar"``, ``"timeseries"``,
    ``"labels"`` or ``"field"``). Otherwise 5D files with three components
    become a :class:`DisplacementField`, 4D files a
    :class:`TimeSeriesVolume`, 3D files with the label intent a
    :class:`LabelVolume` and other 3D files a :class:`ScalarVolume`.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    hdr, order = _parse_header(raw)
    if hdr["magic"] not in (b"n+1", b"ni1"):
        raise BadMagicError(f"bad magic {hdr['magic']!r}")
    if hdr["magic"] == b"ni1":
        raise BadMagicError("two-file NIfTI (magic 'ni1') is not supported")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"unsupported datatype {code}")
    ndim = int(hdr["dim"][0])
    if not 1 <= ndim <= 5:
        raise BadHeaderError(f"unsupported dimensionality {ndim}")
    dims = [int(d) for d in hdr["dim"][1:ndim + 1]]
    if any(d < 1 for d in dims):
        raise BadHeaderError(f"invalid dims {dims}")
    dims += [1] * (5 - ndim)
    dtype = DATATYPES[code].newbyteorder(order)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(dims))
    nbytes = count * dtype.itemsize
    if offset < HEADER_SIZE or len(raw) < offset + nbytes:
        raise TruncatedPayloadError(f"payload needs {nbytes} bytes after offset {offset}, file has {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(dims, order="F")
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    scaled = slope != 0 and np.isfinite(slope) and not (slope == 1 and inter == 0)
    values = data.astype(np.float64) * slope + inter if scaled else data.astype(np.float64)
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in hdr["pixdim"][1:4])
    intent = int(hdr["intent_code"])

    if kind is None:
        if dims[4] == 3 and dims[3] == 1:
            kind = "field"
        elif dims[4] > 1:
            raise BadHeaderError(f"cannot interpret 5D dims {dims}")
        elif dims[3] > 1:
            kind = "timeseries"
        elif intent == INTENT_LABEL:
            kind = "labels"
        else:
            kind = "scalar"
    if kind == "field":
        if dims[4] != 3 or dims[3] != 1:
            raise BadHeaderError(f"displacement field needs dims (nx, ny, nz, 1, 3), got {dims}")
        return DisplacementField(values[:, :, :, 0, :], spacing)
    if kind == "timeseries":
        return TimeSeriesVolume(values[..., 0], spacing)
    if dims[3] != 1 or dims[4] != 1:
        raise BadHeaderError(f"expected a 3D volume, got dims {dims}")
    if kind == "labels":
        return LabelVolume(values[:, :, :, 0, 0], spacing)
    if kind == "scalar":
        return ScalarVolume(values[:, :, :, 0, 0], spacing)
    raise ValueError(f"unknown kind {kind!r}")


def _payload(volume):
    if isinstance(volume, DisplacementField):
        v = volume.vectors
        return v.reshape(v.shape[:3] + (1, 3)), INTENT_VECTOR
    if isinstance(volume, TimeSeriesVolume):
        return volume.data, INTENT_NONE
    if isinstance(volume, LabelVolume):
        return volume.labels, INTENT_LABEL
    if isinstance(volume, ScalarVolume):
        return volume.data, INTENT_NONE
    raise TypeError(f"cannot write {type(volume).__name__}")


def encode_nifti(volume) -> bytes:
    """Serialise a volume to the bytes of a little-endian float32 ``.nii`` file."""
    data, intent = _payload(volume)
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1:data.ndim + 1] = data.shape
    hdr["dim"] = dim
    hdr["intent_code"] = intent
    if intent == INTENT_VECTOR:
        hdr["intent_name"] = b"displacement"
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    sx, sy, sz = volume.spacing
    pixdim = np.ones(8, dtype=np.float32)
    pixdim[1:4] = (sx, sy, sz)
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2 | 8  # mm, seconds
    hdr["sform_code"] = 1
    hdr["srow_x"] = (sx, 0, 0, 0)
    hdr["srow_y"] = (0, sy, 0, 0)
    hdr["srow_z"] = (0, 0, sz, 0)
    hdr["magic"] = b"n+1"
    payload = np.asarray(data, dtype="<f4").tobytes(order="F")
    return hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload


def atomic_write_bytes(path, blob: bytes):
    """Write through a temporary file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_nifti(volume, path):
    atomic_write_bytes(path, encode_nifti(volume))
