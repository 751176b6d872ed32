"""TDSM container for a JointModel.

Layout (little-endian):

    b"TDSM" | u32 version | u64 payload length | payload | u32 CRC-32(payload)

The payload holds a dimension header, the category table, the training
configuration as ``key = value`` text and every array as float32 in
row-major order.
"""

import struct
import zlib

import numpy as np

from .config import parse_config
from .crf import CrfModel
from .errors import BadMagicError, ChecksumError, ModelFormatError, VersionMismatchError
from .sparsecode import CategoryDictionary
from .svm import SvmModel

MAGIC = b"TDSM"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, *v):
        self.parts.append(struct.pack(f"<{len(v)}I", *v))

    def text(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def f32(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("payload ends early")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, n=1):
        v = struct.unpack(f"<{n}I", self._take(4 * n))
        return v if n > 1 else v[0]

    def text(self):
        try:
            return self._take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"bad text field: {e}") from None

    def f32(self, *shape):
        count = int(np.prod(shape))
        a = np.frombuffer(self._take(4 * count), dtype="<f4").astype(np.float64)
        return a.reshape(shape)


def _check_f32(name, a):
    a = np.asarray(a, dtype=np.float64)
    if not np.array_equal(a.astype(np.float32).astype(np.float64), a):
        raise ValueError(f"{name} is not float32-representable; save model.quantized()")


def dumps(model):
    """Serialise a float32-quantised JointModel to bytes."""
    N = len(model.categories)
    k = model.background.dim
    has_clf = model.classifiers is not None
    w = _Writer()
    w.u32(N, k, model.background.size, int(has_clf), int(model.profile.multi_label),
          model.profile.max_objects)
    for name in model.categories:
        w.text(name)
    w.text(model.background.category)
    w.text(model.config.to_text())
    for d, c in zip(model.dictionaries, model.crfs):
        _check_f32(f"dictionary {d.category}", d.atoms)
        _check_f32(f"crf {c.category}", c.w)
        w.u32(d.size)
        w.f32(d.atoms)
        w.f32(c.w)
        w.f32([c.gamma])
    _check_f32("background", model.background.atoms)
    w.f32(model.background.atoms)
    if has_clf:
        for m in model.classifiers:
            _check_f32("classifier", np.append(m.v, [m.b, m.cost]))
            w.u32(m.v.size)
            w.f32(np.append(m.v, [m.b, m.cost]))
    payload = w.bytes()
    return _PREFIX.pack(MAGIC, VERSION, len(payload)) + payload + _CRC.pack(zlib.crc32(payload))


def loads(data):
    from .pipeline import DatasetProfile, JointModel

    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a TDSM model file")
    if len(data) < _PREFIX.size:
        raise ModelFormatError("truncated header")
    _, version, length = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"model format version {version}, expected {VERSION}")
    if len(data) != _PREFIX.size + length + _CRC.size:
        raise ModelFormatError(f"file holds {len(data)} bytes, header implies "
                               f"{_PREFIX.size + length + _CRC.size}")
    payload = data[_PREFIX.size:_PREFIX.size + length]
    (crc,) = _CRC.unpack_from(data, _PREFIX.size + length)
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload CRC-32 mismatch")
    rd = _Reader(payload)
    try:
        N, k, r_bg, has_clf, multi, max_obj = rd.u32(6)
        names = tuple(rd.text() for _ in range(N))
        bg_name = rd.text()
        config = parse_config(rd.text())
        dicts, crfs = [], []
        for name in names:
            r = rd.u32()
            dicts.append(CategoryDictionary(name, rd.f32(k, r)))
            wv = rd.f32(r + 1)
            crfs.append(CrfModel(name, wv, float(rd.f32(1)[0])))
        bg = CategoryDictionary(bg_name, rd.f32(k, r_bg))
        clfs = None
        if has_clf:
            clfs = []
            for _ in range(N):
                v = rd.f32(rd.u32() + 2)
                clfs.append(SvmModel(v[:-2], float(v[-2]), float(v[-1])))
            clfs = tuple(clfs)
        if rd.pos != len(payload):
            raise ModelFormatError("trailing bytes in payload")
        profile = DatasetProfile(names, bool(multi), max_obj)
        return JointModel(names, tuple(dicts), tuple(crfs), bg, config, profile, clfs)
    except ModelFormatError:
        raise
    except ValueError as e:
        raise ModelFormatError(f"inconsistent model payload: {e}") from None


def save_model(path, model):
    data = dumps(model)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
