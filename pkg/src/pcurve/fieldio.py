"""Field import/export: CSV text and the ``PCRV1`` little-endian binary.

CSV layout::

    # pcurve-field kind=<scalar|sym_tensor> n=<n> shape=<m1>x<m2>x...
    index,value                        (scalar)
    index,c00,c01,...,c0n,c11,...      (sym_tensor: upper triangle, row-major)
    0,<...>
    1,<...>

``index`` is the C-order (row-major) flattened grid index.

Binary layout (all little-endian)::

    bytes 0-4   magic b"PCRV1"
    byte  5     field kind: 0 = scalar, 1 = sym_tensor
    uint32      n
    uint32 x n  shape
    float64 ... values in C order; a sym_tensor stores n(n+1)/2 upper-triangle
                components per point, row-major (c00, c01, ..., c11, ...)
"""

import struct

import numpy as np

from .errors import ParameterError

MAGIC = b"PCRV1"
KINDS = {"scalar": 0, "sym_tensor": 1}
_KIND_NAMES = {v: k for k, v in KINDS.items()}


def _infer_dim(values):
    s = values.shape
    if values.ndim >= 5 and s[-1] == s[-2] == values.ndim - 2:
        return values.ndim - 2
    return values.ndim


def _kind_of(values, n):
    shape = values.shape
    if len(shape) == n:
        return "scalar", shape
    if len(shape) == n + 2 and shape[-2:] == (n, n):
        return "sym_tensor", shape[:-2]
    raise ParameterError(f"array of shape {shape} is not a field on an {n}-dimensional grid")


def _pack(values, kind, n):
    if kind == "scalar":
        return values.reshape(-1, 1)
    iu = np.triu_indices(n)
    npts = int(np.prod(values.shape[:-2]))
    return values.reshape(npts, n, n)[:, iu[0], iu[1]]


def _unpack(flat, kind, n, shape):
    if kind == "scalar":
        return flat.reshape(shape)
    iu = np.triu_indices(n)
    out = np.empty((flat.shape[0], n, n))
    out[:, iu[0], iu[1]] = flat
    out[:, iu[1], iu[0]] = flat
    return out.reshape(tuple(shape) + (n, n))


def write_csv(path, values, n=None):
    values = np.asarray(values, dtype=np.float64)
    n = _infer_dim(values) if n is None else n
    kind, shape = _kind_of(values, n)
    data = _pack(values, kind, n)
    if kind == "scalar":
        cols = ["value"]
    else:
        cols = [f"c{i}{j}" for i, j in zip(*np.triu_indices(n))]
    with open(path, "w") as fh:
        fh.write(f"# pcurve-field kind={kind} n={n} shape={'x'.join(map(str, shape))}\n")
        fh.write(",".join(["index"] + cols) + "\n")
        for k, row in enumerate(data):
            fh.write(f"{k}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# pcurve-field"):
            raise ParameterError(f"{path}: missing pcurve-field header")
        meta = dict(item.split("=", 1) for item in header.split()[2:])
        kind, n = meta["kind"], int(meta["n"])
        shape = tuple(int(s) for s in meta["shape"].split("x"))
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if kind not in KINDS:
        raise ParameterError(f"{path}: unknown field kind {kind!r}")
    order = data[:, 0].astype(np.int64)
    if not np.array_equal(order, np.arange(len(order))) or len(order) != int(np.prod(shape)):
        raise ParameterError(f"{path}: rows must list every grid index once, in order")
    return _unpack(data[:, 1:], kind, n, shape)


def write_binary(path, values, n=None):
    values = np.asarray(values, dtype=np.float64)
    n = _infer_dim(values) if n is None else n
    kind, shape = _kind_of(values, n)
    data = _pack(values, kind, n)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", KINDS[kind]))
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack(f"<{n}I", *shape))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise ParameterError(f"{path}: bad magic {blob[:5]!r}")
    kind_code = blob[5]
    if kind_code not in _KIND_NAMES:
        raise ParameterError(f"{path}: unknown field kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    (n,) = struct.unpack_from("<I", blob, 6)
    shape = struct.unpack_from(f"<{n}I", blob, 10)
    offset = 10 + 4 * n
    ncomp = 1 if kind == "scalar" else n * (n + 1) // 2
    npts = int(np.prod(shape))
    flat = np.frombuffer(blob, dtype="<f8", offset=offset)
    if flat.size != npts * ncomp:
        raise ParameterError(f"{path}: expected {npts * ncomp} values, found {flat.size}")
    return _unpack(flat.reshape(npts, ncomp).astype(np.float64), kind, n, shape)


def read_field(path):
    """Read either format, chosen by file content."""
    with open(path, "rb") as fh:
        head = fh.read(5)
    return read_binary(path) if head == MAGIC else read_csv(path)


def write_field(path, values, n=None):
    path = str(path)
    if path.endswith(".csv"):
        write_csv(path, values, n)
    else:
        write_binary(path, values, n)
