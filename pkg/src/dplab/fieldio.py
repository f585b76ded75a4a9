"""Field serialization.

Binary layout (all little-endian)::

    magic    4 bytes  b"DPLF"
    version  uint32   1
    ndim     uint32
    dims     ndim x uint64
    spacing  ndim x float64
    topology ndim x uint8   (0 = free, 1 = periodic)
    values   prod(dims) x float64, C order

CSV layout: three comment lines ``# dims=...``, ``# spacing=...``,
``# topology=...`` followed by ``prod(dims[:-1])`` rows of ``dims[-1]``
comma-separated values (C order).  Values are written with 17 significant
digits so a round trip is exact.
"""

import struct

import numpy as np

from .exceptions import InvalidArgument
from .grid import FREE, PERIODIC, Field, Grid

MAGIC = b"DPLF"
VERSION = 1
_TOPO_CODE = {FREE: 0, PERIODIC: 1}
_CODE_TOPO = {v: k for k, v in _TOPO_CODE.items()}


def field_to_bytes(f):
    g = f.grid
    parts = [MAGIC, struct.pack("<II", VERSION, g.ndim)]
    parts.append(np.asarray(g.dims, dtype="<u8").tobytes())
    parts.append(np.asarray(g.spacing, dtype="<f8").tobytes())
    parts.append(np.asarray([_TOPO_CODE[t] for t in g.topology], dtype="u1").tobytes())
    parts.append(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return b"".join(parts)


def field_from_bytes(buf):
    if buf[:4] != MAGIC:
        raise InvalidArgument("not a dplab field file (bad magic)")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise InvalidArgument(f"unsupported field file version {version}")
    off = 12
    dims = np.frombuffer(buf, dtype="<u8", count=ndim, offset=off)
    off += 8 * ndim
    spacing = np.frombuffer(buf, dtype="<f8", count=ndim, offset=off)
    off += 8 * ndim
    topo = np.frombuffer(buf, dtype="u1", count=ndim, offset=off)
    off += ndim
    count = int(np.prod(dims))
    if len(buf) - off != 8 * count:
        raise InvalidArgument("field file truncated or oversized")
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=off)
    try:
        topology = tuple(_CODE_TOPO[int(t)] for t in topo)
    except KeyError:
        raise InvalidArgument("unknown topology code in field file") from None
    grid = Grid(tuple(int(n) for n in dims), tuple(float(h) for h in spacing), topology)
    return Field(grid, values.astype(float).reshape(grid.shape))


def write_field(path, f):
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(field_to_csv(f))
    else:
        with open(path, "wb") as fh:
            fh.write(field_to_bytes(f))


def read_field(path):
    path = str(path)
    if path.endswith(".csv"):
        with open(path, encoding="utf-8") as fh:
            return field_from_csv(fh.read())
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_csv(f):
    g = f.grid
    lines = [
        "# dims=" + ",".join(str(n) for n in g.dims),
        "# spacing=" + ",".join(repr(float(h)) for h in g.spacing),
        "# topology=" + ",".join(g.topology),
    ]
    rows = f.values.reshape(-1, g.dims[-1])
    lines.extend(",".join(f"{v:.17g}" for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def field_from_csv(text):
    header = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key.strip()] = val.strip()
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise InvalidArgument(f"bad number on CSV line {lineno}") from None
    for key in ("dims", "spacing", "topology"):
        if key not in header:
            raise InvalidArgument(f"CSV field is missing the '# {key}=' header")
    dims = tuple(int(x) for x in header["dims"].split(","))
    spacing = tuple(float(x) for x in header["spacing"].split(","))
    topology = tuple(x.strip() for x in header["topology"].split(","))
    grid = Grid(dims, spacing, topology)
    values = np.asarray(rows, dtype=float)
    if values.size != grid.size:
        raise InvalidArgument(f"CSV holds {values.size} values, header expects {grid.size}")
    return Field(grid, values.reshape(grid.shape))
