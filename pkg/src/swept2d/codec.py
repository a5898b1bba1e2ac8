"""Byte-exact encodings for panels and global-field snapshots.

Panel message (all integers little-endian)::

    offset  size  field
    0       4     magic "SWP2"
    4       2     version (1)
    6       1     direction  (0 N, 1 S, 2 W, 3 E)
    7       1     orientation (0 upward, 1 downward)
    8       4     n
    12      8     start_step
    20      2     arity (0 = varies per level, see below)
    22      6     reserved, zero
    28            payload

The payload is every level in increasing ``k``, each slab in row-major scan
order, each value IEEE-754 binary64 little-endian.  With a constant arity
the payload is exactly ``(n*n/2 + n) * arity * 8`` bytes.  When the arity
changes between levels the header carries 0 and the payload is preceded
by ``n/2`` u16 arities, one per level.

Snapshot ("SWF2", 32-byte header): magic, version u16, arity u16,
width u32, height u32, step u64, shift_x u32, shift_y u32, followed by the
row-major values as binary64 little-endian.
"""

from __future__ import annotations

import struct
from functools import lru_cache

import numpy as np

from .errors import CodecError
from .grid import Direction, GlobalField, Orientation, Panel, slab_extent

PANEL_MAGIC = b"SWP2"
PANEL_VERSION = 1
PANEL_HEADER = struct.Struct("<4sHBBIQH6x")

FIELD_MAGIC = b"SWF2"
FIELD_VERSION = 1
FIELD_HEADER = struct.Struct("<4sHHIIQII")

F64 = np.dtype("<f8")


_DIRECTIONS = tuple(Direction(d) for d in range(4))
_ORIENTATIONS = tuple(Orientation(o) for o in range(2))


@lru_cache(maxsize=256)
def _layout(direction, orientation, n, arities):
    """Per-level ``(shape, start, stop)`` in values, and total payload bytes."""
    if isinstance(arities, int):
        arities = (arities,) * (n // 2)
    shapes, pos = [], 0
    for k, a in enumerate(arities):
        shape = slab_extent(direction, orientation, n, k) + (a,)
        count = shape[0] * shape[1] * a
        shapes.append((shape, pos, pos + count))
        pos += count
    return tuple(shapes), 8 * pos


def encode_panel(panel):
    levels = panel.levels
    arities = [slab.shape[2] for slab in levels]
    constant = arities.count(arities[0]) == len(arities)
    header = PANEL_HEADER.pack(PANEL_MAGIC, PANEL_VERSION, panel.direction, panel.orientation,
                               panel.n, panel.start_step, arities[0] if constant else 0)
    if not constant:
        header += struct.pack(f"<{len(arities)}H", *arities)
    # tobytes() emits row-major order for any memory layout.
    return header + b"".join([(slab if slab.dtype == F64 else slab.astype(F64)).tobytes() for slab in levels])


def decode_panel(buf):
    buf = memoryview(buf).cast("B")
    if len(buf) < PANEL_HEADER.size:
        raise CodecError("length", f"buffer of {len(buf)} bytes is shorter than the {PANEL_HEADER.size}-byte header")
    magic, version, direction, orientation, n, start, arity = PANEL_HEADER.unpack_from(buf)
    if magic != PANEL_MAGIC:
        raise CodecError("magic", f"expected {PANEL_MAGIC!r}, got {bytes(magic)!r}")
    if version != PANEL_VERSION:
        raise CodecError("version", f"unsupported version {version}")
    if direction > 3:
        raise CodecError("direction", f"invalid value {direction}")
    if orientation > 1:
        raise CodecError("orientation", f"invalid value {orientation}")
    if n < 4 or n % 2:
        raise CodecError("n", f"invalid side length {n}")
    offset = PANEL_HEADER.size
    if arity == 0:
        levels = n // 2
        if len(buf) < offset + 2 * levels:
            raise CodecError("length", "truncated arity table")
        arities = struct.unpack_from(f"<{levels}H", buf, offset)
        offset += 2 * levels
        if 0 in arities:
            raise CodecError("arity", "zero arity in table")
    else:
        arities = arity
    shapes, size = _layout(direction, orientation, n, arities)
    if len(buf) != offset + size:
        raise CodecError("length", f"expected {offset + size} bytes, got {len(buf)}")
    flat = np.frombuffer(buf, dtype=F64, offset=offset)
    slabs = [flat[a:b].reshape(shape) for shape, a, b in shapes]
    direction, orientation = _DIRECTIONS[direction], _ORIENTATIONS[orientation]
    return Panel._trusted(direction, orientation, n, start, slabs)


def encode_field(field):
    sx, sy = field.shift
    header = FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, field.arity, field.width, field.height,
                               field.step, sx, sy)
    return header + np.ascontiguousarray(field.values, dtype=F64).tobytes()


def decode_field(buf):
    buf = memoryview(buf).cast("B")
    if len(buf) < FIELD_HEADER.size:
        raise CodecError("length", "buffer shorter than snapshot header")
    magic, version, arity, width, height, step, sx, sy = FIELD_HEADER.unpack_from(buf)
    if magic != FIELD_MAGIC:
        raise CodecError("magic", f"expected {FIELD_MAGIC!r}, got {bytes(magic)!r}")
    if version != FIELD_VERSION:
        raise CodecError("version", f"unsupported version {version}")
    expected = FIELD_HEADER.size + 8 * width * height * arity
    if len(buf) != expected:
        raise CodecError("length", f"expected {expected} bytes, got {len(buf)}")
    values = np.frombuffer(buf, dtype=F64, offset=FIELD_HEADER.size).reshape(height, width, arity)
    return GlobalField(width, height, step, values, (sx, sy))


def encode_array(a):
    return np.ascontiguousarray(a, dtype=F64).tobytes()


def decode_array(buf, shape):
    count = int(np.prod(shape))
    if len(buf) != 8 * count:
        raise CodecError("length", f"expected {8 * count} bytes for shape {shape}, got {len(buf)}")
    return np.frombuffer(buf, dtype=F64).reshape(shape)
