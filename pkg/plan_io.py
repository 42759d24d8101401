"""Binary plan and coefficient files.

All integers and floats are little-endian. Matrices are stored column-major.
"""
import logging
import struct
import zlib
from pathlib import Path
from typing import BinaryIO, Optional, Union

import numpy as np

from errors import DegreeMismatchError, PlanFormatError
from gevp_solver import LayerDecomposition
from models import GEOMETRY_CODES, GeometryKind
from skeleton_plan import CoefficientBlock, Representation, TransformPlan, build_plan, column_orders, layer_index, layer_length

logger = logging.getLogger(__name__)

PLAN_MAGIC = b"HPTPLAN1"
PLAN_VERSION = 1
COEFF_MAGIC = b"HPC1"
COEFF_VERSION = 2
PAYLOAD_DENSE = 0

_PLAN_HEADER = struct.Struct("<IB3xQQQ")
_TRIANGLE_PARAMS = struct.Struct("<3d")
_NODE_HEADER = struct.Struct("<IIIQQII")
_CRC = struct.Struct("<I")
_COEFF_HEADER = struct.Struct("<IBQ")

_KINDS = {code: name for name, code in GEOMETRY_CODES.items()}

Sink = Union[str, Path, BinaryIO]


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.offset = 0
        self.what = what

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise PlanFormatError(f"truncated {self.what}: needed {size} bytes at offset {self.offset}, have {len(self.data) - self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct):
        return layout.unpack(self.take(layout.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def _read_kind(reader: _Reader, code: int) -> GeometryKind:
    if code not in _KINDS:
        raise PlanFormatError(f"unknown geometry code {code}")
    if _KINDS[code] == "triangle":
        alpha, beta, gamma = reader.unpack(_TRIANGLE_PARAMS)
        return GeometryKind(kind="triangle", alpha=alpha, beta=beta, gamma=gamma)
    return GeometryKind(kind=_KINDS[code])


def _describe(kind: GeometryKind) -> str:
    if kind.kind == "triangle":
        return f"triangle({kind.alpha:g}, {kind.beta:g}, {kind.gamma:g})"
    return kind.kind


# ── plans ──


def plan_to_bytes(plan: TransformPlan) -> bytes:
    if not plan.precomputed:
        raise PlanFormatError("only precomputed plans can be serialized")
    kind = plan.kind
    parts = [PLAN_MAGIC, _PLAN_HEADER.pack(PLAN_VERSION, kind.code, plan.degree, plan.block, len(plan.nodes))]
    if kind.kind == "triangle":
        parts.append(_TRIANGLE_PARAMS.pack(kind.alpha, kind.beta, kind.gamma))
    for node in plan.nodes:
        dec = node.decomposition
        body = b"".join([
            _NODE_HEADER.pack(node.level, node.source_base, node.target_base, node.section, node.buffer, PAYLOAD_DENSE, dec.rows),
            dec.eigenvalues.astype("<f8").tobytes(),
            np.asarray(dec.U, dtype="<f8").tobytes(order="F"),
        ])
        parts.extend([body, _CRC.pack(zlib.crc32(body))])
    payload = b"".join(parts)
    return payload + _CRC.pack(zlib.crc32(payload))


def plan_from_bytes(data: bytes) -> TransformPlan:
    if len(data) < len(PLAN_MAGIC) + _CRC.size:
        raise PlanFormatError(f"plan stream of {len(data)} bytes is too short")
    if data[: len(PLAN_MAGIC)] != PLAN_MAGIC:
        raise PlanFormatError("not a plan file (bad magic)")
    (stored,) = _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(data[: -_CRC.size]) != stored:
        raise PlanFormatError("plan checksum mismatch")
    reader = _Reader(data[: -_CRC.size], "plan")
    reader.take(len(PLAN_MAGIC))
    version, code, n, b, count = reader.unpack(_PLAN_HEADER)
    if version != PLAN_VERSION:
        raise PlanFormatError(f"unsupported plan version {version}")
    kind = _read_kind(reader, code)

    skeleton = build_plan(kind, n, block=b)
    if count != len(skeleton.nodes):
        raise PlanFormatError(f"plan lists {count} nodes, a degree {n} block {b} plan has {len(skeleton.nodes)}")
    by_bases = {(node.source_base, node.target_base): node for node in skeleton.nodes}
    nodes = []
    for _ in range(count):
        start = reader.offset
        level, source_base, target_base, N, p, tag, rows = reader.unpack(_NODE_HEADER)
        expected = by_bases.get((source_base, target_base))
        if expected is None or expected.level != level:
            raise PlanFormatError(f"unexpected arrow {source_base} -> {target_base} at level {level}")
        if tag != PAYLOAD_DENSE:
            raise PlanFormatError(f"unsupported payload tag {tag}")
        if N != expected.section or rows != layer_length(kind, n, target_base):
            raise PlanFormatError(f"arrow {source_base} -> {target_base}: sizes ({rows}x{N}) disagree with the plan degree")
        eigenvalues = reader.floats(N)
        U = reader.floats(rows * N).reshape((rows, N), order="F")
        (crc,) = reader.unpack(_CRC)
        if zlib.crc32(data[start : reader.offset - _CRC.size]) != crc:
            raise PlanFormatError(f"checksum mismatch in arrow {source_base} -> {target_base}")
        dec = LayerDecomposition(
            kind=kind.kind,
            target=layer_index(kind, target_base),
            source=layer_index(kind, source_base),
            section=N,
            buffer=p,
            shift=rows - N,
            eigenvalues=eigenvalues,
            U=U,
            residual=0.0,
        )
        nodes.append(expected.model_copy(update={"buffer": p, "decomposition": dec}))
    if reader.offset != len(reader.data):
        raise PlanFormatError(f"{len(reader.data) - reader.offset} trailing bytes after the last arrow")
    return skeleton.model_copy(update={"nodes": nodes})


def serialize(plan: TransformPlan, sink: Sink) -> int:
    data = plan_to_bytes(plan)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    logger.debug("wrote plan: %d bytes, %d arrows", len(data), len(plan.nodes))
    return len(data)


def deserialize(source: Sink) -> TransformPlan:
    data = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    return plan_from_bytes(data)


# ── coefficient files ──


def coefficients_to_bytes(block: CoefficientBlock) -> bytes:
    kind = block.kind
    parts = [COEFF_MAGIC, _COEFF_HEADER.pack(COEFF_VERSION, kind.code, block.degree)]
    if kind.kind == "triangle":
        parts.append(_TRIANGLE_PARAMS.pack(kind.alpha, kind.beta, kind.gamma))
    parts.append(np.asarray(block.values, dtype="<f8").tobytes(order="F"))
    return b"".join(parts)


def coefficients_from_bytes(
    data: bytes,
    kind: Optional[GeometryKind] = None,
    representation: Representation = "native",
    degree: Optional[int] = None,
) -> CoefficientBlock:
    """Read a coefficient block; a supplied geometry or degree must match the file."""
    reader = _Reader(data, "coefficient file")
    if reader.take(len(COEFF_MAGIC)) != COEFF_MAGIC:
        raise PlanFormatError("not a coefficient file (bad magic)")
    version, code, n = reader.unpack(_COEFF_HEADER)
    if version != COEFF_VERSION:
        raise PlanFormatError(f"unsupported coefficient file version {version}")
    stored = _read_kind(reader, code)
    if kind is not None and kind != stored:
        raise PlanFormatError(f"coefficient file holds {_describe(stored)}, expected {_describe(kind)}")
    if degree is not None and n != degree:
        raise DegreeMismatchError(f"coefficient file has degree {n}, expected {degree}")
    cols = column_orders(stored, n).size
    values = reader.floats(n * cols).reshape((n, cols), order="F")
    if reader.offset != len(data):
        raise PlanFormatError(f"{len(data) - reader.offset} trailing bytes in coefficient file")
    return CoefficientBlock(kind=stored, degree=n, values=values, representation=representation)


def write_coefficients(block: CoefficientBlock, sink: Sink) -> None:
    data = coefficients_to_bytes(block)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def read_coefficients(
    source: Sink,
    kind: Optional[GeometryKind] = None,
    representation: Representation = "native",
    degree: Optional[int] = None,
) -> CoefficientBlock:
    data = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    return coefficients_from_bytes(data, kind, representation, degree)
