"""Instruction set: typed instructions, bit-exact 16-byte encoding, static validation.

Every instruction encodes to exactly 16 little-endian bytes: opcode in byte 0,
variant/flags in byte 1.  Binary layout per opcode:

  LOAD  (0x01)  [1] variant | spad_kind<<4   [2:5] spad base u24
                [5:9] dram base u32          [9:11] rows u16
                [11:14] row_bytes u24        [14:16] dram row stride u16
  STORE (0x02)  mirrored: [2:5] spad src base, [5:9] dram dst base, same 2D fields
  GEMM  (0x03)  [1] bit0 constant_time       [2:5] acc base  [5:8] input base
                [8:11] weight base           [11:16] m(13b) | k(14b)<<13 | n(13b)<<27
  ALU   (0x04)  [1] bit0 ct | op<<1 | has_imm<<4   [2] out_kind | in_kind<<4
                [3:6] out base u24  [6:9] in base u24  [9:12] elems u24
                [12:14] imm i16     [14] in_width | out_width<<4
  ZEROIZE (0x05) [2] kind  [3:6] base u24  [6:9] len u24
  SETCFG  (0x06) [1] register  [2:6] value u32
  FINISH  (0x07) payload all zero

Unused trailing bytes must be zero; decode rejects nonzero padding so that
encode/decode are exact inverses on their valid domains.

DRAM transfers are 2D: `rows` slices of `row_bytes` at `row_stride` apart.  A
contiguous transfer is rows=1.  Tensor-edge padding is derived from the burst
size at DMA time (each row is padded up to a burst multiple), so padding does
not consume encoding space.

Program files: 16-byte header (magic "SESM", version, tenant_id, record count)
followed by the 16-byte instruction records.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Union

INSTR_BYTES = 16
MAGIC = b"SESM"
FORMAT_VERSION = 1

MAX_TENANTS = 4
REGION_BYTES = 16 * 1024  # scratchpad ownership granularity


class SpadKind(IntEnum):
    INPUT = 0
    WEIGHT = 1
    ACCUM = 2
    OUTPUT = 3


class Variant(IntEnum):
    """Load/store security variant: plain, encrypted, shaped, or both."""

    PLAIN = 0
    E = 1
    S = 2
    SE = 3

    @property
    def encrypted(self) -> bool:
        return self in (Variant.E, Variant.SE)

    @property
    def shaped(self) -> bool:
        return self in (Variant.S, Variant.SE)


class AluOp(IntEnum):
    ADD = 0
    MAX = 1
    MIN = 2
    SHR = 3
    MUL_IMM = 4


class ConfigReg(IntEnum):
    SHAPER_EN = 0
    BANDWIDTH = 1
    ADDR_RANGE = 2
    QUEUE_DEPTH = 3
    SPAD_QUOTA = 4
    EXEC_TILES = 5


class Opcode(IntEnum):
    LOAD = 0x01
    STORE = 0x02
    GEMM = 0x03
    ALU = 0x04
    ZEROIZE = 0x05
    SETCFG = 0x06
    FINISH = 0x07


class IsaError(Exception):
    """Base class for encoding/decoding failures."""


class RangeOverflow(IsaError):
    """A field value exceeds its bit allocation."""


class UnknownOpcode(IsaError):
    """Byte 0 does not name an instruction."""


class MalformedField(IsaError):
    """A decoded field is inconsistent or reserved bytes are nonzero."""


@dataclass(frozen=True)
class SpadRange:
    """Contiguous byte range in one scratchpad, tenant-region-relative."""

    kind: SpadKind
    base: int
    len: int

    def __post_init__(self):
        if self.len <= 0:
            raise RangeOverflow(f"spad range len must be positive, got {self.len}")
        if self.base < 0:
            raise RangeOverflow(f"spad base must be non-negative, got {self.base}")

    @property
    def end(self) -> int:
        return self.base + self.len

    def overlaps(self, other: "SpadRange") -> bool:
        return self.kind == other.kind and self.base < other.end and other.base < self.end


@dataclass(frozen=True)
class DramRange:
    """2D DRAM transfer: `rows` slices of `row_bytes`, `row_stride` apart."""

    base: int
    rows: int
    row_bytes: int
    row_stride: int

    def __post_init__(self):
        if self.rows <= 0 or self.row_bytes <= 0:
            raise RangeOverflow("dram transfer must move at least one byte")
        if self.rows > 1 and self.row_stride < self.row_bytes:
            raise RangeOverflow("dram rows may not overlap")

    @property
    def len(self) -> int:
        """Real payload bytes, before burst padding."""
        return self.rows * self.row_bytes

    @property
    def span(self) -> int:
        """Extent of the touched address range."""
        return (self.rows - 1) * self.row_stride + self.row_bytes

    def padded_len(self, burst: int) -> int:
        """Bytes on the bus after each row is padded to a burst multiple."""
        return self.rows * _ceil_to(self.row_bytes, burst)

    def pad_params(self, burst: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) pad element counts; rows pad on the right."""
        return (0, 0, 0, _ceil_to(self.row_bytes, burst) - self.row_bytes)


def _ceil_to(value: int, quantum: int) -> int:
    return (value + quantum - 1) // quantum * quantum


@dataclass(frozen=True)
class Load:
    variant: Variant
    dst: SpadRange
    src: DramRange

    def __post_init__(self):
        if self.dst.len != self.src.len:
            raise MalformedField(
                f"load moves {self.src.len} dram bytes into {self.dst.len} spad bytes"
            )


@dataclass(frozen=True)
class Store:
    variant: Variant
    dst: DramRange
    src: SpadRange

    def __post_init__(self):
        if self.dst.len != self.src.len:
            raise MalformedField(
                f"store moves {self.src.len} spad bytes into {self.dst.len} dram bytes"
            )


@dataclass(frozen=True)
class TileLoop:
    """GEMM tile extents: out[m, n] += sum_k in1[m, k] * in2[n, k].

    Operands are contiguous row-major in their scratchpads, so the walk strides
    are implied: in1 rows are k bytes, in2 rows are k bytes, out rows are n
    32-bit accumulators.
    """

    m: int
    k: int
    n: int

    def __post_init__(self):
        if min(self.m, self.k, self.n) < 1:
            raise RangeOverflow("gemm extents must be at least 1")

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n


@dataclass(frozen=True)
class Gemm:
    """Tile matmul into the accumulator; `reset` overwrites instead of adding."""

    constant_time: bool
    out: SpadRange
    in1: SpadRange
    in2: SpadRange
    uop: TileLoop
    reset: bool = False

    def __post_init__(self):
        if self.out.kind != SpadKind.ACCUM:
            raise MalformedField("gemm output must target the accumulator")
        if self.in1.kind != SpadKind.INPUT or self.in2.kind != SpadKind.WEIGHT:
            raise MalformedField("gemm inputs must be (input, weight) scratchpads")
        if self.out.len != self.uop.m * self.uop.n * 4:
            raise MalformedField("gemm accumulator range disagrees with extents")
        if self.in1.len != self.uop.m * self.uop.k:
            raise MalformedField("gemm input range disagrees with extents")
        if self.in2.len != self.uop.n * self.uop.k:
            raise MalformedField("gemm weight range disagrees with extents")


@dataclass(frozen=True)
class Alu:
    """Elementwise op over `lanes` elements; lane widths are 1 or 4 bytes.

    ADD reads both operands (out[i] += in[i]); the others compute out[i]
    from in[i] and the immediate.  SHR with in_width=4, out_width=1 is the
    accumulator requantize step.
    """

    constant_time: bool
    op: AluOp
    out: SpadRange
    inp: SpadRange
    imm: Optional[int] = None
    in_width: int = 1
    out_width: int = 1

    def __post_init__(self):
        if self.in_width not in (1, 4) or self.out_width not in (1, 4):
            raise MalformedField("alu lane widths must be 1 or 4 bytes")
        if self.inp.len % self.in_width or self.out.len % self.out_width:
            raise MalformedField("alu range is not a whole number of lanes")
        if self.inp.len // self.in_width != self.out.len // self.out_width:
            raise MalformedField("alu operand lane counts disagree")
        if self.imm is not None and not (-(1 << 15) <= self.imm < (1 << 15)):
            raise RangeOverflow(f"alu immediate {self.imm} exceeds 16 bits")

    @property
    def lanes(self) -> int:
        return self.out.len // self.out_width


@dataclass(frozen=True)
class Zeroize:
    range: SpadRange


@dataclass(frozen=True)
class SetConfig:
    register: ConfigReg
    value: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << 32):
            raise RangeOverflow(f"config value {self.value} exceeds 32 bits")


@dataclass(frozen=True)
class Finish:
    pass


Instruction = Union[Load, Store, Gemm, Alu, Zeroize, SetConfig, Finish]

_U24_MAX = (1 << 24) - 1
_U16_MAX = (1 << 16) - 1
_U32_MAX = (1 << 32) - 1
GEMM_MAX_M = (1 << 13) - 1
GEMM_MAX_K = (1 << 14) - 1
GEMM_MAX_N = (1 << 13) - 1


def _check(value: int, limit: int, what: str) -> int:
    if not 0 <= value <= limit:
        raise RangeOverflow(f"{what}={value} exceeds its field ({limit})")
    return value


def _pack24(buf: bytearray, off: int, value: int, what: str) -> None:
    buf[off : off + 3] = _check(value, _U24_MAX, what).to_bytes(3, "little")


def _pack16(buf: bytearray, off: int, value: int, what: str) -> None:
    buf[off : off + 2] = _check(value, _U16_MAX, what).to_bytes(2, "little")


def _pack32(buf: bytearray, off: int, value: int, what: str) -> None:
    buf[off : off + 4] = _check(value, _U32_MAX, what).to_bytes(4, "little")


def _u24(raw: bytes, off: int) -> int:
    return int.from_bytes(raw[off : off + 3], "little")


def _u16(raw: bytes, off: int) -> int:
    return int.from_bytes(raw[off : off + 2], "little")


def _u32(raw: bytes, off: int) -> int:
    return int.from_bytes(raw[off : off + 4], "little")


def encode(instr: Instruction) -> bytes:
    """Encode one instruction into its 16-byte record."""
    buf = bytearray(INSTR_BYTES)
    if isinstance(instr, Load):
        buf[0] = Opcode.LOAD
        buf[1] = int(instr.variant) | (int(instr.dst.kind) << 4)
        _pack24(buf, 2, instr.dst.base, "spad base")
        _pack32(buf, 5, instr.src.base, "dram base")
        _pack16(buf, 9, instr.src.rows, "rows")
        _pack24(buf, 11, instr.src.row_bytes, "row bytes")
        _pack16(buf, 14, instr.src.row_stride, "row stride")
    elif isinstance(instr, Store):
        buf[0] = Opcode.STORE
        buf[1] = int(instr.variant) | (int(instr.src.kind) << 4)
        _pack24(buf, 2, instr.src.base, "spad base")
        _pack32(buf, 5, instr.dst.base, "dram base")
        _pack16(buf, 9, instr.dst.rows, "rows")
        _pack24(buf, 11, instr.dst.row_bytes, "row bytes")
        _pack16(buf, 14, instr.dst.row_stride, "row stride")
    elif isinstance(instr, Gemm):
        buf[0] = Opcode.GEMM
        buf[1] = int(instr.constant_time) | (int(instr.reset) << 1)
        _pack24(buf, 2, instr.out.base, "acc base")
        _pack24(buf, 5, instr.in1.base, "input base")
        _pack24(buf, 8, instr.in2.base, "weight base")
        m = _check(instr.uop.m, GEMM_MAX_M, "gemm m")
        k = _check(instr.uop.k, GEMM_MAX_K, "gemm k")
        n = _check(instr.uop.n, GEMM_MAX_N, "gemm n")
        buf[11:16] = (m | (k << 13) | (n << 27)).to_bytes(5, "little")
    elif isinstance(instr, Alu):
        buf[0] = Opcode.ALU
        has_imm = instr.imm is not None
        buf[1] = int(instr.constant_time) | (int(instr.op) << 1) | (int(has_imm) << 4)
        buf[2] = int(instr.out.kind) | (int(instr.inp.kind) << 4)
        _pack24(buf, 3, instr.out.base, "alu out base")
        _pack24(buf, 6, instr.inp.base, "alu in base")
        _pack24(buf, 9, instr.lanes, "alu elems")
        imm = instr.imm if has_imm else 0
        buf[12:14] = struct.pack("<h", imm)
        buf[14] = instr.in_width | (instr.out_width << 4)
    elif isinstance(instr, Zeroize):
        buf[0] = Opcode.ZEROIZE
        buf[2] = int(instr.range.kind)
        _pack24(buf, 3, instr.range.base, "zeroize base")
        _pack24(buf, 6, instr.range.len, "zeroize len")
    elif isinstance(instr, SetConfig):
        buf[0] = Opcode.SETCFG
        buf[1] = int(instr.register)
        _pack32(buf, 2, instr.value, "config value")
    elif isinstance(instr, Finish):
        buf[0] = Opcode.FINISH
    else:
        raise MalformedField(f"not an instruction: {instr!r}")
    return bytes(buf)


def _expect_zero(raw: bytes, start: int, what: str) -> None:
    if any(raw[start:]):
        raise MalformedField(f"{what}: reserved bytes nonzero")


def decode(raw: bytes) -> Instruction:
    """Decode one 16-byte record; exact inverse of :func:`encode`."""
    if len(raw) != INSTR_BYTES:
        raise MalformedField(f"instruction record must be {INSTR_BYTES} bytes, got {len(raw)}")
    opcode = raw[0]
    if opcode == Opcode.LOAD or opcode == Opcode.STORE:
        if raw[1] & ~0x33:
            raise MalformedField("load/store flag byte has reserved bits set")
        variant = Variant(raw[1] & 0x3)
        kind = SpadKind((raw[1] >> 4) & 0x3)
        spad_base = _u24(raw, 2)
        dram_base = _u32(raw, 5)
        rows, row_bytes, stride = _u16(raw, 9), _u24(raw, 11), _u16(raw, 14)
        if rows == 0 or row_bytes == 0:
            raise MalformedField("load/store with empty transfer")
        dram = DramRange(dram_base, rows, row_bytes, stride)
        spad = SpadRange(kind, spad_base, dram.len)
        if opcode == Opcode.LOAD:
            return Load(variant, spad, dram)
        return Store(variant, dram, spad)
    if opcode == Opcode.GEMM:
        if raw[1] & ~0x3:
            raise MalformedField("gemm flag byte has reserved bits set")
        packed = int.from_bytes(raw[11:16], "little")
        m = packed & GEMM_MAX_M
        k = (packed >> 13) & GEMM_MAX_K
        n = (packed >> 27) & GEMM_MAX_N
        if min(m, k, n) == 0:
            raise MalformedField("gemm with zero extent")
        return Gemm(
            constant_time=bool(raw[1] & 1),
            out=SpadRange(SpadKind.ACCUM, _u24(raw, 2), m * n * 4),
            in1=SpadRange(SpadKind.INPUT, _u24(raw, 5), m * k),
            in2=SpadRange(SpadKind.WEIGHT, _u24(raw, 8), n * k),
            uop=TileLoop(m, k, n),
            reset=bool(raw[1] & 2),
        )
    if opcode == Opcode.ALU:
        if raw[1] & ~0x1F:
            raise MalformedField("alu flag byte has reserved bits set")
        op_bits = (raw[1] >> 1) & 0x7
        if op_bits > max(AluOp):
            raise MalformedField(f"alu op {op_bits} is reserved")
        has_imm = bool(raw[1] & 0x10)
        out_kind = SpadKind(raw[2] & 0xF) if (raw[2] & 0xF) <= 3 else None
        in_kind = SpadKind(raw[2] >> 4) if (raw[2] >> 4) <= 3 else None
        if out_kind is None or in_kind is None:
            raise MalformedField("alu scratchpad kind out of range")
        lanes = _u24(raw, 9)
        if lanes == 0:
            raise MalformedField("alu with zero elements")
        in_w, out_w = raw[14] & 0xF, raw[14] >> 4
        if in_w not in (1, 4) or out_w not in (1, 4):
            raise MalformedField("alu lane widths must be 1 or 4 bytes")
        if raw[15]:
            raise MalformedField("alu reserved byte nonzero")
        (imm,) = struct.unpack("<h", raw[12:14])
        if not has_imm and imm != 0:
            raise MalformedField("alu immediate bytes set without has_imm flag")
        return Alu(
            constant_time=bool(raw[1] & 1),
            op=AluOp(op_bits),
            out=SpadRange(out_kind, _u24(raw, 3), lanes * out_w),
            inp=SpadRange(in_kind, _u24(raw, 6), lanes * in_w),
            imm=imm if has_imm else None,
            in_width=in_w,
            out_width=out_w,
        )
    if opcode == Opcode.ZEROIZE:
        if raw[1]:
            raise MalformedField("zeroize flag byte must be zero")
        if raw[2] > 3:
            raise MalformedField("zeroize scratchpad kind out of range")
        length = _u24(raw, 6)
        if length == 0:
            raise MalformedField("zeroize of zero bytes")
        _expect_zero(raw, 9, "zeroize")
        return Zeroize(SpadRange(SpadKind(raw[2]), _u24(raw, 3), length))
    if opcode == Opcode.SETCFG:
        if raw[1] > max(ConfigReg):
            raise MalformedField(f"config register {raw[1]} is reserved")
        _expect_zero(raw, 6, "setcfg")
        return SetConfig(ConfigReg(raw[1]), _u32(raw, 2))
    if opcode == Opcode.FINISH:
        if any(raw[1:]):
            raise MalformedField("finish payload must be zero")
        return Finish()
    raise UnknownOpcode(f"opcode {opcode:#04x} is not defined")


# ---------------------------------------------------------------------------
# Tenant grants and static validation


@dataclass(frozen=True)
class TenantGrant:
    """Resource lease one tenant holds: scratchpad quotas, queues, tiles, DMA."""

    tenant_id: int
    spad_quota: dict[SpadKind, int] = field(default_factory=dict)
    queue_depth: int = 16
    exec_tiles: int = 4
    bandwidth: int = 400_000_000
    dram_window: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not 0 <= self.tenant_id < MAX_TENANTS:
            raise ValueError(f"tenant_id must be 0..{MAX_TENANTS - 1}")
        for kind, quota in self.spad_quota.items():
            if quota % REGION_BYTES:
                raise ValueError(f"{kind.name} quota {quota} is not region-aligned")

    def quota(self, kind: SpadKind) -> int:
        return self.spad_quota.get(kind, 0)


@dataclass(frozen=True)
class Violation:
    index: int
    reason: str
    kind: Optional[SpadKind] = None
    base: int = 0
    len: int = 0

    def __str__(self) -> str:
        where = f" {self.kind.name}[{self.base}:{self.base + self.len}]" if self.kind else ""
        return f"instruction {self.index}: {self.reason}{where}"


def spad_operands(instr: Instruction) -> list[SpadRange]:
    """Scratchpad ranges an instruction touches."""
    if isinstance(instr, Load):
        return [instr.dst]
    if isinstance(instr, Store):
        return [instr.src]
    if isinstance(instr, Gemm):
        return [instr.out, instr.in1, instr.in2]
    if isinstance(instr, Alu):
        return [instr.out, instr.inp]
    if isinstance(instr, Zeroize):
        return [instr.range]
    return []


def dram_operand(instr: Instruction) -> Optional[DramRange]:
    if isinstance(instr, Load):
        return instr.src
    if isinstance(instr, Store):
        return instr.dst
    return None


def validate(program: Iterable[Instruction], grant: TenantGrant) -> Optional[Violation]:
    """Check every range against the grant; None when the program is clean.

    Returns the first offending instruction, mirroring the runtime base/bound
    trap the engine raises for the same access.
    """
    win_base, win_len = grant.dram_window
    for index, instr in enumerate(program):
        for rng in spad_operands(instr):
            if rng.end > grant.quota(rng.kind):
                return Violation(index, "scratchpad range exceeds quota", rng.kind, rng.base, rng.len)
        dram = dram_operand(instr)
        if dram is not None:
            if dram.base < win_base or dram.base + dram.span > win_base + win_len:
                return Violation(index, "dram range outside tenant window", None, dram.base, dram.span)
    return None


# ---------------------------------------------------------------------------
# Binary program files

_HEADER = struct.Struct("<4sBBHI4x")


def write_program(path, instructions: list[Instruction], tenant_id: int = 0) -> bytes:
    """Serialize a program; returns the bytes written."""
    body = b"".join(encode(i) for i in instructions)
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, tenant_id, 0, len(instructions)) + body
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def read_program(path) -> tuple[list[Instruction], int]:
    """Parse a program file; returns (instructions, tenant_id)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_program(blob)


def parse_program(blob: bytes) -> tuple[list[Instruction], int]:
    if len(blob) < _HEADER.size:
        raise MalformedField("program file shorter than its header")
    magic, version, tenant_id, _rsvd, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise MalformedField(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedField(f"unsupported format version {version}")
    body = blob[_HEADER.size :]
    if len(body) != count * INSTR_BYTES:
        raise MalformedField(f"expected {count} records, found {len(body) / INSTR_BYTES}")
    instrs = [decode(body[i * INSTR_BYTES : (i + 1) * INSTR_BYTES]) for i in range(count)]
    return instrs, tenant_id
