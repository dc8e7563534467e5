"""Encoding, decoding, and static validation of the instruction set."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sesm import isa
from sesm.isa import (
    Alu,
    AluOp,
    ConfigReg,
    DramRange,
    Finish,
    Gemm,
    Load,
    SetConfig,
    SpadKind,
    SpadRange,
    Store,
    TenantGrant,
    TileLoop,
    Variant,
    Zeroize,
)


def random_instruction(rng: np.random.Generator) -> isa.Instruction:
    """Uniform-ish sample over the valid instruction space."""
    pick = rng.integers(0, 7)
    kind = SpadKind(int(rng.integers(0, 4)))
    variant = Variant(int(rng.integers(0, 4)))
    if pick in (0, 1):
        rows = int(rng.integers(1, 9))
        row_bytes = int(rng.integers(1, 2048))
        stride = row_bytes + int(rng.integers(0, 4096)) if rows > 1 else int(rng.integers(0, 1 << 16))
        dram = DramRange(int(rng.integers(0, 1 << 28)), rows, row_bytes, stride)
        spad = SpadRange(kind, int(rng.integers(0, 1 << 20)), dram.len)
        return Load(variant, spad, dram) if pick == 0 else Store(variant, dram, spad)
    if pick == 2:
        m, k, n = (int(rng.integers(1, 256)) for _ in range(3))
        return Gemm(
            constant_time=bool(rng.integers(0, 2)),
            out=SpadRange(SpadKind.ACCUM, int(rng.integers(0, 1 << 18)) * 4, m * n * 4),
            in1=SpadRange(SpadKind.INPUT, int(rng.integers(0, 1 << 18)), m * k),
            in2=SpadRange(SpadKind.WEIGHT, int(rng.integers(0, 1 << 18)), n * k),
            uop=TileLoop(m, k, n),
            reset=bool(rng.integers(0, 2)),
        )
    if pick == 3:
        op = AluOp(int(rng.integers(0, 5)))
        lanes = int(rng.integers(1, 4096))
        in_w = int(rng.choice([1, 4]))
        out_w = int(rng.choice([1, 4]))
        has_imm = bool(rng.integers(0, 2))
        return Alu(
            constant_time=bool(rng.integers(0, 2)),
            op=op,
            out=SpadRange(kind, int(rng.integers(0, 1 << 18)), lanes * out_w),
            inp=SpadRange(SpadKind(int(rng.integers(0, 4))), int(rng.integers(0, 1 << 18)), lanes * in_w),
            imm=int(rng.integers(-(1 << 15), 1 << 15)) if has_imm else None,
            in_width=in_w,
            out_width=out_w,
        )
    if pick == 4:
        return Zeroize(SpadRange(kind, int(rng.integers(0, 1 << 20)), int(rng.integers(1, 1 << 20))))
    if pick == 5:
        return SetConfig(ConfigReg(int(rng.integers(0, 6))), int(rng.integers(0, 1 << 32)))
    return Finish()


def test_roundtrip_bulk():
    rng = np.random.default_rng(0xC0FFEE)
    for _ in range(10_000):
        instr = random_instruction(rng)
        blob = isa.encode(instr)
        assert len(blob) == isa.INSTR_BYTES
        assert isa.decode(blob) == instr


@given(st.integers(0, 2**63 - 1))
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(seed):
    rng = np.random.default_rng(seed)
    instr = random_instruction(rng)
    assert isa.decode(isa.encode(instr)) == instr


def test_decode_encode_identity_on_valid_bytes():
    rng = np.random.default_rng(7)
    for _ in range(2_000):
        blob = isa.encode(random_instruction(rng))
        assert isa.encode(isa.decode(blob)) == blob


def test_zeroize_layout():
    blob = isa.encode(Zeroize(SpadRange(SpadKind.INPUT, 0, 16384)))
    assert blob[0] == 0x05
    assert blob[2] == SpadKind.INPUT
    assert int.from_bytes(blob[3:6], "little") == 0
    assert int.from_bytes(blob[6:9], "little") == 16384


def test_finish_layout():
    blob = isa.encode(Finish())
    assert blob[0] == 0x07
    assert blob[1:] == bytes(15)


def test_all_zero_record_is_unknown_opcode():
    with pytest.raises(isa.UnknownOpcode):
        isa.decode(bytes(16))


def test_reserved_bits_rejected():
    blob = bytearray(isa.encode(Finish()))
    blob[9] = 1
    with pytest.raises(isa.MalformedField):
        isa.decode(bytes(blob))


def test_field_overflow_raises():
    big = DramRange(0, 1, 70_000, 70_000)
    with pytest.raises(isa.RangeOverflow):
        isa.encode(Load(Variant.PLAIN, SpadRange(SpadKind.INPUT, 0, big.len), big))
    with pytest.raises(isa.RangeOverflow):
        isa.encode(Gemm(False, SpadRange(SpadKind.ACCUM, 0, 9000 * 4),
                        SpadRange(SpadKind.INPUT, 0, 9000),
                        SpadRange(SpadKind.WEIGHT, 0, 1),
                        TileLoop(9000, 1, 1)))


def _grant(quota=64 * 1024, window=(0, 1 << 20)):
    return TenantGrant(
        tenant_id=0,
        spad_quota={k: quota for k in SpadKind},
        dram_window=window,
    )


def _load(spad_base, nbytes, dram_base=0):
    return Load(Variant.PLAIN,
                SpadRange(SpadKind.INPUT, spad_base, nbytes),
                DramRange(dram_base, 1, nbytes, 0))


def test_validate_in_bounds():
    grant = _grant()
    assert isa.validate([_load(0, 64 * 1024)], grant) is None


def test_validate_one_past_quota():
    grant = _grant()
    bad = _load(64 * 1024, 1)  # base == quota
    report = isa.validate([_load(0, 64), bad], grant)
    assert report is not None and report.index == 1
    assert report.kind == SpadKind.INPUT


def test_validate_dram_window():
    grant = _grant(window=(4096, 4096))
    ok = _load(0, 64, dram_base=4096)
    outside = _load(0, 64, dram_base=0)
    assert isa.validate([ok], grant) is None
    report = isa.validate([ok, outside], grant)
    assert report is not None and report.index == 1


def test_program_file_roundtrip(tmp_path):
    rng = np.random.default_rng(99)
    instrs = [random_instruction(rng) for _ in range(257)] + [Finish()]
    path = tmp_path / "prog.bin"
    blob = isa.write_program(path, instrs, tenant_id=2)
    back, tenant = isa.read_program(path)
    assert back == instrs
    assert tenant == 2
    # constant instruction width: body is exactly 16 bytes per record
    assert len(blob) - 16 == 16 * len(instrs)


def test_program_file_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(isa.MalformedField):
        isa.read_program(path)
