"""Lowers a layered model plus a threat declaration to an accelerator program.

Pass order is fixed: source labels -> tile autotuning -> information-flow
tracking -> zeroize planning -> burst-equalized layout -> code generation ->
configuration writes.

Tiling: each weighted layer runs as an output-stationary loop nest
(n-tile outer, m-tile middle, k-tile inner) with every scratchpad slot
double-buffered, so loads stream ahead of compute and stores drain behind it.
The tuner explores the divisor grid of (m, k, n) exhaustively up to a
candidate cap, ranks with an analytic cycle model, and re-ranks the finalists
with real single-layer simulations.  Tile search is keyed by layer shape and
resource grant only, never by secrecy flags, so binaries for different threat
models differ only in instruction variants, zeroizes, and config writes.

Variant selection: loads/stores of private tensors use encrypted variants;
when the model is private every transfer additionally goes through the
traffic shaper.  Compute over any private operand runs in constant-time
mode.  Zeroize placement is lazy: a private slot is cleared only when public
data is about to overwrite it, at spatial-mode layer boundaries where the
region lease may move, and at teardown.  A naive mode that clears a private
slot before every reuse is kept behind a flag for comparison runs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import isa
from .engine import AcceleratorConfig, Engine, TEMPORAL_SPAD
from .isa import (
    Alu,
    AluOp,
    ConfigReg,
    DramRange,
    Finish,
    Gemm,
    Instruction,
    Load,
    REGION_BYTES,
    SetConfig,
    SpadKind,
    SpadRange,
    Store,
    TenantGrant,
    Variant,
    Zeroize,
)
from .memsys import Cipher
from .workload import (
    Label,
    LayerKind,
    LayerSpec,
    ModelSpec,
    PragmaSet,
    Sharing,
    ThreatModel,
    derive_labels,
    join,
)

MB = 1024 * 1024
DEFAULT_DRAM_BASE = 16 * MB
REQUANT_SHIFT = 6


class CompileError(Exception):
    pass


class NoLegalTiling(CompileError):
    pass


@dataclass
class OversubscriptionError(CompileError):
    resource: str
    requested: int
    available: int

    def __str__(self) -> str:
        return f"{self.resource}: requested {self.requested}, available {self.available}"


# ---------------------------------------------------------------------------
# Tiling


BURST = 64
BUS_ROUND = 8 * BURST  # one full walk of the DRAM banks


def _round_up(n: int, quantum: int) -> int:
    return -(-n // quantum) * quantum


@dataclass(frozen=True)
class TileConfig:
    tm: int
    tk: int
    tn: int

    def footprint(self, kind: SpadKind) -> int:
        """Bytes one slot occupies; every slot is double-buffered.

        Streamed kinds are padded to whole bank rounds so every transfer
        starts at bank zero and can never collide with its neighbours."""
        if kind == SpadKind.INPUT:
            return _round_up(self.tm * self.tk, BUS_ROUND)
        if kind == SpadKind.WEIGHT:
            return _round_up(self.tn * self.tk, BUS_ROUND)
        if kind == SpadKind.ACCUM:
            return self.tm * self.tn * 4
        return _round_up(self.tm * self.tn, BUS_ROUND)

    def chunk(self, kind: SpadKind) -> int:
        """Transfer length for one streamed tile of this kind."""
        return self.footprint(kind)

    def counts(self, layer: LayerSpec) -> tuple[int, int, int]:
        return (layer.gemm_m // self.tm, layer.gemm_k // self.tk, layer.gemm_n // self.tn)


def _divisors(n: int, cap: int) -> list[int]:
    out = [d for d in range(1, min(n, cap) + 1) if n % d == 0]
    return out


def legal_tilings(layer: LayerSpec, quotas: dict[SpadKind, int]) -> list[TileConfig]:
    """Divisor-grid candidates whose double-buffered slots fit the quotas."""
    m, k, n = layer.gemm_m, layer.gemm_k, layer.gemm_n
    cands = []
    for tm in _divisors(m, isa.GEMM_MAX_M):
        if 2 * tm > quotas.get(SpadKind.INPUT, 0):  # need at least tk=1
            continue
        for tk in _divisors(k, isa.GEMM_MAX_K):
            if 2 * tm * tk > quotas.get(SpadKind.INPUT, 0):
                break
            for tn in _divisors(n, isa.GEMM_MAX_N):
                cfg = TileConfig(tm, tk, tn)
                if 2 * cfg.footprint(SpadKind.WEIGHT) > quotas.get(SpadKind.WEIGHT, 0):
                    break
                if 2 * cfg.footprint(SpadKind.ACCUM) > quotas.get(SpadKind.ACCUM, 0):
                    break
                if 2 * cfg.footprint(SpadKind.OUTPUT) > quotas.get(SpadKind.OUTPUT, 0):
                    break
                cands.append(cfg)
    return cands


EXPLORE_CAP = 4096


def analytic_cost(layer: LayerSpec, cfg: TileConfig, bom: "ResourceBOM") -> float:
    """Fast cycle estimate: steady-state max of compute and DMA per k-iter,
    plus per-tile epilogue and instruction overheads."""
    nm, nk, nn = layer.gemm_m // cfg.tm, layer.gemm_k // cfg.tk, layer.gemm_n // cfg.tn
    iters = nm * nk * nn
    burst = 64
    cyc_per_burst = max(1, round(burst / (bom.bandwidth * 1e-8)))
    row = lambda b: -(-b // burst) * burst
    load_bytes = cfg.tm * row(cfg.tk) + cfg.tn * row(cfg.tk)
    dma_iter = load_bytes / burst * cyc_per_burst
    macs_per_cycle = bom.exec_tiles * 64
    gemm_iter = cfg.tm * cfg.tk * cfg.tn / macs_per_cycle
    lanes_per_cycle = bom.exec_tiles * 16
    epilogue = 2 * (cfg.tm * cfg.tn / lanes_per_cycle)
    store_bytes = cfg.tm * row(cfg.tn)
    store_iter = store_bytes / burst * cyc_per_burst
    tiles = nm * nn
    return (iters * max(dma_iter, gemm_iter)
            + tiles * max(epilogue, store_iter * 0.5)
            + iters * 3 + tiles * 4)


def autotune(layer: LayerSpec, bom_limits: "ResourceBOM", threat: ThreatModel,
             cost: Callable[[TileConfig], float]) -> TileConfig:
    """Deterministic argmin of `cost` over the legal tile grid.

    Exhaustive when the candidate count fits EXPLORE_CAP; otherwise an
    evenly strided subsample of the (sorted) grid is explored.
    """
    del threat  # secrecy never steers the search; resources already did
    cands = legal_tilings(layer, bom_limits.spad)
    if not cands:
        raise NoLegalTiling(f"no tile of {layer.describe()!r} fits the scratchpad quotas")
    cands.sort(key=lambda c: (c.tm, c.tk, c.tn))
    if len(cands) > EXPLORE_CAP:
        step = -(-len(cands) // EXPLORE_CAP)
        cands = cands[::step]
    best = min(cands, key=lambda c: (cost(c), c.tm, c.tk, c.tn))
    return best


class Tuner:
    """Autotune wrapper: analytic ranking plus simulation re-ranking of
    finalists, cached by (layer shape, grant resources)."""

    def __init__(self, sim_finalists: int = 4):
        self.sim_finalists = sim_finalists
        self.cache: dict[tuple, TileConfig] = {}

    def tune(self, layer: LayerSpec, bom: "ResourceBOM", threat: ThreatModel) -> TileConfig:
        if not layer.weighted:
            return TileConfig(1, 1, 1)
        key = (layer.gemm_m, layer.gemm_k, layer.gemm_n,
               tuple(sorted((k.name, v) for k, v in bom.spad.items())),
               bom.bandwidth, bom.exec_tiles)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        best = autotune(layer, bom, threat, lambda c: analytic_cost(layer, c, bom))
        if self.sim_finalists > 1:
            cands = legal_tilings(layer, bom.spad)
            cands.sort(key=lambda c: (analytic_cost(layer, c, bom), c.tm, c.tk, c.tn))
            finalists = cands[: self.sim_finalists]
            scored = [(simulate_layer_cycles(layer, cfg, bom), cfg.tm, cfg.tk, cfg.tn, cfg)
                      for cfg in finalists]
            scored.sort(key=lambda t: t[:4])
            best = scored[0][4]
        self.cache[key] = best
        return best


def simulate_layer_cycles(layer: LayerSpec, cfg: TileConfig, bom: "ResourceBOM") -> int:
    """Cost oracle: run the single layer, public labels, under the grant."""
    model = ModelSpec("probe", (layer,))
    prog = _lower(model, ThreatModel(), bom, {0: cfg}, naive_zeroize=False)
    config = AcceleratorConfig(mem=_mem_config())
    engine = Engine(config)
    grant = prog.grant()
    data = generate_dram_data(model, prog.layout, seed=1, tenant=0)
    engine.admit(prog.instructions, grant, data, prog.layer_of_instr, Cipher.NONE)
    results = engine.run()
    return results[grant.tenant_id].cycles


def _mem_config():
    from .memsys import MemConfig

    return MemConfig()


# ---------------------------------------------------------------------------
# Resource bill of materials


@dataclass(frozen=True)
class ResourceBOM:
    bandwidth: int
    spad: dict[SpadKind, int]
    queue_depth: int
    exec_tiles: int
    exec_mode: Sharing

    def region_aligned(self) -> dict[SpadKind, int]:
        return {k: -(-v // REGION_BYTES) * REGION_BYTES for k, v in self.spad.items()}


def platform_capacity(mode: Sharing) -> ResourceBOM:
    """Per-tenant capacity of the reference platform."""
    if mode == Sharing.TEMPORAL:
        return ResourceBOM(400_000_000, dict(TEMPORAL_SPAD), 16, 4, mode)
    return ResourceBOM(100_000_000, {k: v // 4 for k, v in TEMPORAL_SPAD.items()}, 16, 1, mode)


def compute_bom(pragmas: PragmaSet, tiles: dict[int, TileConfig],
                model: Optional[ModelSpec] = None) -> ResourceBOM:
    """Max per-kind footprint over layers + pragma-declared resources,
    rejected when it exceeds the platform capacity for the sharing mode."""
    cap = platform_capacity(pragmas.exec_mode)
    need: dict[SpadKind, int] = {k: REGION_BYTES for k in SpadKind}
    for idx, cfg in sorted(tiles.items()):
        layer = model.layers[idx] if model is not None else None
        for kind in SpadKind:
            slot = cfg.footprint(kind)
            if layer is not None and not layer.weighted:
                slot = _alu_slot_bytes(layer, cfg)
            need[kind] = max(need[kind], 2 * slot)
    for kind in SpadKind:
        declared = pragmas.spad_size.get(kind)
        if declared is not None:
            if declared < need[kind]:
                raise OversubscriptionError(f"{kind.name} scratchpad pragma", need[kind], declared)
            need[kind] = declared
        need[kind] = -(-need[kind] // REGION_BYTES) * REGION_BYTES
        if need[kind] > cap.spad[kind]:
            raise OversubscriptionError(f"{kind.name} scratchpad", need[kind], cap.spad[kind])
    if pragmas.queue_depth > cap.queue_depth:
        raise OversubscriptionError("dependency queue depth", pragmas.queue_depth, cap.queue_depth)
    bandwidth = pragmas.bandwidth
    if bandwidth > cap.bandwidth:
        raise OversubscriptionError("shaper bandwidth", bandwidth, cap.bandwidth)
    return ResourceBOM(bandwidth, need, pragmas.queue_depth, cap.exec_tiles, pragmas.exec_mode)


def _alu_slot_bytes(layer: LayerSpec, cfg: TileConfig) -> int:
    del cfg
    return min(layer.ofm_bytes, 8192)


# ---------------------------------------------------------------------------
# Information-flow tracking


def propagate_labels(n_nodes: int, edges: list[tuple[int, int]],
                     sources: dict[int, Label]) -> list[Label]:
    """Join-over-edges fixpoint: node label = join of its own source label
    and every predecessor's label (Public < Private)."""
    labels = [sources.get(i, Label.PUBLIC) for i in range(n_nodes)]
    order = sorted(edges)
    changed = True
    while changed:
        changed = False
        for src, dst in order:
            new = join(labels[dst], labels[src])
            if new != labels[dst]:
                labels[dst] = new
                changed = True
    return labels


@dataclass
class FlowMap:
    """Per-tensor labels for one model under one threat declaration."""

    data: Label
    weights: Label
    ifm: list[Label]
    acc: list[Label]
    ofm: list[Label]
    warnings: list[str] = field(default_factory=list)

    def layer_private(self, idx: int) -> bool:
        return Label.PRIVATE in (self.ifm[idx], self.acc[idx], self.ofm[idx])


def track_flows(model: ModelSpec, source_labels: dict[str, Label],
                declared: Optional[dict[str, Label]] = None) -> FlowMap:
    """Propagate source labels through the layer dataflow.

    Every operation output joins its operand labels; a tensor the user
    declared Public that ends up with a Private producer is flagged."""
    data, weights = source_labels["data"], source_labels["weights"]
    n = len(model.layers)
    ifm, acc, ofm = [], [], []
    prev_ofm = data
    history: list[Label] = []
    for idx, layer in enumerate(model.layers):
        cur_ifm = prev_ofm
        if layer.weighted:
            cur_acc = join(cur_ifm, weights)
        elif layer.kind == LayerKind.ADD:
            skip = history[idx - 2] if idx >= 2 else cur_ifm
            cur_acc = join(cur_ifm, skip)
        else:
            cur_acc = cur_ifm
        cur_ofm = cur_acc
        ifm.append(cur_ifm)
        acc.append(cur_acc)
        ofm.append(cur_ofm)
        history.append(cur_ofm)
        prev_ofm = cur_ofm
    flow = FlowMap(data, weights, ifm, acc, ofm)
    for name, lab in (declared or {}).items():
        if lab != Label.PUBLIC:
            continue
        derived = flow.ofm[-1] if name == "ofm" else source_labels.get(name, Label.PUBLIC)
        if derived == Label.PRIVATE:
            flow.warnings.append(
                f"variable {name!r} declared public but carries private data")
    return flow


# ---------------------------------------------------------------------------
# DRAM layout and burst equalization


def _align(n: int, quantum: int = BUS_ROUND) -> int:
    return -(-n // quantum) * quantum


@dataclass
class DramLayout:
    """Tile-major placement: every transfer the generated code issues is one
    contiguous burst-aligned chunk, so a streaming tenant walks the banks
    round-robin and never stalls on its own bank."""

    window: tuple[int, int]
    input_addr: int
    weight_addr: dict[int, int]     # layer -> base
    fm_addr: tuple[int, int]        # ping, pong
    fm_bytes: int
    tiles: dict[int, TileConfig]

    def ifm_region(self, layer_idx: int) -> int:
        return self.input_addr if layer_idx == 0 else self.fm_addr[(layer_idx - 1) % 2]

    def ofm_region(self, layer_idx: int) -> int:
        return self.fm_addr[layer_idx % 2]

    def ifm_chunk(self, layer: LayerSpec, idx: int, m0: int, k0: int) -> int:
        """Offset of input tile (m0, k0), packed [m][k] in consumption order."""
        cfg = self.tiles[idx]
        _nm, nk, _nn = cfg.counts(layer)
        return (m0 * nk + k0) * cfg.chunk(SpadKind.INPUT)

    def weight_chunk(self, layer: LayerSpec, idx: int, n0: int, k0: int) -> int:
        cfg = self.tiles[idx]
        _nm, nk, _nn = cfg.counts(layer)
        return (n0 * nk + k0) * cfg.chunk(SpadKind.WEIGHT)

    def ofm_chunk(self, layer: LayerSpec, idx: int, m0: int, n0: int) -> int:
        cfg = self.tiles[idx]
        _nm, _nk, nn = cfg.counts(layer)
        return (m0 * nn + n0) * cfg.chunk(SpadKind.OUTPUT)


def _layer_spans(layer: LayerSpec, cfg: TileConfig) -> tuple[int, int]:
    """(read span, write span) of the packed tile chunks of one layer."""
    if layer.weighted:
        nm, nk, nn = cfg.counts(layer)
        return nm * nk * cfg.chunk(SpadKind.INPUT), nm * nn * cfg.chunk(SpadKind.OUTPUT)
    total = layer.ofm_bytes
    return _align(total), _align(total)


def plan_layout(model: ModelSpec, base: int, tiles: dict[int, TileConfig]) -> DramLayout:
    cursor = _align(base, MB)
    input_addr = cursor
    cursor += _layer_spans(model.layers[0], tiles[0])[0]
    weight_addr = {}
    for idx, layer in enumerate(model.layers):
        if layer.weighted:
            weight_addr[idx] = cursor
            nm, nk, nn = tiles[idx].counts(layer)
            cursor += nn * nk * tiles[idx].chunk(SpadKind.WEIGHT)
    fm_bytes = 0
    for idx, layer in enumerate(model.layers):
        rd, wr = _layer_spans(layer, tiles[idx])
        fm_bytes = max(fm_bytes, wr, rd if idx > 0 else 0)
    fm_bytes = _align(fm_bytes)
    fm_a, fm_b = cursor, cursor + fm_bytes
    cursor = fm_b + fm_bytes
    window_len = _align(cursor - _align(base, MB), MB)
    return DramLayout((_align(base, MB), window_len), input_addr, weight_addr,
                      (fm_a, fm_b), fm_bytes, dict(tiles))


def equalize_bursts(rng: DramRange, burst: int = BURST,
                    row_buffer: int = 2048) -> list[tuple[int, int]]:
    """Padded burst list (addr, payload) for one transfer.

    Every burst is `burst` bytes on the bus (payload short on padded tails)
    and none crosses a DRAM row-buffer boundary.
    """
    from .memsys import MemConfig, split_bursts

    cfg = MemConfig(burst_bytes=burst, row_buffer=row_buffer)
    bursts = split_bursts(rng, cfg)
    assert len(bursts) * burst == rng.padded_len(burst) or rng.base % burst, \
        "burst equalization produced a non-padded transfer"
    return bursts


# ---------------------------------------------------------------------------
# Code generation


@dataclass
class SlotState:
    label: Label = Label.PUBLIC
    ever_private: bool = False


@dataclass
class ZeroizePlan:
    naive: bool = False
    inserted: int = 0
    bytes_cleared: int = 0


@dataclass
class CompiledProgram:
    model: ModelSpec
    threat: ThreatModel
    instructions: list[Instruction]
    config_writes: list[SetConfig]
    bom: ResourceBOM
    layout: DramLayout
    tiles: dict[int, TileConfig]
    layer_of_instr: list[int]
    label_map: list[tuple[int, str, int, int, str]]  # (instr, kind, base, len, label)
    stats: dict
    tenant_id: int = 0

    def grant(self) -> TenantGrant:
        return TenantGrant(
            tenant_id=self.tenant_id,
            spad_quota=self.bom.region_aligned(),
            queue_depth=self.bom.queue_depth,
            exec_tiles=self.bom.exec_tiles,
            bandwidth=self.bom.bandwidth,
            dram_window=self.layout.window,
        )

    @property
    def size_bytes(self) -> int:
        return isa.INSTR_BYTES * len(self.instructions)

    def write(self, path) -> bytes:
        return isa.write_program(path, self.instructions, self.tenant_id)


def _mix_key(instr: Instruction) -> str:
    if isinstance(instr, Load):
        return f"load_{instr.variant.name.lower()}"
    if isinstance(instr, Store):
        return f"store_{instr.variant.name.lower()}"
    if isinstance(instr, Gemm):
        return "gemm_c" if instr.constant_time else "gemm"
    if isinstance(instr, Alu):
        return "alu_c" if instr.constant_time else "alu"
    if isinstance(instr, Zeroize):
        return "zeroize"
    if isinstance(instr, SetConfig):
        return "setcfg"
    return "finish"


class _Emitter:
    """Accumulates instructions plus slot labels and zeroize bookkeeping."""

    def __init__(self, bom: ResourceBOM, threat: ThreatModel, naive: bool):
        self.bom = bom
        self.threat = threat
        self.naive = naive
        self.instructions: list[Instruction] = []
        self.layers: list[int] = []
        self.slots: dict[tuple[SpadKind, int, int], SlotState] = {}
        self.label_map: list[tuple[int, str, int, int, str]] = []
        self.zeroize = ZeroizePlan(naive)
        self.quota = bom.region_aligned()
        self.load_parity = {SpadKind.INPUT: 0, SpadKind.WEIGHT: 0, SpadKind.OUTPUT: 0}

    def emit(self, instr: Instruction, layer: int) -> None:
        self.instructions.append(instr)
        self.layers.append(layer)

    def slot_base(self, kind: SpadKind, half: int) -> int:
        return (self.quota[kind] // 2) * half

    def _mark(self, kind: SpadKind, base: int, length: int, label: Label) -> None:
        key = (kind, base, length)
        st = self.slots.setdefault(key, SlotState())
        st.label = label
        st.ever_private = st.ever_private or label == Label.PRIVATE
        self.label_map.append((len(self.instructions), kind.name, base, length, label.value))

    def _zeroize_before_overwrite(self, kind: SpadKind, base: int, length: int,
                                  incoming: Label, layer: int) -> None:
        rng = (base, base + length)
        for (k, b, ln), st in list(self.slots.items()):
            if k != kind or st.label != Label.PRIVATE:
                continue
            if b < rng[1] and rng[0] < b + ln:
                if incoming == Label.PUBLIC:
                    self._emit_zeroize(kind, b, ln, layer)
                    st.label = Label.PUBLIC

    def _emit_zeroize(self, kind: SpadKind, base: int, length: int, layer: int) -> None:
        self.emit(Zeroize(SpadRange(kind, base, length)), layer)
        self.zeroize.inserted += 1
        self.zeroize.bytes_cleared += length

    def write_slot(self, kind: SpadKind, base: int, length: int, label: Label, layer: int,
                   fresh: bool = True) -> None:
        """Bookkeeping around any instruction that overwrites a slot.

        `fresh` marks the start of a value lifetime; mid-chain updates (an
        accumulation in progress) must never trigger a clearing write."""
        if fresh:
            self._zeroize_before_overwrite(kind, base, length, label, layer)
        self._mark(kind, base, length, label)

    def after_use(self, rng: SpadRange, layer: int) -> None:
        """Naive policy: a private streamed operand is cleared as soon as its
        consuming instruction has read it.  The optimizer instead leaves
        same-label slots in place for the next tile to reuse."""
        if not self.naive:
            return
        key = (rng.kind, rng.base, rng.len)
        st = self.slots.get(key)
        if st is not None and st.label == Label.PRIVATE:
            self._emit_zeroize(rng.kind, rng.base, rng.len, layer)
            st.label = Label.PUBLIC  # cleared; reloads re-mark it

    def _region_span(self, kind: SpadKind, lo: int, hi: int) -> tuple[int, int]:
        """Widen a byte span to whole ownership regions (clipped to quota) so
        the clear also scrubs partially-covered regions before release."""
        lo = (lo // REGION_BYTES) * REGION_BYTES
        hi = min(self.quota[kind], -(-hi // REGION_BYTES) * REGION_BYTES)
        return lo, hi

    def _clear_private(self, layer: int, note_all_public: bool) -> None:
        for kind in SpadKind:
            spans = [(b, b + ln) for (k, b, ln), st in self.slots.items()
                     if k == kind and st.label == Label.PRIVATE]
            if spans:
                lo, hi = self._region_span(kind, min(s[0] for s in spans),
                                           max(s[1] for s in spans))
                self._emit_zeroize(kind, lo, hi - lo, layer)
        if note_all_public:
            for st in self.slots.values():
                st.label = Label.PUBLIC

    def layer_boundary(self, layer: int) -> None:
        """Spatial mode may re-lease regions between layers: clear private
        data at whole-region granularity before the lease can move."""
        if self.threat.sharing != Sharing.SPATIAL:
            return
        self._clear_private(layer, note_all_public=True)

    def teardown(self, layer: int) -> None:
        """Clear every region that still holds private bytes: one coalesced
        whole-region zeroize per scratchpad kind."""
        self._clear_private(layer, note_all_public=True)


def _load_variant(label: Label, shaped: bool) -> Variant:
    if label == Label.PRIVATE:
        return Variant.SE if shaped else Variant.E
    return Variant.S if shaped else Variant.PLAIN


def _lower(model: ModelSpec, threat: ThreatModel, bom: ResourceBOM,
           tiles: dict[int, TileConfig], naive_zeroize: bool,
           flow: Optional[FlowMap] = None, layout: Optional[DramLayout] = None,
           dram_base: int = DEFAULT_DRAM_BASE) -> CompiledProgram:
    layout = layout or plan_layout(model, dram_base, tiles)
    if flow is None:
        pr = PragmaSet.from_threat(threat, bandwidth=bom.bandwidth)
        flow = track_flows(model, derive_labels(model, pr))
    em = _Emitter(bom, threat, naive_zeroize)
    shaped = threat.shaped

    config_writes = _config_writes(bom, layout, shaped)
    for cw in config_writes:
        em.emit(cw, -1)

    for idx, layer in enumerate(model.layers):
        cfg = tiles[idx]
        if layer.weighted:
            _emit_weighted_layer(em, model, layout, idx, layer, cfg, flow, shaped)
        elif layer.kind == LayerKind.ADD:
            _emit_add_layer(em, model, layout, idx, layer, flow, shaped)
        else:
            _emit_alu_layer(em, model, layout, idx, layer, flow, shaped)
        if idx < len(model.layers) - 1:
            em.layer_boundary(idx)
    em.teardown(len(model.layers) - 1)
    em.emit(Finish(), len(model.layers) - 1)

    mix: dict[str, int] = {}
    for instr in em.instructions:
        key = _mix_key(instr)
        mix[key] = mix.get(key, 0) + 1
    stats = {
        "mix": dict(sorted(mix.items())),
        "zeroize_instructions": em.zeroize.inserted,
        "zeroized_bytes": em.zeroize.bytes_cleared,
        "instructions": len(em.instructions),
        "size_bytes": isa.INSTR_BYTES * len(em.instructions),
        "warnings": list(flow.warnings),
    }
    return CompiledProgram(model, threat, em.instructions, config_writes, bom, layout,
                           tiles, em.layers, em.label_map, stats)


def _config_writes(bom: ResourceBOM, layout: DramLayout, shaped: bool) -> list[SetConfig]:
    # the full register file is programmed for every threat model so that
    # binary-size deltas come from zeroize and variant selection alone
    quota = bom.region_aligned()
    packed = (quota[SpadKind.INPUT] // REGION_BYTES
              | (quota[SpadKind.WEIGHT] // REGION_BYTES) << 8
              | (quota[SpadKind.ACCUM] // REGION_BYTES) << 16
              | (quota[SpadKind.OUTPUT] // REGION_BYTES) << 24)
    base, length = layout.window
    return [
        SetConfig(ConfigReg.SPAD_QUOTA, packed),
        SetConfig(ConfigReg.QUEUE_DEPTH, bom.queue_depth),
        SetConfig(ConfigReg.EXEC_TILES, bom.exec_tiles),
        SetConfig(ConfigReg.BANDWIDTH, bom.bandwidth),
        SetConfig(ConfigReg.ADDR_RANGE, ((base // MB) << 16) | (length // MB)),
        SetConfig(ConfigReg.SHAPER_EN, 1 if shaped else 0),
    ]


def _emit_weighted_layer(em: _Emitter, model: ModelSpec, layout: DramLayout, idx: int,
                         layer: LayerSpec, cfg: TileConfig, flow: FlowMap, shaped: bool) -> None:
    nm, nk, nn = cfg.counts(layer)
    ifm_base = layout.ifm_region(idx)
    w_base = layout.weight_addr[idx]
    ofm_base = layout.ofm_region(idx)
    ifm_label = flow.ifm[idx]
    w_label = flow.weights
    acc_label = flow.acc[idx]
    ofm_label = flow.ofm[idx]
    ct = Label.PRIVATE in (ifm_label, w_label, acc_label)
    load_ifm_variant = _load_variant(ifm_label, shaped)
    load_w_variant = _load_variant(w_label, shaped)
    store_variant = _load_variant(ofm_label, shaped)

    for n0 in range(nn):
        for m0 in range(nm):
            acc_half = (n0 * nm + m0) % 2
            acc_off = em.slot_base(SpadKind.ACCUM, acc_half)
            out_off = em.slot_base(SpadKind.OUTPUT, acc_half)
            for k0 in range(nk):
                in_half = em.load_parity[SpadKind.INPUT] % 2
                em.load_parity[SpadKind.INPUT] += 1
                in_off = em.slot_base(SpadKind.INPUT, in_half)
                in_chunk = cfg.chunk(SpadKind.INPUT)
                src = DramRange(ifm_base + layout.ifm_chunk(layer, idx, m0, k0),
                                1, in_chunk, 0)
                em.write_slot(SpadKind.INPUT, in_off, in_chunk, ifm_label, idx)
                em.emit(Load(load_ifm_variant,
                             SpadRange(SpadKind.INPUT, in_off, in_chunk), src), idx)

                w_half = em.load_parity[SpadKind.WEIGHT] % 2
                em.load_parity[SpadKind.WEIGHT] += 1
                w_off = em.slot_base(SpadKind.WEIGHT, w_half)
                w_chunk = cfg.chunk(SpadKind.WEIGHT)
                wsrc = DramRange(w_base + layout.weight_chunk(layer, idx, n0, k0),
                                 1, w_chunk, 0)
                em.write_slot(SpadKind.WEIGHT, w_off, w_chunk, w_label, idx)
                em.emit(Load(load_w_variant,
                             SpadRange(SpadKind.WEIGHT, w_off, w_chunk), wsrc), idx)

                em.write_slot(SpadKind.ACCUM, acc_off, cfg.tm * cfg.tn * 4, acc_label, idx,
                              fresh=(k0 == 0))
                em.emit(Gemm(constant_time=ct,
                             out=SpadRange(SpadKind.ACCUM, acc_off, cfg.tm * cfg.tn * 4),
                             in1=SpadRange(SpadKind.INPUT, in_off, cfg.tm * cfg.tk),
                             in2=SpadRange(SpadKind.WEIGHT, w_off, cfg.tn * cfg.tk),
                             uop=isa.TileLoop(cfg.tm, cfg.tk, cfg.tn),
                             reset=(k0 == 0)), idx)
                em.after_use(SpadRange(SpadKind.INPUT, in_off, cfg.tm * cfg.tk), idx)
                em.after_use(SpadRange(SpadKind.WEIGHT, w_off, cfg.tn * cfg.tk), idx)

            acc_rng = SpadRange(SpadKind.ACCUM, acc_off, cfg.tm * cfg.tn * 4)
            em.write_slot(SpadKind.ACCUM, acc_off, acc_rng.len, acc_label, idx, fresh=False)
            em.emit(Alu(ct, AluOp.MAX, acc_rng, acc_rng, imm=0, in_width=4, out_width=4), idx)
            out_chunk = cfg.chunk(SpadKind.OUTPUT)
            out_rng = SpadRange(SpadKind.OUTPUT, out_off, cfg.tm * cfg.tn)
            em.write_slot(SpadKind.OUTPUT, out_off, out_chunk, ofm_label, idx)
            em.emit(Alu(ct, AluOp.SHR, out_rng, acc_rng, imm=REQUANT_SHIFT,
                        in_width=4, out_width=1), idx)
            store_rng = SpadRange(SpadKind.OUTPUT, out_off, out_chunk)
            dst = DramRange(ofm_base + layout.ofm_chunk(layer, idx, m0, n0),
                            1, out_chunk, 0)
            em.emit(Store(store_variant, dst, store_rng), idx)
            em.after_use(store_rng, idx)


def _alu_tile_bytes(layer: LayerSpec, em: _Emitter) -> int:
    cap = min(em.quota[SpadKind.INPUT] // 2, em.quota[SpadKind.OUTPUT] // 2, 8192)
    total = layer.ofm_bytes
    t = min(total, cap)
    # whole bank rounds keep the streamed chunks conflict-free
    rounds = (t // BUS_ROUND) * BUS_ROUND
    while rounds >= BUS_ROUND and total % rounds:
        rounds -= BUS_ROUND
    if rounds >= BUS_ROUND:
        return rounds
    while total % t:
        t -= 1
    return t


def _emit_add_layer(em: _Emitter, model: ModelSpec, layout: DramLayout, idx: int,
                    layer: LayerSpec, flow: FlowMap, shaped: bool) -> None:
    """Residual join: stream both operand tensors, add, store."""
    total = layer.ofm_bytes
    tile = _alu_tile_bytes(layer, em)
    cur_base = layout.ifm_region(idx)
    skip_base = layout.ofm_region(idx)  # holds the tensor from two layers back
    ofm_base = layout.ofm_region(idx)
    label = flow.ofm[idx]
    ct = label == Label.PRIVATE
    variant = _load_variant(flow.ifm[idx], shaped)
    skip_variant = _load_variant(label, shaped)
    for t0 in range(total // tile):
        half = t0 % 2
        in_off = em.slot_base(SpadKind.INPUT, half)
        out_off = em.slot_base(SpadKind.OUTPUT, half)
        em.write_slot(SpadKind.INPUT, in_off, tile, flow.ifm[idx], idx)
        em.emit(Load(variant, SpadRange(SpadKind.INPUT, in_off, tile),
                     DramRange(cur_base + t0 * tile, 1, tile, 0)), idx)
        em.write_slot(SpadKind.OUTPUT, out_off, tile, label, idx)
        em.emit(Load(skip_variant, SpadRange(SpadKind.OUTPUT, out_off, tile),
                     DramRange(skip_base + t0 * tile, 1, tile, 0)), idx)
        out_rng = SpadRange(SpadKind.OUTPUT, out_off, tile)
        em.write_slot(SpadKind.OUTPUT, out_off, tile, label, idx, fresh=False)
        em.emit(Alu(ct, AluOp.ADD, out_rng, SpadRange(SpadKind.INPUT, in_off, tile),
                    in_width=1, out_width=1), idx)
        em.after_use(SpadRange(SpadKind.INPUT, in_off, tile), idx)
        em.emit(Store(_load_variant(label, shaped),
                      DramRange(ofm_base + t0 * tile, 1, tile, 0), out_rng), idx)
        em.after_use(out_rng, idx)


def _emit_alu_layer(em: _Emitter, model: ModelSpec, layout: DramLayout, idx: int,
                    layer: LayerSpec, flow: FlowMap, shaped: bool) -> None:
    """Pooling / standalone activation: elementwise pass over the tensor."""
    total = layer.ofm_bytes
    tile = _alu_tile_bytes(layer, em)
    src_base = layout.ifm_region(idx)
    dst_base = layout.ofm_region(idx)
    label = flow.ofm[idx]
    ct = label == Label.PRIVATE
    variant = _load_variant(flow.ifm[idx], shaped)
    for t0 in range(total // tile):
        half = t0 % 2
        in_off = em.slot_base(SpadKind.INPUT, half)
        out_off = em.slot_base(SpadKind.OUTPUT, half)
        em.write_slot(SpadKind.INPUT, in_off, tile, flow.ifm[idx], idx)
        em.emit(Load(variant, SpadRange(SpadKind.INPUT, in_off, tile),
                     DramRange(src_base + t0 * tile, 1, tile, 0)), idx)
        out_rng = SpadRange(SpadKind.OUTPUT, out_off, tile)
        em.write_slot(SpadKind.OUTPUT, out_off, tile, label, idx)
        em.emit(Alu(ct, AluOp.MAX, out_rng, SpadRange(SpadKind.INPUT, in_off, tile),
                    imm=0, in_width=1, out_width=1), idx)
        em.after_use(SpadRange(SpadKind.INPUT, in_off, tile), idx)
        em.emit(Store(_load_variant(label, shaped),
                      DramRange(dst_base + t0 * tile, 1, tile, 0), out_rng), idx)
        em.after_use(out_rng, idx)


# ---------------------------------------------------------------------------
# Entry point


def compile_model(model: ModelSpec, threat: ThreatModel,
                  pragmas: Optional[PragmaSet] = None,
                  dram_base: int = DEFAULT_DRAM_BASE,
                  tenant_id: int = 0,
                  naive_zeroize: bool = False,
                  tuner: Optional[Tuner] = None) -> CompiledProgram:
    """Run the full pass pipeline; deterministic for identical inputs."""
    if pragmas is None:
        cap = platform_capacity(threat.sharing)
        pragmas = PragmaSet.from_threat(threat, queue_depth=cap.queue_depth,
                                        bandwidth=cap.bandwidth)
    labels = derive_labels(model, pragmas)
    flow = track_flows(model, labels)
    cap = platform_capacity(pragmas.exec_mode)
    limits = ResourceBOM(pragmas.bandwidth,
                         {k: pragmas.spad_size.get(k, cap.spad[k]) for k in SpadKind},
                         pragmas.queue_depth, cap.exec_tiles, pragmas.exec_mode)
    tuner = tuner or Tuner()
    tiles = {idx: tuner.tune(layer, limits, threat)
             for idx, layer in enumerate(model.layers)}
    bom = compute_bom(pragmas, tiles, model)
    prog = _lower(model, threat, bom, tiles, naive_zeroize, flow=flow,
                  dram_base=dram_base)
    prog.tenant_id = tenant_id
    report = isa.validate(prog.instructions, prog.grant())
    if report is not None:
        raise CompileError(f"generated program fails validation: {report}")
    return prog


def _pack_tiles(mat: np.ndarray, t_rows: int, t_cols: int) -> np.ndarray:
    """Rearrange a (R, C) matrix into bank-round-aligned contiguous tiles,
    row-tile major, matching the chunk addressing the generated loads use."""
    rows, cols = mat.shape
    chunk = _align(t_rows * t_cols)
    out = np.zeros((rows // t_rows) * (cols // t_cols) * chunk, dtype=np.uint8)
    pos = 0
    for r0 in range(rows // t_rows):
        for c0 in range(cols // t_cols):
            tile = mat[r0 * t_rows:(r0 + 1) * t_rows, c0 * t_cols:(c0 + 1) * t_cols]
            out[pos : pos + t_rows * t_cols] = tile.ravel()
            pos += chunk
    return out


def generate_dram_data(model: ModelSpec, layout: DramLayout, seed: int,
                       tenant: int) -> list[tuple[int, np.ndarray]]:
    """Synthetic deterministic tensors seeded by (model, tenant, seed),
    packed into the tile-major layout the compiled loads expect."""

    def rng_for(tag: str) -> np.random.Generator:
        token = f"{model.name}:{tenant}:{seed}:{tag}"
        return np.random.default_rng(zlib.crc32(token.encode()))

    def synth(tag: str, rows: int, cols: int) -> np.ndarray:
        raw = rng_for(tag).integers(-128, 128, size=rows * cols, dtype=np.int16)
        return raw.astype(np.int8).view(np.uint8).reshape(rows, cols)

    images = []
    first = model.layers[0]
    cfg0 = layout.tiles[0]
    data = synth("input", first.gemm_m, first.gemm_k)
    if first.weighted:
        images.append((layout.input_addr, _pack_tiles(data, cfg0.tm, cfg0.tk)))
    else:
        images.append((layout.input_addr, data.ravel()))
    for idx, layer in enumerate(model.layers):
        if not layer.weighted:
            continue
        cfg = layout.tiles[idx]
        w = synth(f"w{idx}", layer.gemm_n, layer.gemm_k)
        images.append((layout.weight_addr[idx], _pack_tiles(w, cfg.tn, cfg.tk)))
    return images
