"""Deterministic event-driven accelerator core.

Decoupled access-execute pipeline: per tenant, a load unit, a compute unit
(GEMM + ALU + zeroizer) and a store unit run inataflow order.  Load
completions push tokens into the tenant's private load-to-compute queue
partition; computes pop one token per preceding load and push into the
compute-to-store partition.  A full partition back-pressures only its own
tenant.  On top of the token flow, statically precomputed region dependencies
(RAW/WAR/WAW over scratchpad slots and DRAM buckets, zeroize barriers) gate
instruction issue, so replay is exact regardless of compiler scheduling.

Every scratchpad access is checked against the ownership map at 16 KB region
granularity; a failed check is trapped, logged, and executed as reads-zero /
writes-dropped without halting the tenant.  Checked mode additionally runs a
dynamic taint oracle: encrypted loads taint regions, compute joins taints,
zeroize clears them, and any plain store from a tainted region, non-constant-
time compute over tainted operands, or release of a tainted region raises.

Determinism: a single cycle-ordered event loop; unit service order is fixed
(load < compute < store, tenant ascending) and DMA arbitration is round-robin
by tenant, so identical inputs give identical event sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np

from .isa import (
    Alu,
    AluOp,
    ConfigReg,
    Finish,
    Gemm,
    Instruction,
    Load,
    MAX_TENANTS,
    REGION_BYTES,
    SetConfig,
    SpadKind,
    SpadRange,
    Store,
    TenantGrant,
    Zeroize,
)
from .memsys import (
    Burst,
    BurstKind,
    Channel,
    Cipher,
    DmaEngine,
    MemConfig,
    TraceRecorder,
    Transfer,
    split_bursts,
)


class EngineError(Exception):
    pass


class InvalidConfig(EngineError):
    pass


class Oversubscription(EngineError):
    pass


class TooManyTenants(EngineError):
    pass


class Deadlock(EngineError):
    pass


class SecurityAssertion(EngineError):
    """Checked-mode oracle tripped: secret bytes were about to leak."""


class ResidualTaint(SecurityAssertion):
    """Tenant released a region that still holds private data."""


TEMPORAL_SPAD = {
    SpadKind.WEIGHT: 2 * 1024 * 1024,
    SpadKind.INPUT: 256 * 1024,
    SpadKind.OUTPUT: 256 * 1024,
    SpadKind.ACCUM: 512 * 1024,
}


@dataclass
class AcceleratorConfig:
    spad_bytes: dict = field(default_factory=lambda: dict(TEMPORAL_SPAD))
    exec_tiles: int = 4            # 8x8 MAC tiles, 64 MACs/cycle each
    macs_per_tile: int = 64
    alu_lanes_per_tile: int = 16
    dep_queue_capacity: int = 16   # entries per tenant partition
    instr_window: int = 512        # per-tenant in-flight instruction lookahead
    zeroizer_width: int = 64       # bytes cleared per cycle
    platform_bandwidth: int = 400_000_000
    dram_bytes: int = 512 * 1024 * 1024
    mem: MemConfig = field(default_factory=MemConfig)
    deadlock_window: int = 10_000
    checked: bool = False
    log_level: str = "admin"       # admin | debug

    def __post_init__(self):
        for kind in SpadKind:
            size = self.spad_bytes.get(kind, 0)
            if size <= 0 or size % REGION_BYTES:
                raise InvalidConfig(f"{kind.name} scratchpad must be a positive region multiple")
        if self.exec_tiles < 1 or self.platform_bandwidth <= 0:
            raise InvalidConfig("execution tiles and bandwidth must be positive")

    def full_grant(self, dram_window: tuple[int, int], tenant_id: int = 0,
                   bandwidth: Optional[int] = None, queue_depth: Optional[int] = None) -> TenantGrant:
        return TenantGrant(
            tenant_id=tenant_id,
            spad_quota=dict(self.spad_bytes),
            queue_depth=queue_depth or self.dep_queue_capacity,
            exec_tiles=self.exec_tiles,
            bandwidth=bandwidth or self.platform_bandwidth,
            dram_window=dram_window,
        )

    def quarter_grant(self, tenant_id: int, dram_window: tuple[int, int],
                      bandwidth: Optional[int] = None) -> TenantGrant:
        return TenantGrant(
            tenant_id=tenant_id,
            spad_quota={k: v // 4 for k, v in self.spad_bytes.items()},
            queue_depth=self.dep_queue_capacity,
            exec_tiles=max(1, self.exec_tiles // 4),
            bandwidth=bandwidth or self.platform_bandwidth // 4,
            dram_window=dram_window,
        )


class ScratchMap:
    """Region-granular ownership + taint for one scratchpad kind."""

    FREE = -1
    CLEAN = -1

    def __init__(self, total_bytes: int):
        self.n_regions = total_bytes // REGION_BYTES
        self.owner = np.full(self.n_regions, self.FREE, dtype=np.int32)
        self.taint = np.full(self.n_regions, self.CLEAN, dtype=np.int32)

    def allocate(self, n_regions: int, tenant: int) -> Optional[int]:
        """First-fit contiguous run of free regions; returns first index."""
        run = 0
        for i in range(self.n_regions):
            run = run + 1 if self.owner[i] == self.FREE else 0
            if run == n_regions:
                start = i - n_regions + 1
                self.owner[start : i + 1] = tenant
                return start
        return None

    def release(self, tenant: int) -> list[int]:
        """Free the tenant's regions; returns indices that were still tainted."""
        mine = np.nonzero(self.owner == tenant)[0]
        dirty = [int(r) for r in mine if self.taint[r] != self.CLEAN]
        self.owner[mine] = self.FREE
        return dirty

    def regions_of(self, base: int, length: int) -> range:
        return range(base // REGION_BYTES, (base + length - 1) // REGION_BYTES + 1)

    def owns(self, tenant: int, base: int, length: int) -> bool:
        regs = self.regions_of(base, length)
        if regs.stop > self.n_regions or base < 0:
            return False
        return bool(np.all(self.owner[regs.start : regs.stop] == tenant))


class Unit(IntEnum):
    LOAD = 0
    COMPUTE = 1
    STORE = 2


_UNIT_OF = {Load: Unit.LOAD, Gemm: Unit.COMPUTE, Alu: Unit.COMPUTE,
            Zeroize: Unit.COMPUTE, Store: Unit.STORE}


@dataclass
class UnitState:
    stream: list[int] = field(default_factory=list)
    cursor: int = 0
    busy_until: int = -1
    current: int = -1
    pending_token: bool = False   # completed but waiting for queue space
    stalls: int = 0

    @property
    def idle(self) -> bool:
        return self.current < 0

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.stream)


@dataclass
class TokenQueue:
    capacity: int
    count: int = 0
    enq_log: int = 0
    deq_log: int = 0

    @property
    def full(self) -> bool:
        return self.count >= self.capacity

    def push(self) -> None:
        self.count += 1
        self.enq_log += 1

    def pop(self, n: int) -> None:
        self.count -= n
        self.deq_log += n

    def snapshot(self) -> dict:
        return {"occupancy": self.count, "capacity": self.capacity}


@dataclass
class TrapRecord:
    cycle: int
    unit: str
    index: int
    reason: str
    detail: str

    def as_dict(self) -> dict:
        return {"cycle": self.cycle, "unit": self.unit, "instr": self.index,
                "reason": self.reason, "detail": self.detail}


@dataclass
class TenantResult:
    tenant_id: int
    admitted_cycle: int = 0
    start_cycle: int = -1
    end_cycle: int = -1
    finished: bool = False
    traps: list = field(default_factory=list)
    stalls: int = 0
    dynamic_zeroize: int = 0
    zeroized_bytes: int = 0
    instructions_run: int = 0
    violations: list = field(default_factory=list)

    @property
    def cycles(self) -> int:
        """Cycle span between the tenant's first and last instruction."""
        if self.start_cycle < 0 or self.end_cycle < 0:
            return 0
        return self.end_cycle - self.start_cycle


class Tenant:
    """Execution context for one admitted program."""

    def __init__(self, tenant_id: int, instructions: list[Instruction], grant: TenantGrant,
                 layer_of_instr: Optional[list[int]], cipher: Cipher):
        self.tenant_id = tenant_id
        self.instructions = instructions
        self.grant = grant
        self.cipher = cipher
        self.layer_of_instr = layer_of_instr or [-1] * len(instructions)
        self.spad_base: dict[SpadKind, int] = {}
        self.units = {u: UnitState() for u in Unit}
        self.sched_stream: list[int] = []
        self.sched_cursor = 0
        self.done = np.zeros(len(instructions), dtype=bool)
        self.watermark = 0
        self.deps: list[tuple[int, ...]] = []
        # stage-transition dependency tokens: the last load before a compute
        # pushes load-to-compute; the last compute before a store pushes
        # compute-to-store; consumers pop exactly one token each
        self.push_lc = np.zeros(len(instructions), dtype=bool)
        self.pop_lc = np.zeros(len(instructions), dtype=bool)
        self.push_cs = np.zeros(len(instructions), dtype=bool)
        self.pop_cs = np.zeros(len(instructions), dtype=bool)
        self.q_lc = TokenQueue(grant.queue_depth)
        self.q_cs = TokenQueue(grant.queue_depth)
        self.finished = False
        self.torn_down = False
        self.result = TenantResult(tenant_id)
        self.shaper_enabled = False

        for idx, instr in enumerate(instructions):
            unit = _UNIT_OF.get(type(instr))
            if unit is None:
                self.sched_stream.append(idx)
            else:
                self.units[unit].stream.append(idx)
        self._precompute_tokens()
        self._precompute_deps()

    def _precompute_tokens(self) -> None:
        pending_load = -1
        pending_compute = -1
        for idx, instr in enumerate(self.instructions):
            if isinstance(instr, Load):
                pending_load = idx
            elif isinstance(instr, (Gemm, Alu)):
                if pending_load >= 0:
                    self.push_lc[pending_load] = True
                    self.pop_lc[idx] = True
                    pending_load = -1
                pending_compute = idx
            elif isinstance(instr, Store):
                if pending_compute >= 0:
                    self.push_cs[pending_compute] = True
                    self.pop_cs[idx] = True
                    pending_compute = -1

    # -- static dependencies ------------------------------------------------

    @staticmethod
    def _touch_sets(instr: Instruction):
        """(spad_reads, spad_writes, dram_read, dram_write) for one instruction."""
        if isinstance(instr, Load):
            return [], [instr.dst], instr.src, None
        if isinstance(instr, Store):
            return [instr.src], [], None, instr.dst
        if isinstance(instr, Gemm):
            return [instr.in1, instr.in2, instr.out], [instr.out], None, None
        if isinstance(instr, Alu):
            reads = [instr.inp, instr.out] if instr.op == AluOp.ADD else [instr.inp]
            return reads, [instr.out], None, None
        if isinstance(instr, Zeroize):
            return [], [instr.range], None, None
        return [], [], None, None

    def _precompute_deps(self) -> None:
        spad_writers: dict[SpadKind, dict[tuple[int, int], int]] = {k: {} for k in SpadKind}
        spad_readers: dict[SpadKind, dict[tuple[int, int], list[int]]] = {k: {} for k in SpadKind}
        DRAM_BUCKET = 4096
        dram_writers: dict[int, int] = {}
        dram_readers: dict[int, list[int]] = {}

        def overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
            return a[0] < b[1] and b[0] < a[1]

        for idx, instr in enumerate(self.instructions):
            deps: set[int] = set()
            reads, writes, dread, dwrite = self._touch_sets(instr)

            for rng in reads:
                iv = (rng.base, rng.end)
                table = spad_writers[rng.kind]
                for key, widx in table.items():
                    if overlap(iv, key):
                        deps.add(widx)
                spad_readers[rng.kind].setdefault(iv, []).append(idx)
            for rng in writes:
                iv = (rng.base, rng.end)
                wtable, rtable = spad_writers[rng.kind], spad_readers[rng.kind]
                for key in wtable:
                    if overlap(iv, key):
                        deps.add(wtable[key])
                for key in list(rtable):
                    if overlap(iv, key):
                        deps.update(rtable[key])
                        if key[0] >= iv[0] and key[1] <= iv[1]:
                            del rtable[key]  # WAR fully discharged
                wtable[iv] = idx

            if dread is not None:
                lo, hi = dread.base // DRAM_BUCKET, (dread.base + dread.span - 1) // DRAM_BUCKET
                for bucket in range(lo, hi + 1):
                    if bucket in dram_writers:
                        deps.add(dram_writers[bucket])
                    dram_readers.setdefault(bucket, []).append(idx)
            if dwrite is not None:
                lo, hi = dwrite.base // DRAM_BUCKET, (dwrite.base + dwrite.span - 1) // DRAM_BUCKET
                for bucket in range(lo, hi + 1):
                    if bucket in dram_writers:
                        deps.add(dram_writers[bucket])
                    deps.update(dram_readers.pop(bucket, ()))
                    dram_writers[bucket] = idx

            deps.discard(idx)
            self.deps.append(tuple(sorted(deps)))

    def deps_done(self, idx: int) -> bool:
        return all(self.done[d] for d in self.deps[idx])

    def advance_watermark(self) -> None:
        while self.watermark < len(self.done) and self.done[self.watermark]:
            self.watermark += 1


class Engine:
    """Bootable accelerator instance; single-threaded and deterministic."""

    def __init__(self, config: AcceleratorConfig):
        self.config = config
        self.cycle = 0
        self.spad: dict[SpadKind, np.ndarray] = {
            kind: np.zeros(config.spad_bytes[kind], dtype=np.uint8) for kind in SpadKind
        }
        self.scratchmap: dict[SpadKind, ScratchMap] = {
            kind: ScratchMap(config.spad_bytes[kind]) for kind in SpadKind
        }
        self.trace = TraceRecorder(config.mem.trace_window, config.mem.burst_bytes)
        self.dma = DmaEngine(config.mem, self.trace)
        self.tenants: dict[int, Tenant] = {}
        self.dram: dict[int, tuple[int, np.ndarray]] = {}
        self.tiles_owner = [-1] * config.exec_tiles
        self.event_log: list[dict] = []
        self._progress_cycle = 0
        self._transfer_unit: dict[int, tuple[int, Unit, int]] = {}
        self._transfer_seq = 0

    # -- logging ------------------------------------------------------------

    def log(self, level: str, **fields) -> None:
        if level == "debug" and self.config.log_level != "debug":
            return
        entry = {"cycle": self.cycle}
        entry.update(fields)
        self.event_log.append(entry)

    # -- admission ----------------------------------------------------------

    def admit(self, instructions: list[Instruction], grant: TenantGrant,
              dram_data: Iterable[tuple[int, np.ndarray]] = (),
              layer_of_instr: Optional[list[int]] = None,
              cipher: Cipher = Cipher.QARMA128) -> int:
        if len(self.tenants) >= MAX_TENANTS:
            raise TooManyTenants(f"at most {MAX_TENANTS} tenants are supported")
        tid = grant.tenant_id
        if tid in self.tenants:
            raise Oversubscription(f"tenant id {tid} already admitted")

        # resource availability: scratchpad regions, exec tiles, dram window
        alloc_plan = {}
        for kind in SpadKind:
            need = grant.quota(kind) // REGION_BYTES
            if need == 0:
                continue
            free = int(np.count_nonzero(self.scratchmap[kind].owner == ScratchMap.FREE))
            if free < need:
                raise Oversubscription(f"{kind.name} scratchpad: need {need} regions, {free} free")
            alloc_plan[kind] = need
        free_tiles = [i for i, o in enumerate(self.tiles_owner) if o < 0]
        if grant.exec_tiles > len(free_tiles):
            raise Oversubscription(f"execution tiles: need {grant.exec_tiles}, {len(free_tiles)} free")
        win_base, win_len = grant.dram_window
        if win_len > 0:
            if win_base + win_len > self.config.dram_bytes:
                raise Oversubscription("dram window exceeds device memory")
            for other, (obase, oarr) in self.dram.items():
                if win_base < obase + len(oarr) and obase < win_base + win_len:
                    raise Oversubscription(f"dram window overlaps tenant {other}")

        tenant = Tenant(tid, list(instructions), grant, layer_of_instr, cipher)
        for kind, need in alloc_plan.items():
            start = self.scratchmap[kind].allocate(need, tid)
            if start is None:
                raise Oversubscription(f"{kind.name} scratchpad fragmentation")
            tenant.spad_base[kind] = start * REGION_BYTES
        for i in free_tiles[: grant.exec_tiles]:
            self.tiles_owner[i] = tid

        window = np.zeros(win_len, dtype=np.uint8)
        for addr, blob in dram_data:
            arr = np.asarray(blob, dtype=np.uint8).ravel()
            off = addr - win_base
            if off < 0 or off + arr.size > win_len:
                raise Oversubscription("initial data outside the tenant dram window")
            window[off : off + arr.size] = arr
        self.dram[tid] = (win_base, window)

        self.dma.attach_tenant(tid, bandwidth=grant.bandwidth)
        tenant.result.admitted_cycle = self.cycle
        self.tenants[tid] = tenant
        self.log("admin", event="admit", tenant=tid, instructions=len(tenant.instructions))
        return tid

    # -- scratchpad access --------------------------------------------------

    def _phys(self, tenant: Tenant, rng: SpadRange) -> tuple[int, int]:
        base = tenant.spad_base.get(rng.kind, 0) + rng.base
        return base, base + rng.len

    def _check_owned(self, tenant: Tenant, rng: SpadRange, unit: str, idx: int) -> bool:
        base, end = self._phys(tenant, rng)
        ok = self.scratchmap[rng.kind].owns(tenant.tenant_id, base, end - base)
        if not ok:
            rec = TrapRecord(self.cycle, unit, idx, "spad-bounds",
                             f"{rng.kind.name}[{rng.base}:{rng.end}]")
            tenant.result.traps.append(rec)
            self.log("admin", event="trap", tenant=tenant.tenant_id, **rec.as_dict())
        return ok

    def read_spad(self, tenant: Tenant, rng: SpadRange, unit: str, idx: int) -> np.ndarray:
        """Owned: live bytes.  Trapped: zeros (access blocked)."""
        if self._check_owned(tenant, rng, unit, idx):
            base, end = self._phys(tenant, rng)
            return self.spad[rng.kind][base:end].copy()
        return np.zeros(rng.len, dtype=np.uint8)

    def write_spad(self, tenant: Tenant, rng: SpadRange, data: np.ndarray,
                   unit: str, idx: int, taint: bool) -> None:
        if not self._check_owned(tenant, rng, unit, idx):
            return  # write dropped
        base, end = self._phys(tenant, rng)
        self.spad[rng.kind][base:end] = data
        smap = self.scratchmap[rng.kind]
        if taint:
            regs = smap.regions_of(base, end - base)
            smap.taint[regs.start : regs.stop] = tenant.tenant_id

    def region_taint(self, tenant: Tenant, rng: SpadRange) -> bool:
        base, end = self._phys(tenant, rng)
        smap = self.scratchmap[rng.kind]
        regs = smap.regions_of(base, end - base)
        if regs.stop > smap.n_regions:
            return False
        return bool(np.any(smap.taint[regs.start : regs.stop] != ScratchMap.CLEAN))

    def _dram_read(self, tenant: Tenant, addr: int, length: int, unit: str, idx: int) -> np.ndarray:
        win_base, window = self.dram[tenant.tenant_id]
        off = addr - win_base
        if off < 0 or off + length > len(window):
            rec = TrapRecord(self.cycle, unit, idx, "dram-bounds", f"[{addr}:{addr + length}]")
            tenant.result.traps.append(rec)
            self.log("admin", event="trap", tenant=tenant.tenant_id, **rec.as_dict())
            return np.zeros(length, dtype=np.uint8)
        return window[off : off + length].copy()

    def _dram_write(self, tenant: Tenant, addr: int, data: np.ndarray, unit: str, idx: int) -> None:
        win_base, window = self.dram[tenant.tenant_id]
        off = addr - win_base
        if off < 0 or off + len(data) > len(window):
            rec = TrapRecord(self.cycle, unit, idx, "dram-bounds", f"[{addr}:{addr + len(data)}]")
            tenant.result.traps.append(rec)
            self.log("admin", event="trap", tenant=tenant.tenant_id, **rec.as_dict())
            return
        window[off : off + len(data)] = data

    # -- checked-mode oracle --------------------------------------------------

    def _security_violation(self, tenant: Tenant, idx: int, what: str) -> None:
        tenant.result.violations.append({"cycle": self.cycle, "instr": idx, "what": what})
        self.log("admin", event="security-violation", tenant=tenant.tenant_id, instr=idx, what=what)
        if self.config.checked:
            raise SecurityAssertion(f"tenant {tenant.tenant_id} instr {idx}: {what}")

    # -- execution ----------------------------------------------------------

    def run(self, cycle_limit: Optional[int] = None) -> dict[int, TenantResult]:
        """Advance until every admitted tenant reaches Finish (or the limit)."""
        if not self.tenants:
            raise EngineError("no admitted tenants")
        self._progress_cycle = self.cycle
        while True:
            if all(t.finished for t in self.tenants.values() if not t.torn_down):
                break
            nxt = self._next_event_cycle()
            if nxt is None:
                self._deadlock("no runnable work and no pending events")
            if cycle_limit is not None and nxt > cycle_limit:
                self.cycle = cycle_limit
                break
            if (nxt - self._progress_cycle > self.config.deadlock_window
                    and not self._work_in_flight()):
                self._deadlock(f"no progress for {self.config.deadlock_window} cycles")
            self.cycle = max(self.cycle, nxt)
            self._service_cycle()
        return {tid: t.result for tid, t in sorted(self.tenants.items())}

    def idle_until(self, cycle: int) -> None:
        """Advance time with no instruction work: active shapers keep
        emitting fake bursts, so a tenant's trace runs to the end of its
        lease rather than to its last real transfer."""
        while self.cycle < cycle:
            nxt = self.dma.next_event()
            if nxt is None or nxt > cycle:
                self.cycle = cycle
                break
            self.cycle = max(self.cycle, nxt)
            self.dma.tick(self.cycle)

    def _deadlock(self, why: str) -> None:
        snap = {
            tid: {
                "lc": t.q_lc.snapshot(), "cs": t.q_cs.snapshot(),
                "cursors": {u.name: t.units[u].cursor for u in Unit},
                "watermark": t.watermark,
            }
            for tid, t in sorted(self.tenants.items()) if not t.finished
        }
        self.log("admin", event="deadlock", detail=why, snapshot=snap)
        raise Deadlock(f"{why}; queue snapshot: {snap}")

    def _next_event_cycle(self) -> Optional[int]:
        candidates = []
        dma_next = self.dma.next_event()
        if dma_next is not None:
            candidates.append(max(dma_next, self.cycle))
        for t in self.tenants.values():
            if t.torn_down:
                continue
            for u in Unit:
                st = t.units[u]
                # a unit blocked pushing a token wakes when a consumer pops,
                # which is an issue event elsewhere, not a time event here
                if not st.idle and st.busy_until >= 0 and not st.pending_token:
                    candidates.append(max(st.busy_until, self.cycle))
        if candidates:
            return min(candidates)
        # nothing in flight: issue work may still be possible right now
        if self._anything_issuable():
            return self.cycle
        return None

    def _work_in_flight(self) -> bool:
        """Busy units or outstanding real transfers mean forward progress is
        still possible; only timer-driven fake traffic can spin forever."""
        if self._transfer_unit:
            return True
        for t in self.tenants.values():
            if t.torn_down:
                continue
            if any(not t.units[u].idle for u in Unit):
                return True
        return False

    def _anything_issuable(self) -> bool:
        for t in self.tenants.values():
            if t.torn_down or t.finished:
                continue
            if t.sched_cursor < len(t.sched_stream):
                idx = t.sched_stream[t.sched_cursor]
                if t.watermark >= idx:
                    return True
            for u in Unit:
                st = t.units[u]
                if st.idle and not st.exhausted and self._can_issue(t, u, st.stream[st.cursor]):
                    return True
        return False

    def _service_cycle(self) -> None:
        # 1. DMA completions and timer emissions
        for tr in self.dma.tick(self.cycle):
            self._transfer_done(tr)
        self._progress_cycle = max(self._progress_cycle, self.dma.last_real_cycle)
        # 2-4. unit completions, scheduler, issues: loop to a fixpoint so
        # same-cycle token handoffs settle deterministically
        for _ in range(16):
            changed = self._complete_units()
            changed |= self._run_scheduler()
            changed |= self._issue_units()
            if not changed:
                break

    # -- unit completion ----------------------------------------------------

    def _complete_units(self) -> bool:
        changed = False
        for tid in sorted(self.tenants):
            tenant = self.tenants[tid]
            for unit in (Unit.LOAD, Unit.COMPUTE, Unit.STORE):
                st = tenant.units[unit]
                if st.idle:
                    continue
                if st.pending_token:
                    changed |= self._try_push_token(tenant, unit, st)
                    continue
                if 0 <= st.busy_until <= self.cycle:
                    self._finish_instruction(tenant, unit, st)
                    changed = True
        return changed

    def _try_push_token(self, tenant: Tenant, unit: Unit, st: UnitState) -> bool:
        queue = tenant.q_lc if unit == Unit.LOAD else tenant.q_cs
        if queue.full:
            st.stalls += 1
            return False
        queue.push()
        self.log("debug", event="token-push", tenant=tenant.tenant_id, queue=unit.name)
        st.pending_token = False
        self._retire(tenant, st)
        return True

    def _finish_instruction(self, tenant: Tenant, unit: Unit, st: UnitState) -> None:
        idx = st.current
        if (unit == Unit.LOAD and tenant.push_lc[idx]) or \
                (unit == Unit.COMPUTE and tenant.push_cs[idx]):
            st.pending_token = True
            self._try_push_token(tenant, unit, st)
        else:
            self._retire(tenant, st)

    def _retire(self, tenant: Tenant, st: UnitState) -> None:
        idx = st.current
        tenant.done[idx] = True
        tenant.advance_watermark()
        tenant.result.instructions_run += 1
        tenant.result.end_cycle = max(tenant.result.end_cycle, self.cycle)
        st.current = -1
        st.busy_until = -1
        self._progress_cycle = self.cycle
        self.log("debug", event="retire", tenant=tenant.tenant_id, instr=idx)

    def _transfer_done(self, tr: Transfer) -> None:
        key = id(tr)
        info = self._transfer_unit.pop(key, None)
        if info is None:
            return
        tid, unit, idx = info
        tenant = self.tenants[tid]
        st = tenant.units[unit]
        instr = tenant.instructions[idx]
        if isinstance(instr, Load):
            data = self._gather_dram(tenant, instr, idx)
            self.write_spad(tenant, instr.dst, data, "load", idx,
                            taint=instr.variant.encrypted)
        st.busy_until = self.cycle  # completes this cycle

    # -- scheduler (config + finish) -----------------------------------------

    def _run_scheduler(self) -> bool:
        changed = False
        for tid in sorted(self.tenants):
            tenant = self.tenants[tid]
            while tenant.sched_cursor < len(tenant.sched_stream):
                idx = tenant.sched_stream[tenant.sched_cursor]
                if tenant.watermark < idx:
                    break
                instr = tenant.instructions[idx]
                if isinstance(instr, SetConfig):
                    self._apply_config(tenant, instr)
                elif isinstance(instr, Finish):
                    tenant.finished = True
                    tenant.result.finished = True
                    tenant.result.end_cycle = max(tenant.result.end_cycle, self.cycle)
                    self.log("admin", event="finish", tenant=tid)
                tenant.done[idx] = True
                tenant.advance_watermark()
                if tenant.result.start_cycle < 0:
                    tenant.result.start_cycle = self.cycle
                tenant.sched_cursor += 1
                self._progress_cycle = self.cycle
                changed = True
        return changed

    def _apply_config(self, tenant: Tenant, instr: SetConfig) -> None:
        tid = tenant.tenant_id
        self.log("admin", event="setcfg", tenant=tid,
                 register=instr.register.name, value=instr.value)
        if instr.register == ConfigReg.SHAPER_EN:
            enable = bool(instr.value)
            if enable and not tenant.shaper_enabled:
                base_mb = 0
                win_base, win_len = tenant.grant.dram_window
                self.dma.set_shaper(tid, True, tenant.grant.bandwidth,
                                    win_base, win_len, self.cycle)
                tenant.shaper_enabled = True
            elif not enable and tenant.shaper_enabled:
                self.dma.set_shaper(tid, False, tenant.grant.bandwidth, 0, 0, self.cycle)
                tenant.shaper_enabled = False
        elif instr.register == ConfigReg.BANDWIDTH:
            if instr.value != tenant.grant.bandwidth:
                self.log("admin", event="config-clamped", tenant=tid,
                         register="BANDWIDTH", granted=tenant.grant.bandwidth)
        # remaining registers echo the grant; admission already enforced them

    # -- instruction issue ----------------------------------------------------

    def _issue_units(self) -> bool:
        changed = False
        for unit in (Unit.LOAD, Unit.COMPUTE, Unit.STORE):
            for tid in sorted(self.tenants):
                tenant = self.tenants[tid]
                if tenant.torn_down or tenant.finished:
                    continue
                st = tenant.units[unit]
                if not st.idle or st.exhausted:
                    continue
                idx = st.stream[st.cursor]
                if not self._can_issue(tenant, unit, idx):
                    st.stalls += 1
                    continue
                self._start_instruction(tenant, unit, st, idx)
                changed = True
        return changed

    def _can_issue(self, tenant: Tenant, unit: Unit, idx: int) -> bool:
        if idx - tenant.watermark >= self.config.instr_window:
            return False
        if not tenant.deps_done(idx):
            return False
        if tenant.pop_lc[idx] and tenant.q_lc.count < 1:
            return False
        if tenant.pop_cs[idx] and tenant.q_cs.count < 1:
            return False
        return True

    def _start_instruction(self, tenant: Tenant, unit: Unit, st: UnitState, idx: int) -> None:
        st.current = idx
        st.cursor += 1
        instr = tenant.instructions[idx]
        if tenant.result.start_cycle < 0:
            tenant.result.start_cycle = self.cycle
        self.log("debug", event="issue", tenant=tenant.tenant_id, unit=unit.name, instr=idx)

        if tenant.pop_lc[idx]:
            tenant.q_lc.pop(1)
            self.log("debug", event="token-pop", tenant=tenant.tenant_id, queue="LOAD")
        if tenant.pop_cs[idx]:
            tenant.q_cs.pop(1)
            self.log("debug", event="token-pop", tenant=tenant.tenant_id, queue="COMPUTE")

        if isinstance(instr, Load):
            self._issue_load(tenant, st, idx, instr)
        elif isinstance(instr, Store):
            self._issue_store(tenant, st, idx, instr)
        elif isinstance(instr, Gemm):
            self._exec_gemm(tenant, st, idx, instr)
        elif isinstance(instr, Alu):
            self._exec_alu(tenant, st, idx, instr)
        elif isinstance(instr, Zeroize):
            self._exec_zeroize(tenant, st, idx, instr)

    def _owned_tiles(self, tenant: Tenant) -> int:
        return max(1, sum(1 for o in self.tiles_owner if o == tenant.tenant_id))

    def _gather_dram(self, tenant: Tenant, instr: Load, idx: int) -> np.ndarray:
        src = instr.src
        rows = [self._dram_read(tenant, src.base + r * src.row_stride, src.row_bytes, "load", idx)
                for r in range(src.rows)]
        return np.concatenate(rows) if len(rows) > 1 else rows[0]

    def _issue_load(self, tenant: Tenant, st: UnitState, idx: int, instr: Load) -> None:
        cipher = tenant.cipher if instr.variant.encrypted else Cipher.NONE
        self._submit_transfer(tenant, Unit.LOAD, idx, instr.src, Channel.READ, cipher)

    def _issue_store(self, tenant: Tenant, st: UnitState, idx: int, instr: Store) -> None:
        if self.region_taint(tenant, instr.src) and not instr.variant.encrypted:
            self._security_violation(tenant, idx, "plain store of tainted scratchpad data")
        data = self.read_spad(tenant, instr.src, "store", idx)
        dst = instr.dst
        for r in range(dst.rows):
            self._dram_write(tenant, dst.base + r * dst.row_stride,
                             data[r * dst.row_bytes : (r + 1) * dst.row_bytes], "store", idx)
        cipher = tenant.cipher if instr.variant.encrypted else Cipher.NONE
        self._submit_transfer(tenant, Unit.STORE, idx, dst, Channel.WRITE, cipher)

    def _submit_transfer(self, tenant: Tenant, unit: Unit, idx: int, rng, channel: Channel,
                         cipher: Cipher) -> None:
        layer = tenant.layer_of_instr[idx]
        bursts = [Burst(tenant.tenant_id, channel, BurstKind.REAL, addr, payload, cipher,
                        layer_id=layer)
                  for addr, payload in split_bursts(rng, self.config.mem)]
        tr = Transfer(tenant.tenant_id, channel, bursts, on_complete=lambda c: None,
                      layer_id=layer)
        self._transfer_unit[id(tr)] = (tenant.tenant_id, unit, idx)
        self.dma.submit(tr)

    def _exec_gemm(self, tenant: Tenant, st: UnitState, idx: int, instr: Gemm) -> None:
        uop = instr.uop
        in1 = self.read_spad(tenant, instr.in1, "compute", idx)
        in2 = self.read_spad(tenant, instr.in2, "compute", idx)
        acc = self.read_spad(tenant, instr.out, "compute", idx)
        a = in1.view(np.int8).reshape(uop.m, uop.k).astype(np.int32)
        b = in2.view(np.int8).reshape(uop.n, uop.k).astype(np.int32)
        out = a @ b.T
        if not instr.reset:
            out = out + acc.view(np.int32).reshape(uop.m, uop.n)
        tainted = self.region_taint(tenant, instr.in1) or self.region_taint(tenant, instr.in2) \
            or self.region_taint(tenant, instr.out)
        if tainted and not instr.constant_time:
            self._security_violation(tenant, idx, "data-dependent gemm over tainted operands")
        self.write_spad(tenant, instr.out, out.astype(np.int32).view(np.uint8).ravel(),
                        "compute", idx, taint=tainted)
        throughput = self._owned_tiles(tenant) * self.config.macs_per_tile
        if instr.constant_time:
            work = uop.macs
        else:
            work = uop.m * int(np.count_nonzero(in2))  # skip zero weight bytes
        cycles = max(1, -(-work // throughput))
        st.busy_until = self.cycle + cycles

    def _exec_alu(self, tenant: Tenant, st: UnitState, idx: int, instr: Alu) -> None:
        raw_in = self.read_spad(tenant, instr.inp, "compute", idx)
        lanes_raw = raw_in.view(np.int8) if instr.in_width == 1 else raw_in.view(np.int32)
        lanes_in = lanes_raw.astype(np.int64)  # widen before imm math, wrap on writeback
        imm = instr.imm or 0
        if instr.op == AluOp.ADD:
            raw_out = self.read_spad(tenant, instr.out, "compute", idx)
            cur = raw_out.view(np.int8) if instr.out_width == 1 else raw_out.view(np.int32)
            res = cur.astype(np.int64) + lanes_in
        elif instr.op == AluOp.MAX:
            res = np.maximum(lanes_in, imm)
        elif instr.op == AluOp.MIN:
            res = np.minimum(lanes_in, imm)
        elif instr.op == AluOp.SHR:
            res = lanes_in >> imm
        else:  # MUL_IMM
            res = lanes_in * imm
        out_dtype = np.int8 if instr.out_width == 1 else np.int32
        out_bytes = res.astype(out_dtype).view(np.uint8)
        tainted = self.region_taint(tenant, instr.inp) or \
            (instr.op == AluOp.ADD and self.region_taint(tenant, instr.out))
        if tainted and not instr.constant_time:
            self._security_violation(tenant, idx, "data-dependent alu over tainted operands")
        self.write_spad(tenant, instr.out, out_bytes, "compute", idx, taint=tainted)
        throughput = self._owned_tiles(tenant) * self.config.alu_lanes_per_tile
        if instr.constant_time:
            work = instr.lanes
        else:
            work = int(np.count_nonzero(lanes_in))
        cycles = max(1, -(-work // throughput))
        st.busy_until = self.cycle + cycles

    def _exec_zeroize(self, tenant: Tenant, st: UnitState, idx: int, instr: Zeroize) -> None:
        rng = instr.range
        if self._check_owned(tenant, rng, "zeroize", idx):
            base, end = self._phys(tenant, rng)
            self.spad[rng.kind][base:end] = 0
            smap = self.scratchmap[rng.kind]
            # only regions fully inside the cleared range lose their taint
            lo = -(-base // REGION_BYTES)
            hi = end // REGION_BYTES
            if lo < hi:
                smap.taint[lo:hi] = ScratchMap.CLEAN
            tenant.result.dynamic_zeroize += 1
            tenant.result.zeroized_bytes += rng.len
        cycles = max(1, -(-rng.len // self.config.zeroizer_width))
        st.busy_until = self.cycle + cycles

    # -- teardown -------------------------------------------------------------

    def teardown(self, tenant_id: int, force: bool = False) -> dict:
        """Release the tenant's lease; asserts no residual private data."""
        tenant = self.tenants.get(tenant_id)
        if tenant is None:
            raise EngineError(f"unknown tenant {tenant_id}")
        if not tenant.finished and not force:
            raise EngineError(f"tenant {tenant_id} has not finished; use force to abort")
        forced_zero = 0
        dirty_total = []
        for kind in SpadKind:
            smap = self.scratchmap[kind]
            mine = np.nonzero(smap.owner == tenant_id)[0]
            dirty = [int(r) for r in mine if smap.taint[r] != ScratchMap.CLEAN]
            if dirty and force:
                for r in dirty:
                    self.spad[kind][r * REGION_BYTES : (r + 1) * REGION_BYTES] = 0
                    smap.taint[r] = ScratchMap.CLEAN
                    forced_zero += REGION_BYTES
                self.log("admin", event="abort-zeroize", tenant=tenant_id,
                         kind=kind.name, regions=len(dirty))
                dirty = []
            if dirty:
                dirty_total.append((kind.name, dirty))
            smap.owner[mine] = ScratchMap.FREE
            for r in dirty:
                smap.taint[r] = ScratchMap.CLEAN  # surfaced below; do not leak forward
        if dirty_total:
            self.log("admin", event="residual-taint", tenant=tenant_id, regions=dirty_total)
            if self.config.checked:
                raise ResidualTaint(f"tenant {tenant_id} released tainted regions: {dirty_total}")
        self.tiles_owner = [o if o != tenant_id else -1 for o in self.tiles_owner]
        self.dma.detach_tenant(tenant_id, self.cycle)
        tenant.torn_down = True
        self.log("admin", event="teardown", tenant=tenant_id, forced_zero=forced_zero)
        return {"tenant": tenant_id, "forced_zeroized_bytes": forced_zero,
                "residual_taint": dirty_total}
