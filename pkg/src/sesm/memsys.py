"""Memory system: DMA engine, DRAM timing, per-tenant traffic shaper, and
the attacker-visible bandwidth trace.

All bus traffic moves in fixed-size bursts.  With the shaper enabled for a
tenant, exactly one burst leaves per timer period per channel: the head of
the real-transaction queue when one is ready, otherwise a fake burst aimed at
a free bank inside the tenant's address range.  An observer counting bytes
per window therefore sees a constant rate from enable to teardown.  With
shaping off, bursts are issued greedily through the shared channel, pacing
limited by the channel interval and bank availability, so the trace follows
the program's real traffic.

Encrypted transfers pay a modeled cipher latency per 16 bytes at burst
completion; decryption of one burst overlaps the transfer of the next, so
only rate mismatches and tails surface as extra cycles.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Optional

from .isa import DramRange

CYCLE_SECONDS = 1e-8  # 100 MHz clock


class Channel(IntEnum):
    READ = 0
    WRITE = 1


class BurstKind(str, Enum):
    REAL = "real"
    FAKE = "fake"


class Cipher(str, Enum):
    NONE = "none"
    QARMA128 = "qarma128"
    AES128 = "aes128"


_CIPHER_CYCLES_PER_16B = {Cipher.NONE: 0, Cipher.QARMA128: 1, Cipher.AES128: 2}


def encryption_delay(nbytes: int, cipher: Cipher) -> int:
    """Extra cycles to de/encrypt `nbytes` of private data."""
    per_block = _CIPHER_CYCLES_PER_16B[cipher]
    return ((nbytes + 15) // 16) * per_block


@dataclass
class MemConfig:
    burst_bytes: int = 64
    banks: int = 8
    row_buffer: int = 2048
    burst_service: int = 4        # cycles a burst occupies its bank
    channel_interval: int = 16    # min cycles between unshaped issues per channel
    real_queue_depth: int = 16    # shaper real FIFO depth per tenant per channel
    trace_window: int = 128       # cycles per trace window

    def __post_init__(self):
        if self.row_buffer % self.burst_bytes:
            raise ValueError("burst size must divide the DRAM row buffer")
        if self.burst_bytes > 256:
            raise ValueError("burst size above 256 overflows per-row pad encoding")

    def bank_of(self, addr: int) -> int:
        # burst-granularity interleave: consecutive bursts hit distinct banks
        return (addr // self.burst_bytes) % self.banks

    def shaper_period(self, bandwidth: int) -> int:
        """Timer period in cycles for one burst per expiry at `bandwidth` B/s."""
        if bandwidth <= 0:
            raise ValueError("shaper bandwidth must be positive")
        return max(1, round(self.burst_bytes / (bandwidth * CYCLE_SECONDS)))


def split_bursts(rng: DramRange, cfg: MemConfig) -> list[tuple[int, int]]:
    """Burst list (addr, payload_bytes) for a 2D transfer.

    Each row is padded up to a burst multiple; bursts are split so none
    crosses a DRAM row-buffer boundary.
    """
    out: list[tuple[int, int]] = []
    for r in range(rng.rows):
        addr = rng.base + r * rng.row_stride
        remaining = rng.row_bytes
        padded = ((remaining + cfg.burst_bytes - 1) // cfg.burst_bytes) * cfg.burst_bytes
        off = 0
        while off < padded:
            chunk = min(cfg.burst_bytes, padded - off)
            # honor the row-buffer boundary even for misaligned bases
            row_end = (addr + off) // cfg.row_buffer * cfg.row_buffer + cfg.row_buffer
            chunk = min(chunk, row_end - (addr + off))
            out.append((addr + off, min(chunk, max(0, remaining - off))))
            off += chunk
    return out


@dataclass
class Burst:
    tenant: int
    channel: Channel
    kind: BurstKind
    addr: int
    payload: int              # real bytes inside the padded burst
    cipher: Cipher = Cipher.NONE
    transfer: Optional["Transfer"] = None
    layer_id: int = -1


@dataclass
class Transfer:
    """One load/store instruction's worth of bursts."""

    tenant: int
    channel: Channel
    bursts: list[Burst]
    on_complete: Callable[[int], None]
    layer_id: int = -1
    remaining: int = 0
    done_cycle: int = -1

    def __post_init__(self):
        self.remaining = len(self.bursts)
        for b in self.bursts:
            b.transfer = self


@dataclass
class ShaperState:
    enabled: bool = False
    bandwidth: int = 0
    addr_base: int = 0
    addr_len: int = 0
    period: int = 0
    next_emit: int = 0
    enable_cycle: int = -1
    fake_cursor: int = 0


class TraceRecorder:
    """Windowed byte counters: attacker view plus privileged ground truth."""

    def __init__(self, window: int, burst_bytes: int):
        self.window = window
        self.burst_bytes = burst_bytes
        self.totals: dict[int, list[int]] = {}          # window -> [read, write]
        self.detail: dict[tuple[int, int], list[int]] = {}  # (window, tenant) -> [rr, rf, wr, wf]
        self.layer_tag: dict[tuple[int, int], int] = {}
        self.last_write: dict[tuple[int, int], int] = {}    # (tenant, layer) -> cycle of last real write
        self.shaper_spans: dict[int, list[int]] = {}        # tenant -> [enable_cycle, end_cycle]
        self.real_bytes: dict[int, int] = {}                # tenant -> padded real bytes moved

    def record(self, cycle: int, burst: Burst) -> None:
        w = cycle // self.window
        tot = self.totals.setdefault(w, [0, 0])
        tot[burst.channel] += self.burst_bytes
        det = self.detail.setdefault((w, burst.tenant), [0, 0, 0, 0])
        det[2 * burst.channel + (burst.kind == BurstKind.FAKE)] += self.burst_bytes
        if burst.kind == BurstKind.REAL:
            self.real_bytes[burst.tenant] = self.real_bytes.get(burst.tenant, 0) + self.burst_bytes
            self.layer_tag[(w, burst.tenant)] = burst.layer_id
            if burst.channel == Channel.WRITE and burst.layer_id >= 0:
                self.last_write[(burst.tenant, burst.layer_id)] = cycle

    def note_shaper(self, tenant: int, cycle: int, enabled: bool) -> None:
        span = self.shaper_spans.setdefault(tenant, [-1, -1])
        if enabled and span[0] < 0:
            span[0] = cycle
        if not enabled:
            span[1] = cycle

    def boundary_windows(self, tenant: int) -> dict[int, int]:
        """layer -> window holding its final write burst."""
        return {layer: cyc // self.window
                for (ten, layer), cyc in sorted(self.last_write.items()) if ten == tenant}

    @property
    def n_windows(self) -> int:
        return max(self.totals, default=-1) + 1

    def window_bytes(self, w: int) -> tuple[int, int]:
        tot = self.totals.get(w, (0, 0))
        return tot[0], tot[1]


class DmaEngine:
    """Shared DMA with per-tenant shapers and a bank-aware unshaped channel."""

    def __init__(self, cfg: MemConfig, trace: TraceRecorder):
        self.cfg = cfg
        self.trace = trace
        self.shapers: dict[tuple[int, int], ShaperState] = {}
        self.queues: dict[tuple[int, int], deque[Burst]] = {}   # FIFO proper, depth-capped
        self.backlog: dict[tuple[int, int], deque[Burst]] = {}  # waiting for FIFO space
        self.bank_busy: list[int] = [0] * cfg.banks
        self.bank_owner: list[int] = [-1] * cfg.banks
        self.bank_real_inflight: list[int] = [0] * cfg.banks
        self.channel_free: list[int] = [0, 0]
        self.pacing: dict[tuple[int, int], list[int]] = {}  # (tenant, ch) -> [interval, next]
        self.rr_next: list[int] = [0, 0]
        self.events: list[tuple[int, int, str, object]] = []  # heap: (cycle, seq, kind, payload)
        self._seq = 0
        self.decrypt_chain: dict[tuple[int, int], int] = {}
        self.stat_bank_conflicts: dict[int, int] = {}
        self.stat_fake_bursts: dict[int, int] = {}
        self.active_tenants: set[int] = set()
        self.last_real_cycle = 0  # fake-only activity is not forward progress

    # -- configuration ------------------------------------------------------

    def attach_tenant(self, tenant: int, bandwidth: Optional[int] = None) -> None:
        """Register a tenant; `bandwidth` is its granted unshaped DMA rate
        (platform QoS), enforced per channel even with shaping off."""
        self.active_tenants.add(tenant)
        interval = self.cfg.shaper_period(bandwidth) if bandwidth else self.cfg.channel_interval
        for ch in (Channel.READ, Channel.WRITE):
            self.queues.setdefault((tenant, ch), deque())
            self.backlog.setdefault((tenant, ch), deque())
            self.shapers.setdefault((tenant, ch), ShaperState())
            self.pacing[(tenant, ch)] = [max(interval, self.cfg.channel_interval), 0]

    def set_shaper(self, tenant: int, enabled: bool, bandwidth: int,
                   addr_base: int, addr_len: int, cycle: int) -> None:
        for ch in (Channel.READ, Channel.WRITE):
            st = self.shapers[(tenant, ch)]
            st.enabled = enabled
            if enabled:
                st.bandwidth = bandwidth
                st.addr_base, st.addr_len = addr_base, addr_len
                st.period = self.cfg.shaper_period(bandwidth)
                st.next_emit = cycle
                st.enable_cycle = cycle
        self.trace.note_shaper(tenant, cycle, enabled)

    def detach_tenant(self, tenant: int, cycle: int) -> None:
        for ch in (Channel.READ, Channel.WRITE):
            st = self.shapers[(tenant, ch)]
            if st.enabled:
                st.enabled = False
        self.trace.note_shaper(tenant, cycle, False)
        self.active_tenants.discard(tenant)

    # -- submission ---------------------------------------------------------

    def submit(self, transfer: Transfer) -> None:
        """Queue a transfer's bursts; overflow waits in the backlog until the
        FIFO drains (the unit keeps one transfer outstanding regardless)."""
        key = (transfer.tenant, transfer.channel)
        self.backlog[key].extend(transfer.bursts)
        self._refill(key)

    def _refill(self, key: tuple[int, int]) -> None:
        q, back = self.queues[key], self.backlog[key]
        while back and len(q) < self.cfg.real_queue_depth:
            q.append(back.popleft())

    def queue_len(self, tenant: int, channel: Channel) -> int:
        return len(self.queues[(tenant, channel)])

    def backlog_len(self, tenant: int, channel: Channel) -> int:
        return len(self.backlog[(tenant, channel)])

    # -- event plumbing -----------------------------------------------------

    def _push(self, cycle: int, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self.events, (cycle, self._seq, kind, payload))

    def next_event(self) -> Optional[int]:
        candidates = []
        if self.events:
            candidates.append(self.events[0][0])
        for (tenant, _ch), st in self.shapers.items():
            if st.enabled:
                candidates.append(st.next_emit)
        for (tenant, ch), q in self.queues.items():
            if q and not self.shapers[(tenant, ch)].enabled:
                candidates.append(max(self.channel_free[ch], self.pacing[(tenant, ch)][1]))
        return min(candidates) if candidates else None

    # -- per-cycle work -----------------------------------------------------

    def tick(self, cycle: int) -> list[Transfer]:
        """Advance to `cycle`: complete due bursts, then emit due ones.

        Returns transfers that finished this cycle (decryption included).
        """
        finished: list[Transfer] = []
        while self.events and self.events[0][0] <= cycle:
            _, _, kind, payload = heapq.heappop(self.events)
            if kind == "complete":
                self._complete(cycle, payload, finished)
            elif kind == "transfer-done":
                finished.append(payload)
        self._emit_shaped(cycle)
        self._emit_unshaped(cycle)
        return finished

    def _complete(self, cycle: int, burst: Burst, finished: list[Transfer]) -> None:
        bank = self.cfg.bank_of(burst.addr)
        if burst.kind == BurstKind.REAL:
            self.bank_real_inflight[bank] -= 1
        if burst.transfer is None:
            return
        tr = burst.transfer
        done = cycle
        if burst.cipher is not Cipher.NONE:
            key = (burst.tenant, burst.channel)
            chain = max(self.decrypt_chain.get(key, 0), cycle)
            done = chain + encryption_delay(self.cfg.burst_bytes, burst.cipher)
            self.decrypt_chain[key] = done
        tr.remaining -= 1
        if tr.remaining == 0:
            tr.done_cycle = done
            if done <= cycle:
                finished.append(tr)
            else:
                self._push(done, "transfer-done", tr)

    def _launch(self, cycle: int, burst: Burst) -> None:
        bank = self.cfg.bank_of(burst.addr)
        self.bank_busy[bank] = cycle + self.cfg.burst_service
        self.bank_owner[bank] = burst.tenant
        if burst.kind == BurstKind.REAL:
            self.bank_real_inflight[bank] += 1
            self.last_real_cycle = max(self.last_real_cycle, cycle)
        self.trace.record(cycle, burst)
        self._push(cycle + self.cfg.burst_service, "complete", burst)

    def _emit_shaped(self, cycle: int) -> None:
        for tenant in sorted(self.active_tenants):
            for ch in (Channel.READ, Channel.WRITE):
                st = self.shapers[(tenant, ch)]
                if not st.enabled:
                    continue
                while st.next_emit <= cycle:
                    emit_at = st.next_emit
                    st.next_emit += st.period
                    q = self.queues[(tenant, ch)]
                    burst: Optional[Burst] = None
                    if q:
                        head_bank = self.cfg.bank_of(q[0].addr)
                        # substitute a fake only when the tenant's OWN earlier
                        # burst still occupies the head bank, so a tenant's
                        # emission schedule never depends on co-tenants
                        own_conflict = (self.bank_busy[head_bank] > emit_at
                                        and self.bank_owner[head_bank] == tenant)
                        if not own_conflict:
                            burst = q.popleft()
                            self._refill((tenant, ch))
                    if burst is None:
                        burst = self._fake_burst(tenant, ch, emit_at, st)
                    self._launch(emit_at, burst)

    def _fake_burst(self, tenant: int, ch: Channel, cycle: int, st: ShaperState) -> Burst:
        slots = max(1, st.addr_len // self.cfg.burst_bytes)
        addr = st.addr_base
        for probe in range(self.cfg.banks):
            candidate = st.addr_base + ((st.fake_cursor + probe) % slots) * self.cfg.burst_bytes
            bank = self.cfg.bank_of(candidate)
            if self.bank_real_inflight[bank] == 0:
                addr = candidate
                st.fake_cursor = (st.fake_cursor + probe + 1) % slots
                break
        else:
            raise RuntimeError("no real-free bank for fake burst; bank count too low")
        self.stat_fake_bursts[tenant] = self.stat_fake_bursts.get(tenant, 0) + 1
        return Burst(tenant, ch, BurstKind.FAKE, addr, 0)

    def _emit_unshaped(self, cycle: int) -> None:
        for ch in (Channel.READ, Channel.WRITE):
            if self.channel_free[ch] > cycle:
                continue
            tenants = sorted(t for t in self.active_tenants
                             if self.queues[(t, ch)]
                             and not self.shapers[(t, ch)].enabled
                             and self.pacing[(t, ch)][1] <= cycle)
            if not tenants:
                continue
            start = self.rr_next[ch]
            order = sorted(tenants, key=lambda t: ((t - start) % 4, t))
            for tenant in order:
                q = self.queues[(tenant, ch)]
                bank = self.cfg.bank_of(q[0].addr)
                if self.bank_busy[bank] > cycle:
                    self.stat_bank_conflicts[tenant] = self.stat_bank_conflicts.get(tenant, 0) + 1
                    continue
                self._launch(cycle, q.popleft())
                self._refill((tenant, ch))
                self.rr_next[ch] = (tenant + 1) % 4
                # granted per-tenant rate plus the shared-channel slot rate
                self.pacing[(tenant, ch)][1] = cycle + self.pacing[(tenant, ch)][0]
                self.channel_free[ch] = cycle + self.cfg.channel_interval
                break
            else:
                self.channel_free[ch] = cycle + 1  # all heads bank-blocked; retry
