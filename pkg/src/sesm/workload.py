"""Model IR, secrecy pragmas, and the built-in network catalog.

Layers are held at structural fidelity only: shapes drive tiling, traffic and
timing, while tensor contents are synthetic seeded bytes.  Every weighted
layer is viewed as a GEMM of (m, k, n) = (out_h*out_w, in_ch*kernel^2,
out_ch); pooling between stages is folded into the declared per-layer dims.

Adjacent-layer boundaries get a detectability label: a boundary is "easy"
when the two layers differ in shape class (kind, channels, dims, kernel,
stride), i.e. a bandwidth observer sees the traffic level change, and "hard"
when the flanking layers are indistinguishable.  Boundary accounting for the
detector study skips classifier-head (dense) boundaries and collapses runs of
three or more identical layers, whose interior boundaries are statistically
invisible, into a single countable one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional


class WorkloadError(Exception):
    pass


class ParseError(WorkloadError):
    pass


class DimensionMismatch(WorkloadError):
    pass


class UnknownVariable(WorkloadError):
    pass


class LayerKind(str, Enum):
    CONV2D = "conv"
    DENSE = "dense"
    MAXPOOL = "pool"
    RELU = "relu"
    ADD = "add"


WEIGHTED_KINDS = (LayerKind.CONV2D, LayerKind.DENSE)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int
    out_channels: int
    height: int
    width: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.height, self.width,
               self.kernel, self.stride) < 1 or self.padding < 0:
            raise DimensionMismatch(f"non-positive dimension in {self}")
        for span, name in ((self.height, "height"), (self.width, "width")):
            if (span + 2 * self.padding - self.kernel) % self.stride:
                raise DimensionMismatch(
                    f"{self.kind.value} {name}={span} k={self.kernel} s={self.stride} "
                    f"p={self.padding} has fractional output")
        if self.kind in (LayerKind.ADD, LayerKind.RELU) and self.in_channels != self.out_channels:
            raise DimensionMismatch(f"{self.kind.value} cannot change channel count")

    @property
    def out_height(self) -> int:
        return (self.height + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.width + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    @property
    def shape_class(self) -> tuple:
        """Identity under which two layers look alike to a traffic observer."""
        return (self.kind, self.in_channels, self.out_channels,
                self.out_height, self.out_width, self.kernel, self.stride)

    # GEMM view of the layer: out[m, n] over a k-wide reduction.
    @property
    def gemm_m(self) -> int:
        return self.out_height * self.out_width

    @property
    def gemm_k(self) -> int:
        if self.kind == LayerKind.DENSE:
            return self.in_channels
        return self.in_channels * self.kernel * self.kernel

    @property
    def gemm_n(self) -> int:
        return self.out_channels

    @property
    def ifm_bytes(self) -> int:
        if self.weighted:
            return self.gemm_m * self.gemm_k
        return self.gemm_m * self.out_channels

    @property
    def weight_bytes(self) -> int:
        return self.gemm_n * self.gemm_k if self.weighted else 0

    @property
    def ofm_bytes(self) -> int:
        return self.gemm_m * self.gemm_n

    @property
    def macs(self) -> int:
        return self.gemm_m * self.gemm_k * self.gemm_n if self.weighted else 0

    def describe(self) -> str:
        if self.kind in WEIGHTED_KINDS:
            return (f"{self.kind.value} in={self.in_channels} out={self.out_channels} "
                    f"h={self.height} w={self.width} k={self.kernel} s={self.stride} p={self.padding}")
        return (f"{self.kind.value} ch={self.out_channels} h={self.height} w={self.width} "
                f"k={self.kernel} s={self.stride} p={self.padding}")


EASY, HARD = "easy", "hard"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatch("model has no layers")

    @property
    def boundary_labels(self) -> tuple[str, ...]:
        classes = [layer.shape_class for layer in self.layers]
        return tuple(EASY if classes[i] != classes[i + 1] else HARD
                     for i in range(len(classes) - 1))

    @property
    def boundary_relevant(self) -> tuple[bool, ...]:
        """Which boundaries the detector study counts (see module docstring)."""
        classes = [layer.shape_class for layer in self.layers]
        flags = []
        for i in range(len(classes) - 1):
            if self.layers[i].kind == LayerKind.DENSE or self.layers[i + 1].kind == LayerKind.DENSE:
                flags.append(False)
            elif i >= 1 and classes[i - 1] == classes[i] == classes[i + 1]:
                flags.append(False)  # interior of an identical run
            else:
                flags.append(True)
        return tuple(flags)

    @property
    def boundary_counts(self) -> tuple[int, int]:
        """(easy, all) over countable boundaries."""
        labels, relevant = self.boundary_labels, self.boundary_relevant
        easy = sum(1 for lab, rel in zip(labels, relevant) if rel and lab == EASY)
        return easy, sum(relevant)

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    def scaled(self, factor: int) -> "ModelSpec":
        """Divide channel counts by `factor`, preserving depth and boundary structure."""
        if factor < 1:
            raise DimensionMismatch(f"scale must be >= 1, got {factor}")
        if factor == 1:
            return self
        layers = tuple(
            replace(layer,
                    in_channels=max(1, layer.in_channels // factor),
                    out_channels=max(1, layer.out_channels // factor))
            for layer in self.layers
        )
        return ModelSpec(f"{self.name}@{factor}", layers)

    def describe(self) -> str:
        lines = [f"name: {self.name}"]
        lines += [layer.describe() for layer in self.layers]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Threat model and pragmas


class Sharing(str, Enum):
    TEMPORAL = "temporal"
    SPATIAL = "spatial"


@dataclass(frozen=True)
class ThreatModel:
    input_private: bool = False
    model_private: bool = False
    sharing: Sharing = Sharing.TEMPORAL

    @classmethod
    def from_code(cls, code: str, sharing: Sharing = Sharing.TEMPORAL) -> "ThreatModel":
        """Two-letter secrecy code: (input, model) each p(ublic) or s(ecret)."""
        if not re.fullmatch(r"[ps]{2}", code):
            raise WorkloadError(f"threat code must match [ps][ps], got {code!r}")
        return cls(input_private=code[0] == "s", model_private=code[1] == "s", sharing=sharing)

    @property
    def code(self) -> str:
        return ("s" if self.input_private else "p") + ("s" if self.model_private else "p")

    @property
    def shaped(self) -> bool:
        """Traffic shaping guards model shape; on whenever the model is secret."""
        return self.model_private

    @property
    def any_private(self) -> bool:
        return self.input_private or self.model_private


SOURCE_VARS = ("data", "weights")


class Label(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


def join(a: Label, b: Label) -> Label:
    return Label.PRIVATE if Label.PRIVATE in (a, b) else Label.PUBLIC


@dataclass(frozen=True)
class PragmaSet:
    """User-declared resource and secrecy annotations."""

    secret_vars: frozenset[str] = frozenset()
    exec_mode: Sharing = Sharing.TEMPORAL
    queue_depth: int = 16
    spad_size: dict = field(default_factory=dict)
    bandwidth: int = 400_000_000

    def __post_init__(self):
        unknown = set(self.secret_vars) - set(SOURCE_VARS)
        if unknown:
            raise UnknownVariable(f"secret pragma names unknown variables: {sorted(unknown)}")
        if "weights" in self.secret_vars and self.bandwidth <= 0:
            raise WorkloadError("a private model requires a positive shaping bandwidth")

    @classmethod
    def from_threat(cls, threat: ThreatModel, queue_depth: int = 16,
                    spad_size: Optional[dict] = None, bandwidth: int = 400_000_000) -> "PragmaSet":
        secrets = set()
        if threat.input_private:
            secrets.add("data")
        if threat.model_private:
            secrets.add("weights")
        return cls(frozenset(secrets), threat.sharing, queue_depth, dict(spad_size or {}), bandwidth)

    @property
    def threat(self) -> ThreatModel:
        return ThreatModel("data" in self.secret_vars, "weights" in self.secret_vars, self.exec_mode)


def derive_labels(model: ModelSpec, pragmas: PragmaSet) -> dict[str, Label]:
    """Source labels for the user-visible variables; flow tracking extends
    these to per-tensor labels downstream."""
    del model  # labels attach to declared structures, not individual layers
    return {
        "data": Label.PRIVATE if "data" in pragmas.secret_vars else Label.PUBLIC,
        "weights": Label.PRIVATE if "weights" in pragmas.secret_vars else Label.PUBLIC,
    }


# ---------------------------------------------------------------------------
# Catalog


def _conv(cin, cout, h, k=3, s=1, p=None):
    if p is None:
        p = k // 2 if s == 1 else 1
    return LayerSpec(LayerKind.CONV2D, cin, cout, h, h, k, s, p)


def _down(cin, cout, h):
    # stage-transition conv: k4 s2 p1 halves even dims exactly
    return LayerSpec(LayerKind.CONV2D, cin, cout, h, h, 4, 2, 1)


def _add(ch, h):
    return LayerSpec(LayerKind.ADD, ch, ch, h, h, 1, 1, 0)


def _dense(cin, cout):
    return LayerSpec(LayerKind.DENSE, cin, cout, 1, 1, 1, 1, 0)


def _alexnet() -> ModelSpec:
    return ModelSpec("alexnet", (
        LayerSpec(LayerKind.CONV2D, 3, 96, 64, 64, 8, 4, 2),
        _conv(96, 256, 16, k=5),
        _conv(256, 384, 8),
        _conv(384, 384, 8),
        _conv(384, 384, 8),
        _dense(2048, 256),
    ))


def _vgg11() -> ModelSpec:
    return ModelSpec("vgg11", (
        _conv(3, 64, 64),
        _conv(64, 128, 32),
        _conv(128, 256, 16),
        _conv(256, 256, 16),
        _conv(256, 512, 8),
        _conv(512, 512, 4),
        _conv(512, 512, 4),
        _dense(4096, 256),
    ))


def _vgg16() -> ModelSpec:
    return ModelSpec("vgg16", (
        _conv(3, 64, 64),
        _conv(64, 64, 64),
        _conv(64, 128, 32),
        _conv(128, 128, 32),
        _conv(128, 256, 16),
        _conv(256, 256, 16),
        _conv(256, 256, 16),
        _conv(256, 512, 8),
        _conv(512, 512, 8),
        _conv(512, 512, 8),
        _conv(512, 512, 4),
        _conv(512, 512, 4),
        _conv(512, 512, 4),
        _dense(4096, 256),
    ))


def _resnet18() -> ModelSpec:
    widths = (64, 80, 128, 160, 256, 320, 512, 512)
    dims = (32, 32, 16, 16, 8, 8, 4, 4)
    layers: list[LayerSpec] = [LayerSpec(LayerKind.CONV2D, 3, 32, 64, 64, 4, 2, 1)]
    prev = 32
    for i, (w, h) in enumerate(zip(widths, dims)):
        layers.append(_conv(prev, w, h))
        layers.append(_conv(w, w, h))
        if i < 7:
            layers.append(_add(w, h))
        prev = w
    layers.append(_dense(2048, 256))
    return ModelSpec("resnet18", tuple(layers))


def _resnet34() -> ModelSpec:
    layers: list[LayerSpec] = [LayerSpec(LayerKind.CONV2D, 3, 64, 64, 64, 4, 2, 1)]
    stages = ((64, 32, 3), (128, 16, 4), (256, 8, 3), (512, 4, 2))
    for si, (w, h, blocks) in enumerate(stages):
        for b in range(blocks):
            layers.append(_conv(w, w, h))
            layers.append(_conv(w, w, h))
            last_of_open_stage = (b == blocks - 1) and si < 3
            if not last_of_open_stage:
                layers.append(_add(w, h))
        if si < 3:
            nw, nh = stages[si + 1][0], h
            layers.append(_down(w, nw, nh))
    layers.append(_dense(2048, 256))
    return ModelSpec("resnet34", tuple(layers))


def _resnet50() -> ModelSpec:
    layers: list[LayerSpec] = [LayerSpec(LayerKind.CONV2D, 3, 64, 64, 64, 4, 2, 1)]
    stages = ((64, 32, 3), (128, 16, 4), (256, 8, 3), (512, 4, 3))
    prev = 64
    index = 0
    total_blocks = sum(blocks for _, _, blocks in stages)
    for w, h, blocks in stages:
        for _ in range(blocks):
            index += 1
            layers.append(_conv(prev, w, h, k=1))
            layers.append(_conv(w, w, h))
            # final two blocks pair the 3x3 with an identical twin
            layers.append(_conv(w, w, h) if index > total_blocks - 2 else _conv(w, w, h, k=1))
            layers.append(_add(w, h))
            prev = w
    layers.append(_dense(2048, 256))
    return ModelSpec("resnet50", tuple(layers))


_CATALOG_BUILDERS = {
    "alexnet": _alexnet,
    "vgg11": _vgg11,
    "vgg16": _vgg16,
    "resnet18": _resnet18,
    "resnet34": _resnet34,
    "resnet50": _resnet50,
}

# (easy, all) countable-boundary reference for the full catalog
CATALOG_BOUNDARY_COUNTS = {
    "alexnet": (3, 4),
    "vgg11": (5, 6),
    "vgg16": (8, 11),
    "resnet18": (22, 23),
    "resnet34": (24, 36),
    "resnet50": (50, 52),
}

CATALOG_NAMES = tuple(_CATALOG_BUILDERS)


def catalog(name: str) -> ModelSpec:
    try:
        return _CATALOG_BUILDERS[name]()
    except KeyError:
        raise ParseError(f"unknown catalog model {name!r}; have {', '.join(CATALOG_NAMES)}")


# ---------------------------------------------------------------------------
# Model description files

_LINE_RE = re.compile(r"(\w+)=(\d+)")


def parse_model(text: str, name: str = "model") -> ModelSpec:
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("name:"):
            name = line.split(":", 1)[1].strip()
            continue
        head, *rest = line.split(None, 1)
        try:
            kind = LayerKind(head)
        except ValueError:
            raise ParseError(f"line {lineno}: unknown layer kind {head!r}")
        fields = dict((m.group(1), int(m.group(2))) for m in _LINE_RE.finditer(rest[0] if rest else ""))
        try:
            if kind in WEIGHTED_KINDS:
                layer = LayerSpec(kind, fields["in"], fields["out"],
                                  fields.get("h", 1), fields.get("w", fields.get("h", 1)),
                                  fields.get("k", 1), fields.get("s", 1), fields.get("p", 0))
            else:
                ch = fields["ch"]
                layer = LayerSpec(kind, ch, ch, fields["h"], fields.get("w", fields["h"]),
                                  fields.get("k", 1), fields.get("s", 1), fields.get("p", 0))
        except KeyError as exc:
            raise ParseError(f"line {lineno}: missing field {exc}")
        layers.append(layer)
    if not layers:
        raise ParseError("model description contains no layers")
    return ModelSpec(name, tuple(layers))


def load_model(source: str, scale: int = 1) -> ModelSpec:
    """Resolve a catalog name or description-file path, then apply `scale`."""
    if source in _CATALOG_BUILDERS:
        model = catalog(source)
    else:
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read model {source!r}: {exc}")
        model = parse_model(text, name=source.rsplit("/", 1)[-1].rsplit(".", 1)[0])
    return model.scaled(scale)
