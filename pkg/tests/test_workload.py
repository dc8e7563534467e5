"""Model catalog, boundary labeling, and threat pragmas."""

import pytest

from sesm import workload as w


TABLE_COUNTS = {
    "alexnet": (3, 4),
    "vgg11": (5, 6),
    "vgg16": (8, 11),
    "resnet18": (22, 23),
    "resnet34": (24, 36),
    "resnet50": (50, 52),
}


@pytest.mark.parametrize("name,expected", sorted(TABLE_COUNTS.items()))
def test_catalog_boundary_counts(name, expected):
    model = w.catalog(name)
    assert model.boundary_counts == expected


@pytest.mark.parametrize("name", sorted(TABLE_COUNTS))
@pytest.mark.parametrize("scale", [2, 4, 8])
def test_scaling_preserves_boundary_structure(name, scale):
    model = w.catalog(name).scaled(scale)
    assert model.boundary_counts == TABLE_COUNTS[name]
    assert len(model.layers) == len(w.catalog(name).layers)


def test_vgg16_shape():
    model = w.catalog("vgg16")
    assert len(model.layers) == 14
    kinds = [l.kind for l in model.layers]
    assert kinds.count(w.LayerKind.CONV2D) == 13
    assert kinds.count(w.LayerKind.DENSE) == 1
    assert model.boundary_counts == (8, 11)


def test_alexnet_counts():
    assert w.catalog("alexnet").boundary_counts == (3, 4)


def test_single_layer_model_has_no_boundaries():
    model = w.ModelSpec("one", (w.LayerSpec(w.LayerKind.CONV2D, 3, 8, 8, 8, 3, 1, 1),))
    assert model.boundary_labels == ()
    assert model.boundary_counts == (0, 0)


def test_boundary_count_matches_layer_count():
    for name in TABLE_COUNTS:
        model = w.catalog(name)
        assert len(model.boundary_labels) == len(model.layers) - 1


def test_conv_output_dims_integral():
    with pytest.raises(w.DimensionMismatch):
        w.LayerSpec(w.LayerKind.CONV2D, 3, 8, 7, 7, 2, 2, 0)  # fractional output


def test_describe_parse_roundtrip():
    model = w.catalog("resnet18")
    back = w.parse_model(model.describe())
    assert back.name == model.name
    assert back.layers == model.layers


def test_parse_errors():
    with pytest.raises(w.ParseError):
        w.parse_model("granola in=3 out=4\n")
    with pytest.raises(w.ParseError):
        w.parse_model("conv out=4 h=8\n")  # missing in=
    with pytest.raises(w.ParseError):
        w.parse_model("# nothing here\n")


def test_load_model_catalog_and_file(tmp_path):
    model = w.load_model("vgg11", scale=4)
    assert model.layers[0].out_channels == 16
    path = tmp_path / "tiny.model"
    path.write_text("name: tiny\nconv in=3 out=8 h=8 w=8 k=3 s=1 p=1\ndense in=64 out=16\n")
    custom = w.load_model(str(path))
    assert custom.name == "tiny"
    assert len(custom.layers) == 2


def test_threat_codes():
    assert w.ThreatModel.from_code("pp").code == "pp"
    assert w.ThreatModel.from_code("sp").input_private
    assert not w.ThreatModel.from_code("sp").model_private
    assert w.ThreatModel.from_code("ps").model_private
    assert w.ThreatModel.from_code("ss").shaped
    assert not w.ThreatModel.from_code("sp").shaped
    with pytest.raises(w.WorkloadError):
        w.ThreatModel.from_code("xx")


def test_eight_configurations():
    seen = set()
    for code in ("pp", "sp", "ps", "ss"):
        for sharing in w.Sharing:
            t = w.ThreatModel.from_code(code, sharing)
            seen.add((t.input_private, t.model_private, t.sharing))
    assert len(seen) == 8


def test_derive_labels_all_public():
    model = w.catalog("alexnet")
    pragmas = w.PragmaSet.from_threat(w.ThreatModel())
    labels = w.derive_labels(model, pragmas)
    assert set(labels.values()) == {w.Label.PUBLIC}


def test_derive_labels_private_model():
    model = w.catalog("alexnet")
    pragmas = w.PragmaSet.from_threat(w.ThreatModel(model_private=True))
    labels = w.derive_labels(model, pragmas)
    assert labels["weights"] == w.Label.PRIVATE
    assert labels["data"] == w.Label.PUBLIC


def test_unknown_secret_variable_rejected():
    with pytest.raises(w.UnknownVariable):
        w.PragmaSet(secret_vars=frozenset({"nonesuch"}))


def test_private_model_needs_bandwidth():
    with pytest.raises(w.WorkloadError):
        w.PragmaSet(secret_vars=frozenset({"weights"}), bandwidth=0)
