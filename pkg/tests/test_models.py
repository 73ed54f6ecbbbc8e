import numpy as np
import pytest

from tsdigraph import autograd as ag
from tsdigraph.digraph import FeaturedDigraph, build_series_digraph
from tsdigraph.models import (MODEL_NAMES, SUPERVISED, UNSUPERVISED, Autoencoder, Classifier,
                              SkipBlock, SkipBlockConfig, autoencoder_forward, build_model,
                              classifier_forward, config_from_dict, config_to_dict,
                              count_params, encoder_forward, skip_block_forward,
                              named_config)
from tsdigraph.nn import Conv1d
from tsdigraph.training import load_model, predict, save_model


@pytest.fixture(scope="module")
def models():
    return {name: build_model(named_config(name), seed=0) for name in MODEL_NAMES}


def series(n, length, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, size=(n, length, 1))


# -- configuration arithmetic ------------------------------------------------

def test_single_pointwise_conv_count():
    assert count_params(Conv1d(2, 3, 1, np.random.default_rng(0))) == 9


def test_empty_skip_block_has_no_params():
    assert count_params(SkipBlockConfig("tcn", [], [])) == 0


def test_skip_block_single_layer_shape():
    cfg = SkipBlockConfig("tcn", [32], [16], 8)
    assert skip_block_forward(series(1, 640), cfg).shape == (1, 640, 16)


def test_skip_block_four_layers_shape():
    cfg = SkipBlockConfig("tcn", [32] * 4, [16] * 4, 8)
    assert skip_block_forward(series(1, 640), cfg).shape == (1, 640, 64)


def test_tcn_dilations_double():
    assert SkipBlockConfig("tcn", [8] * 3, [4] * 3).dilations == [1, 2, 4]
    block = SkipBlock(SkipBlockConfig("tcn", [8] * 3, [4] * 3), 1, np.random.default_rng(0))
    assert [c.dilation for c in block.layers] == [1, 2, 4]


def test_skip_config_validation():
    with pytest.raises(ValueError):
        SkipBlockConfig("tcn", [8, 8], [4])
    with pytest.raises(ValueError):
        SkipBlockConfig("tcn", [8, 8], [4, 4], dilations=[2, 1])


def test_gnn_skip_block_needs_graph():
    cfg = SkipBlockConfig("gnn", [4], [2])
    with pytest.raises(ValueError):
        skip_block_forward(series(1, 16), cfg)
    out = skip_block_forward(series(1, 16), cfg, graph=build_series_digraph(16))
    assert out.shape == (1, 16, 2)


def test_unknown_name():
    with pytest.raises(ValueError):
        named_config("ResNet")


# -- named models ------------------------------------------------------------

@pytest.mark.parametrize("name", SUPERVISED)
def test_classifier_outputs_probabilities(models, name):
    p = predict(models[name], series(3, 640))
    assert p.shape == (3, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


@pytest.mark.parametrize("name", UNSUPERVISED)
def test_autoencoder_round_trip_shape(models, name):
    assert predict(models[name], series(2, 128)).shape == (2, 128, 1)


@pytest.mark.parametrize("name", UNSUPERVISED)
def test_autoencoder_bottleneck(models, name):
    net = models[name]
    net.eval()
    z = net.encoder(ag.Tensor(series(1, 128)))
    shrink = net.cfg.encoder.shrink
    assert z.shape == (1, 128 // shrink, net.cfg.encoder.out_channels)
    assert net.decoder.cfg.in_channels == z.shape[-1]


def test_supervised_bottleneck_length(models):
    fd = encoder_forward(series(1, 640)[0], models["TCNClassifier"].encoder)
    assert fd.features.shape[0] == 40
    assert fd.graph.num_nodes == 40


def test_autoencoder_shrink_32_gives_four_steps(models):
    net = models["TCNAE1"]
    assert net.cfg.encoder.shrink == 32
    net.eval()
    assert net.encoder(ag.Tensor(series(1, 128))).shape[1] == 4


def test_graph_classifier_is_small(models):
    graph = count_params(models["TGraphClassifier"])
    tcn = count_params(models["TCNClassifier"])
    assert graph < tcn / 2


def test_featured_digraph_entry_points(models):
    x = series(1, 640)[0]
    fd = FeaturedDigraph(build_series_digraph(640), x)
    models["TCNClassifier"].eval()
    p = classifier_forward(fd, models["TCNClassifier"])
    assert p.shape == (2,)
    models["TCNAE1"].eval()
    rec = autoencoder_forward(FeaturedDigraph(build_series_digraph(128), x[:128]),
                              models["TCNAE1"])
    assert rec.shape == (128, 1)


def test_indivisible_length_rejected(models):
    with pytest.raises(ValueError):
        models["TCNAE1"](ag.Tensor(series(1, 100)))


def test_zero_weights_give_bias_output():
    net = build_model("TCNAE1", seed=0)
    for p in net.parameters():
        p.data[...] = 0.0
    net.decoder.final.bias.data[...] = 0.3
    net.eval()
    out = predict(net, series(2, 128))
    np.testing.assert_allclose(out, 0.3)


@pytest.mark.parametrize("name", ["TCNClassifier", "TCNAE1", "TGraphAE"])
def test_gradients_reach_every_parameter(name):
    net = build_model(named_config(name, drop_rate=0.0), seed=1)
    net.train()
    length = 640 if isinstance(net, Classifier) else 128
    x = ag.Tensor(series(2, length))
    if isinstance(net, Classifier):
        loss = ag.cross_entropy(net.logits(x), np.array([0, 1]))
    else:
        loss = ag.mse_loss(net(x), x)
    ag.backward(loss)
    for name_, p in net.named_parameters():
        assert p.grad is not None, name_
        assert np.any(p.grad != 0), name_


def test_outputs_are_causal():
    net = build_model(named_config("TCNClassifier", drop_rate=0.0), seed=0)
    net.eval()
    x = series(1, 640)
    h1 = net.encoder.skip(ag.Tensor(x)).data
    x2 = x.copy()
    x2[0, 300:] += 1.0
    h2 = net.encoder.skip(ag.Tensor(x2)).data
    np.testing.assert_array_equal(h1[0, :300], h2[0, :300])


# -- persistence -------------------------------------------------------------

@pytest.mark.parametrize("name", ["TCNGraphClassifier", "TCNGraphAE1"])
def test_save_load_round_trip(tmp_path, name):
    net = build_model(name, seed=3)
    length = 640 if name in SUPERVISED else 128
    x = series(2, length, seed=4)
    before = predict(net, x)
    save_model(net, tmp_path / "m", {"note": "x"})
    back = load_model(tmp_path / "m")
    assert type(back) is type(net)
    np.testing.assert_array_equal(predict(back, x), before)


def test_config_dict_round_trip():
    for name in MODEL_NAMES:
        cfg = named_config(name)
        assert config_to_dict(config_from_dict(config_to_dict(cfg))) == config_to_dict(cfg)


def test_build_model_types():
    assert isinstance(build_model("TGraphClassifier"), Classifier)
    assert isinstance(build_model("TGraphMixedAE"), Autoencoder)
    with pytest.raises(TypeError):
        build_model(3)
