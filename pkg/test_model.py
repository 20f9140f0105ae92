import struct

import numpy as np
import pytest

from errors import ChecksumError, FormatError, InvalidConfig, ShapeMismatch
from model import (
    ArchitectureHeader,
    MAGIC,
    build_paper_model,
    format_shape,
    forward,
    load_model,
    predict,
    save_model,
)


@pytest.fixture(scope="module")
def model():
    return build_paper_model(seed=0)


@pytest.fixture
def images():
    return np.random.default_rng(42).uniform(0, 1, (32, 28, 28, 1)).astype(np.float32)


# ============================================================================
# Construction
# ============================================================================

def test_parameter_count(model):
    assert model.parameter_count() == 257162
    assert model.params["conv1.kernels"].shape == (3, 3, 1, 32)
    assert model.params["conv2.kernels"].shape == (3, 3, 32, 64)
    assert model.params["conv3.kernels"].shape == (3, 3, 64, 64)
    assert model.params["dense1.weights"].shape == (3136, 64)
    assert model.params["dense2.weights"].shape == (64, 10)


def test_shape_table(model):
    table = model.shape_table()
    assert len(table) == 12
    assert table[0] == ("Input", (28, 28, 1))
    assert table[7] == ("Conv2D", (7, 7, 64))
    assert table[8] == ("Flatten", (3136,))
    assert table[-1] == ("Dense", (10,))
    assert format_shape((3136,)) == "(3136)"
    assert format_shape((28, 28, 32)) == "(28, 28, 32)"


def test_initialization_is_seeded():
    a, b, c = build_paper_model(seed=7), build_paper_model(seed=7), build_paper_model(seed=8)
    for name in a.param_names:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    assert not np.array_equal(a.params["conv1.kernels"], c.params["conv1.kernels"])


def test_he_uniform_bounds_and_zero_biases(model):
    fan_ins = {"conv1": 9, "conv2": 288, "conv3": 576, "dense1": 3136, "dense2": 64}
    for layer, fan_in in fan_ins.items():
        weights = model.params[f"{layer}.kernels" if layer.startswith("conv") else f"{layer}.weights"]
        assert np.abs(weights).max() <= np.sqrt(6.0 / fan_in) + 1e-7
        assert not model.params[f"{layer}.bias"].any()


def test_kernel_size_variant():
    wide = build_paper_model(seed=0, kernel_size=5)
    assert wide.params["conv2.kernels"].shape == (5, 5, 32, 64)
    with pytest.raises(InvalidConfig):
        build_paper_model(seed=0, kernel_size=4)
    with pytest.raises(InvalidConfig):
        build_paper_model(seed=0, dropout_rate=1.0)


# ============================================================================
# Forward / predict
# ============================================================================

def test_forward_rows_are_distributions(model, images):
    probs = forward(model, images)
    assert probs.shape == (32, 10)
    assert probs.dtype == np.float32
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert np.all(probs >= 0)


def test_inference_is_deterministic(model, images):
    assert forward(model, images).tobytes() == forward(model, images).tobytes()
    a = model.predict_proba(images, batch_size=5, threads=1)
    b = model.predict_proba(images, batch_size=5, threads=3)
    assert a.tobytes() == b.tobytes()


def test_batch_size_does_not_change_results(model, images):
    batched = forward(model, images)
    singles = np.concatenate([forward(model, images[i:i + 1]) for i in range(len(images))])
    np.testing.assert_allclose(batched, singles, rtol=1e-4, atol=1e-6)


def test_training_forward_needs_generator(model, images):
    with pytest.raises(InvalidConfig):
        model.forward(images, training=True)
    probs = model.forward(images, training=True, rng=np.random.default_rng(0))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)


def test_training_forward_exposes_cache_for_backward(model, images):
    probs, cache = forward(model, images, training=True, rng=np.random.default_rng(5), with_cache=True)
    assert probs.tobytes() == forward(model, images, training=True, rng=np.random.default_rng(5)).tobytes()
    assert len(cache) == len(model.layers)
    targets = np.eye(10, dtype=np.float32)[np.arange(len(images)) % 10]
    grads = model.backward(cache, (probs - targets) / len(images))
    assert sorted(grads) == sorted(model.param_names)
    for name in model.param_names:
        assert grads[name].shape == model.params[name].shape


def test_forward_rejects_wrong_shape(model):
    with pytest.raises(ShapeMismatch):
        forward(model, np.zeros((2, 28, 27, 1), np.float32))
    with pytest.raises(ShapeMismatch):
        forward(model, np.zeros((28, 28, 1), np.float32))


def test_predict_ties_go_to_lowest_digit():
    tied = build_paper_model(seed=0)
    tied.params["dense2.weights"] = np.zeros((64, 10), np.float32)
    bias = np.zeros(10, np.float32)
    bias[[2, 5]] = 1.0
    tied.params["dense2.bias"] = bias
    assert predict(tied, np.zeros((3, 28, 28, 1), np.float32)).tolist() == [2, 2, 2]


def test_predict_empty_batch(model):
    assert model.predict(np.zeros((0, 28, 28, 1), np.float32)).shape == (0,)


# ============================================================================
# Model file
# ============================================================================

def test_save_load_round_trip(model, images, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    loaded = load_model(path)
    for name in model.param_names:
        assert loaded.params[name].tobytes() == model.params[name].tobytes()
    assert loaded.kernel_size == 3 and loaded.dropout_rate == 0.3 and loaded.seed == 0
    assert forward(loaded, images).tobytes() == forward(model, images).tobytes()


def test_reloaded_model_predicts_identically(model, tmp_path):
    batch = np.random.default_rng(3).uniform(0, 1, (1000, 28, 28, 1)).astype(np.float32)
    loaded = load_model(save_model(model, tmp_path / "model.dcnn"))
    assert loaded.predict_proba(batch).tobytes() == model.predict_proba(batch).tobytes()
    assert np.array_equal(loaded.predict(batch), model.predict(batch))


def test_file_layout(model, tmp_path):
    raw = save_model(model, tmp_path / "model.dcnn").read_bytes()
    assert raw[:4] == MAGIC
    assert raw[4] == 1
    (header_len,) = struct.unpack_from("<I", raw, 5)
    header = ArchitectureHeader.model_validate_json(raw[9:9 + header_len])
    assert header.layers[0] == "Conv2D(32,relu)"
    assert header.layers[-1] == "Dense(10,softmax)"
    # weights (count + values per tensor) and the CRC trailer
    expected = 9 + header_len + 4 * len(model.param_names) + 4 * model.parameter_count() + 4
    assert len(raw) == expected


def test_bad_magic(model, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == 0
    assert "offset 0" in str(err.value)


def test_unsupported_version(model, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == 4


def test_unreadable_header(tmp_path):
    path = tmp_path / "garbage.dcnn"
    body = b"not json"
    path.write_bytes(MAGIC + bytes([1]) + struct.pack("<I", len(body)) + body)
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert err.value.offset == 9


def test_truncated_file(model, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError) as err:
        load_model(path)
    assert not isinstance(err.value, ChecksumError)
    assert err.value.offset is not None


def test_corrupted_weights_fail_checksum(model, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_trailing_bytes(model, tmp_path):
    path = save_model(model, tmp_path / "model.dcnn")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_model(path)
