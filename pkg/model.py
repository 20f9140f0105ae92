"""
The digit network:

    Input(28,28,1) -> Conv2D(32)+ReLU -> MaxPool -> Dropout
                   -> Conv2D(64)+ReLU -> MaxPool -> Dropout
                   -> Conv2D(64)+ReLU -> Flatten
                   -> Dense(64)+ReLU -> Dropout -> Dense(10)+Softmax

plus the DCNN model file format.
"""
import json
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

import layers
from config import IMAGE_CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH, NUM_CLASSES, get_logger, substream
from core_tensor import Tensor
from errors import ChecksumError, FormatError, InvalidConfig, NonFinite, ShapeMismatch
from layers import ConvParams, DenseParams
from training import AdamState

log = get_logger("MODEL")

MAGIC = b"DCNN"
FORMAT_VERSION = 1
INPUT_SHAPE = (IMAGE_HEIGHT, IMAGE_WIDTH, IMAGE_CHANNELS)


@dataclass(frozen=True)
class LayerSpec:
    """One row of the layer stack"""
    name: str
    kind: str  # conv | pool | dropout | flatten | dense
    output_shape: Tuple[int, ...]
    activation: Optional[str] = None
    units: int = 0

    @property
    def display_name(self) -> str:
        return {
            "conv": "Conv2D",
            "pool": "MaxPooling2D",
            "dropout": "Dropout",
            "flatten": "Flatten",
            "dense": "Dense",
        }[self.kind]

    @property
    def descriptor(self) -> str:
        if self.kind in ("conv", "dense"):
            return f"{self.display_name}({self.units},{self.activation})"
        return self.display_name


def digit_layers() -> List[LayerSpec]:
    return [
        LayerSpec("conv1", "conv", (28, 28, 32), "relu", 32),
        LayerSpec("pool1", "pool", (14, 14, 32)),
        LayerSpec("drop1", "dropout", (14, 14, 32)),
        LayerSpec("conv2", "conv", (14, 14, 64), "relu", 64),
        LayerSpec("pool2", "pool", (7, 7, 64)),
        LayerSpec("drop2", "dropout", (7, 7, 64)),
        LayerSpec("conv3", "conv", (7, 7, 64), "relu", 64),
        LayerSpec("flatten", "flatten", (3136,)),
        LayerSpec("dense1", "dense", (64,), "relu", 64),
        LayerSpec("drop3", "dropout", (64,)),
        LayerSpec("dense2", "dense", (NUM_CLASSES,), "softmax", NUM_CLASSES),
    ]


def format_shape(shape: Tuple[int, ...]) -> str:
    return "(" + ", ".join(str(d) for d in shape) + ")"


@dataclass
class NetworkModel:
    """Layer stack, parameters and per-parameter Adam state"""
    layers: List[LayerSpec]
    params: Dict[str, Tensor]
    kernel_size: int
    dropout_rate: float
    seed: int
    adam: Dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.param_names:
            if name not in self.adam:
                self.adam[name] = AdamState.fresh(self.params[name])

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def param_names(self) -> List[str]:
        names = []
        for spec in self.layers:
            if spec.kind == "conv":
                names += [f"{spec.name}.kernels", f"{spec.name}.bias"]
            elif spec.kind == "dense":
                names += [f"{spec.name}.weights", f"{spec.name}.bias"]
        return names

    @property
    def dtype(self):
        return self.params[self.param_names[0]].dtype

    def parameter_count(self) -> int:
        return int(sum(self.params[name].size for name in self.param_names))

    def shape_table(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [("Input", INPUT_SHAPE)] + [(spec.display_name, spec.output_shape) for spec in self.layers]

    def check_finite(self) -> None:
        for name in self.param_names:
            if not np.all(np.isfinite(self.params[name])):
                raise NonFinite(f"Parameter {name} contains NaN or Inf")

    def _conv(self, spec: LayerSpec) -> ConvParams:
        return ConvParams(self.params[f"{spec.name}.kernels"], self.params[f"{spec.name}.bias"])

    def _dense(self, spec: LayerSpec) -> DenseParams:
        return DenseParams(self.params[f"{spec.name}.weights"], self.params[f"{spec.name}.bias"])

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def draw_dropout_masks(self, batch_size: int, rng: np.random.Generator) -> List[Tensor]:
        """One keep-mask per Dropout layer, in stack order, for a whole batch."""
        return [
            layers.draw_dropout_mask((batch_size,) + spec.output_shape, self.dropout_rate, rng, self.dtype)
            for spec in self.layers if spec.kind == "dropout"
        ]

    def _run(self, images: Tensor, training: bool, masks: Optional[List[Tensor]]) -> Tuple[Tensor, list]:
        if images.ndim != 4 or images.shape[1:] != INPUT_SHAPE:
            raise ShapeMismatch(f"Expected a (B, 28, 28, 1) batch, got {images.shape}")
        x = images.astype(self.dtype, copy=False)
        cache = []
        drop_index = 0
        for spec in self.layers:
            if spec.kind == "conv":
                z = layers.conv2d_forward(x, self._conv(spec))
                cache.append((x, z))
                x = layers.relu_forward(z)
            elif spec.kind == "pool":
                x, argmax = layers.maxpool_forward(x)
                cache.append(argmax)
            elif spec.kind == "dropout":
                mask = masks[drop_index] if (training and masks is not None) else None
                x, dm = layers.dropout_forward(x, self.dropout_rate, training, mask=mask)
                cache.append(dm)
                drop_index += 1
            elif spec.kind == "flatten":
                cache.append(x.shape)
                x = layers.flatten_forward(x)
            elif spec.kind == "dense":
                z = layers.dense_forward(x, self._dense(spec))
                cache.append((x, z))
                x = layers.relu_forward(z) if spec.activation == "relu" else layers.softmax(z)
            if x.shape[1:] != spec.output_shape:
                raise ShapeMismatch(f"{spec.name} produced {x.shape[1:]}, expected {spec.output_shape}")
        return x, cache

    def forward_train(self, images: Tensor, masks: List[Tensor]) -> Tuple[Tensor, list]:
        """Training-mode pass with the given dropout masks; returns (probs, cache)."""
        return self._run(images, training=True, masks=masks)

    def forward(
        self,
        images: Tensor,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        with_cache: bool = False,
    ):
        """
        Class probabilities (B, 10). Inference mode never touches model state.

        Training mode draws dropout masks from `rng`. With `with_cache=True` the
        result is (probs, cache), and the cache is what `backward` consumes.
        """
        if training:
            if rng is None:
                raise InvalidConfig("Training-mode forward needs a random generator")
            probs, cache = self.forward_train(images, self.draw_dropout_masks(len(images), rng))
        else:
            probs, cache = self._run(images, training=False, masks=None)
        return (probs, cache) if with_cache else probs

    def backward(self, cache: list, grad_logits: Tensor) -> Dict[str, Tensor]:
        """Parameter gradients given d loss / d logits of the final Dense layer."""
        grads: Dict[str, Tensor] = {}
        g = grad_logits
        for spec, record in zip(reversed(self.layers), reversed(cache)):
            if spec.kind == "dense":
                x, z = record
                if spec.activation == "relu":
                    g = layers.relu_backward(z, g)
                g, grads[f"{spec.name}.weights"], grads[f"{spec.name}.bias"] = layers.dense_backward(
                    x, self._dense(spec), g
                )
            elif spec.kind == "conv":
                x, z = record
                g = layers.relu_backward(z, g)
                g, grads[f"{spec.name}.kernels"], grads[f"{spec.name}.bias"] = layers.conv2d_backward(
                    x, self._conv(spec), g
                )
            elif spec.kind == "dropout":
                g = layers.dropout_backward(record, self.dropout_rate, g)
            elif spec.kind == "pool":
                g = layers.maxpool_backward(record, g)
            elif spec.kind == "flatten":
                g = layers.flatten_backward(g, record)
        return grads

    # ------------------------------------------------------------------
    # Inference
    # ------------------------------------------------------------------

    def predict_proba(self, images: Tensor, batch_size: int = 500, threads: int = 1) -> Tensor:
        if images.ndim != 4 or images.shape[1:] != INPUT_SHAPE:
            raise ShapeMismatch(f"Expected a (B, 28, 28, 1) batch, got {images.shape}")
        if len(images) == 0:
            return np.zeros((0, NUM_CLASSES), dtype=self.dtype)
        chunks = [images[i:i + batch_size] for i in range(0, len(images), batch_size)]
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(self.forward, chunks))
        else:
            outputs = [self.forward(chunk) for chunk in chunks]
        return np.concatenate(outputs)

    def predict(self, images: Tensor, batch_size: int = 500, threads: int = 1) -> np.ndarray:
        """Most probable digit per image; ties go to the lowest digit."""
        return np.argmax(self.predict_proba(images, batch_size, threads), axis=1)


# ============================================================================
# Construction
# ============================================================================

def _he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


def build_paper_model(seed: int, kernel_size: int = 3, dropout_rate: float = 0.3, dtype=np.float32) -> NetworkModel:
    """Seeded He-uniform weights, zero biases."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidConfig(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {dropout_rate}")

    rng = substream(seed, "init")
    specs = digit_layers()
    params: Dict[str, Tensor] = {}
    channels = IMAGE_CHANNELS
    features = 0
    for spec in specs:
        if spec.kind == "conv":
            fan_in = kernel_size * kernel_size * channels
            shape = (kernel_size, kernel_size, channels, spec.units)
            params[f"{spec.name}.kernels"] = _he_uniform(rng, shape, fan_in).astype(dtype)
            params[f"{spec.name}.bias"] = np.zeros(spec.units, dtype=dtype)
            channels = spec.units
        elif spec.kind == "flatten":
            features = spec.output_shape[0]
        elif spec.kind == "dense":
            params[f"{spec.name}.weights"] = _he_uniform(rng, (features, spec.units), features).astype(dtype)
            params[f"{spec.name}.bias"] = np.zeros(spec.units, dtype=dtype)
            features = spec.units
    return NetworkModel(layers=specs, params=params, kernel_size=kernel_size, dropout_rate=dropout_rate, seed=seed)


def forward(
    model: NetworkModel,
    batch: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    with_cache: bool = False,
):
    return model.forward(batch, training=training, rng=rng, with_cache=with_cache)


def predict(model: NetworkModel, images: Tensor) -> np.ndarray:
    return model.predict(images)


# ============================================================================
# Model file
#
#   "DCNN" | version (1 byte) | header length (u32 LE) | JSON header
#   | per parameter: element count (u32 LE) + float32 LE values
#   | CRC32 of the weight region (u32 LE)
# ============================================================================

class ParameterEntry(BaseModel):
    name: str
    shape: List[int]


class ArchitectureHeader(BaseModel):
    """Textual architecture description stored ahead of the weights"""
    layers: List[str]
    kernel_size: int = Field(..., gt=0)
    dropout_rate: float = Field(..., ge=0.0, lt=1.0)
    seed: int = Field(..., ge=0)
    parameters: List[ParameterEntry]


def _header_for(model: NetworkModel) -> ArchitectureHeader:
    return ArchitectureHeader(
        layers=[spec.descriptor for spec in model.layers],
        kernel_size=model.kernel_size,
        dropout_rate=model.dropout_rate,
        seed=model.seed,
        parameters=[ParameterEntry(name=n, shape=list(model.params[n].shape)) for n in model.param_names],
    )


def save_model(model: NetworkModel, path: Union[str, Path]) -> Path:
    header = _header_for(model).model_dump_json().encode("utf-8")
    blobs = []
    for name in model.param_names:
        values = np.ascontiguousarray(model.params[name], dtype="<f4")
        blobs.append(struct.pack("<I", values.size) + values.tobytes())
    weights = b"".join(blobs)

    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(weights)
        f.write(struct.pack("<I", zlib.crc32(weights)))
    log.info(f"saved model ({model.parameter_count():,} parameters) to {path}")
    return path


def load_model(path: Union[str, Path]) -> NetworkModel:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()

    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path} is not a DCNN model file (bad magic)", offset=0)
    offset = len(MAGIC)
    if len(raw) <= offset:
        raise FormatError("File ends before the format version", offset=offset)
    if raw[offset] != FORMAT_VERSION:
        raise FormatError(f"Unsupported format version {raw[offset]}", offset=offset)
    offset += 1

    if len(raw) < offset + 4:
        raise FormatError("File ends inside the header length", offset=offset)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + header_len:
        raise FormatError("File ends inside the architecture header", offset=offset)
    try:
        header = ArchitectureHeader.model_validate_json(raw[offset:offset + header_len])
    except (ValidationError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"Unreadable architecture header: {e}", offset=offset) from e
    offset += header_len

    try:
        model = build_paper_model(header.seed, header.kernel_size, header.dropout_rate)
    except InvalidConfig as e:
        raise FormatError(f"Header describes an unbuildable model: {e}", offset=len(MAGIC) + 5) from e
    expected = _header_for(model)
    if header.layers != expected.layers or header.parameters != expected.parameters:
        raise FormatError("Header layer stack does not match the digit network", offset=len(MAGIC) + 5)

    weights_start = offset
    for name in model.param_names:
        shape = model.params[name].shape
        if len(raw) < offset + 4:
            raise FormatError(f"Truncated weight blob: missing element count of {name}", offset=offset)
        (count,) = struct.unpack_from("<I", raw, offset)
        if count != model.params[name].size:
            raise FormatError(f"{name} holds {count} values, expected {model.params[name].size}", offset=offset)
        offset += 4
        if len(raw) < offset + 4 * count:
            raise FormatError(f"Truncated weight blob: {name} needs {4 * count} bytes", offset=offset)
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        model.params[name] = values.astype(np.float32).reshape(shape)
        offset += 4 * count
    weights_end = offset

    if len(raw) < offset + 4:
        raise FormatError("Truncated file: missing CRC32 trailer", offset=offset)
    (stored_crc,) = struct.unpack_from("<I", raw, offset)
    if len(raw) != offset + 4:
        raise FormatError(f"{len(raw) - offset - 4} unexpected bytes after the CRC32 trailer", offset=offset + 4)
    if zlib.crc32(raw[weights_start:weights_end]) != stored_crc:
        raise ChecksumError("Weight region fails its CRC32 check", offset=weights_start)

    model.adam = {name: AdamState.fresh(model.params[name]) for name in model.param_names}
    model.check_finite()
    log.info(f"loaded model from {path}")
    return model
