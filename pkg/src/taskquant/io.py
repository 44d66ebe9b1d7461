"""Versioned binary files for designs and trained networks.

Both formats open with the magic bytes TBQ1 and a record-kind byte, followed
by a dimension header and row-major little-endian 64-bit floats.
"""

from __future__ import annotations

import struct

import numpy as np

from .deep import DenseLayer, Network, SoftQuantizer
from .errors import ConfigError
from .linear_task import QuantizerDesign
from .quant import UniformQuantizerSpec

__all__ = ["save_design", "load_design", "save_model", "load_model"]

MAGIC = b"TBQ1"
_KIND_DESIGN = 1
_KIND_MODEL = 2
_ACT_CODES = {"identity": 0, "tanh": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_HEAD_CODES = {"estimation": 0, "classification": 1}
_HEAD_NAMES = {v: k for k, v in _HEAD_CODES.items()}


def _write_array(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, shape):
    count = int(np.prod(shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ConfigError("file truncated while reading float data")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _read_header(fh, expected_kind):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ConfigError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    kind = struct.unpack("<B", fh.read(1))[0]
    if kind != expected_kind:
        raise ConfigError(f"record kind {kind} does not match expected {expected_kind}")


def save_design(path, design: QuantizerDesign):
    a, b = design.analog, design.digital
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", _KIND_DESIGN))
        fh.write(struct.pack("<IIIIB", a.shape[0], a.shape[1], b.shape[0],
                             design.quantizer.levels,
                             1 if design.quantizer.dithered else 0))
        fh.write(struct.pack("<ddd", design.quantizer.support,
                             design.predicted_excess_mse, design.waterline))
        fh.write(struct.pack("<I", design.singular_values.size))
        _write_array(fh, a)
        _write_array(fh, b)
        _write_array(fh, design.singular_values)


def load_design(path) -> QuantizerDesign:
    with open(path, "rb") as fh:
        _read_header(fh, _KIND_DESIGN)
        channels, n, k, levels, dithered = struct.unpack("<IIIIB", fh.read(17))
        support, predicted, waterline = struct.unpack("<ddd", fh.read(24))
        n_sing = struct.unpack("<I", fh.read(4))[0]
        analog = _read_array(fh, (channels, n))
        digital = _read_array(fh, (k, channels))
        sing = _read_array(fh, (n_sing,))
    spec = UniformQuantizerSpec(levels=levels, support=support,
                                dithered=bool(dithered))
    return QuantizerDesign(analog=analog, quantizer=spec, digital=digital,
                           predicted_excess_mse=predicted,
                           singular_values=sing, waterline=waterline)


def _write_layers(fh, layers):
    fh.write(struct.pack("<I", len(layers)))
    for layer in layers:
        out_dim, in_dim = layer.weights.shape
        fh.write(struct.pack("<IIB", out_dim, in_dim, _ACT_CODES[layer.activation]))
    for layer in layers:
        _write_array(fh, layer.weights)
        _write_array(fh, layer.bias)


def _read_layers(fh):
    count = struct.unpack("<I", fh.read(4))[0]
    shapes = []
    for _ in range(count):
        out_dim, in_dim, act = struct.unpack("<IIB", fh.read(9))
        shapes.append((out_dim, in_dim, _ACT_NAMES[act]))
    layers = []
    for out_dim, in_dim, act in shapes:
        weights = _read_array(fh, (out_dim, in_dim))
        bias = _read_array(fh, (out_dim,))
        layers.append(DenseLayer(weights=weights, bias=bias, activation=act))
    return layers


def save_model(path, net: Network):
    """Serialize a soft-quantizer network (training-time form)."""
    if not isinstance(net.quantizer, SoftQuantizer):
        raise ConfigError("only soft-quantizer networks serialize; "
                          "harden after loading instead")
    qz = net.quantizer
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", _KIND_MODEL))
        fh.write(struct.pack("<B", _HEAD_CODES[net.head]))
        fh.write(struct.pack("<II", qz.outer.shape[0], qz.outer.shape[1]))
        _write_layers(fh, net.analog)
        _write_array(fh, qz.outer)
        _write_array(fh, qz.shifts)
        _write_array(fh, qz.steepness)
        _write_layers(fh, net.digital)


def load_model(path) -> Network:
    with open(path, "rb") as fh:
        _read_header(fh, _KIND_MODEL)
        head = _HEAD_NAMES[struct.unpack("<B", fh.read(1))[0]]
        channels, terms = struct.unpack("<II", fh.read(8))
        analog = _read_layers(fh)
        outer = _read_array(fh, (channels, terms))
        shifts = _read_array(fh, (channels, terms))
        steepness = _read_array(fh, (channels, terms))
        digital = _read_layers(fh)
    quant = SoftQuantizer(outer=outer, shifts=shifts, steepness=steepness)
    return Network(analog=analog, quantizer=quant, digital=digital, head=head)
