"""
Score network: a small convolutional encoder-decoder mapping an envelope image to a
same-shape score image, plus the NKSN checkpoint format.

Checkpoint layout (little-endian):

    4s   magic b"NKSN"
    u32  format version
    u32  length of the topology descriptor
    ...  topology descriptor, UTF-8 JSON
    u64  parameter count
    f8[] parameters in module registration order
"""

import json
import logging
import math
import struct
from pathlib import Path
from typing import List, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import ValidationError
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from .config import Topology
from .errors import ConfigurationError, FormatError
from .formats import atomic_write, read_bytes
from .models import EnvelopeImage

logger = logging.getLogger(__name__)

NKSN_MAGIC = b"NKSN"
NKSN_VERSION = 1

_DTYPES = {"float64": torch.float64, "float32": torch.float32}


def _conv(in_channels: int, out_channels: int, kernel_size: int) -> nn.Conv2d:
    return nn.Conv2d(
        in_channels, out_channels, kernel_size, padding=kernel_size // 2, padding_mode="replicate"
    )


class ConvBlock(nn.Module):
    """Two same-size convolutions, each followed by SiLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        self.layers = nn.Sequential(
            _conv(in_channels, out_channels, kernel_size),
            nn.SiLU(),
            _conv(out_channels, out_channels, kernel_size),
            nn.SiLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class ScoreNetwork(nn.Module):
    """Encoder-decoder with skip concatenation and a 1x1 output head.

    Each encoder level halves the resolution by average pooling; the decoder upsamples
    by nearest neighbour and concatenates the matching encoder features. Inputs whose
    sides are not multiples of 2^(levels - 1) are reflect-padded and the output cropped
    back.
    """

    def __init__(self, topology: Topology):
        super().__init__()
        self.topology = topology
        k = topology.kernel_size
        channels = list(topology.channels)

        self.encoders = nn.ModuleList()
        in_channels = 1
        for width in channels:
            self.encoders.append(ConvBlock(in_channels, width, k))
            in_channels = width

        self.decoders = nn.ModuleList()
        for level in range(len(channels) - 2, -1, -1):
            self.decoders.append(ConvBlock(channels[level + 1] + channels[level], channels[level], k))

        self.head = nn.Conv2d(channels[0], 1, kernel_size=1)

    @property
    def multiple(self) -> int:
        return 2 ** (self.topology.levels - 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ConfigurationError(f"Score network expects (batch, 1, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        pad_h, pad_w = (-h) % self.multiple, (-w) % self.multiple
        if pad_h or pad_w:
            mode = "reflect" if pad_h < h and pad_w < w else "replicate"
            x = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)

        skips: List[torch.Tensor] = []
        for level, encoder in enumerate(self.encoders):
            x = encoder(x)
            if level < len(self.encoders) - 1:
                skips.append(x)
                x = F.avg_pool2d(x, 2)

        for decoder in self.decoders:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = decoder(torch.cat([x, skips.pop()], dim=1))

        return self.head(x)[..., :h, :w]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def topology_parameter_count(topology: Topology) -> int:
    """Parameter count of ScoreNetwork(topology), computed without allocating it."""
    k2 = topology.kernel_size**2
    c = list(topology.channels)

    def block(cin: int, cout: int) -> int:
        return cin * cout * k2 + cout + cout * cout * k2 + cout

    total = sum(block(cin, cout) for cin, cout in zip([1] + c[:-1], c))
    total += sum(block(c[i + 1] + c[i], c[i]) for i in range(len(c) - 1))
    return total + c[0] + 1


def initialize(net: ScoreNetwork, seed: int) -> ScoreNetwork:
    """He-uniform conv weights, zero biases, zero output head."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = math.sqrt(6.0 / fan_in)
                module.weight.uniform_(-bound, bound, generator=generator)
                module.bias.zero_()
        net.head.weight.zero_()
        net.head.bias.zero_()
    return net


def build_network(topology: Topology, seed: int = 0, precision: str = "float64") -> ScoreNetwork:
    net = ScoreNetwork(topology).to(_DTYPES[precision])
    initialize(net, seed)
    logger.debug(f"Built score network with {net.parameter_count()} parameters")
    return net


def forward(net: ScoreNetwork, image: EnvelopeImage) -> np.ndarray:
    """Score image for one envelope image, as float64."""
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(image.data, dtype=dtype).reshape(1, 1, *image.shape)
    with torch.no_grad():
        out = net(x)
    return out[0, 0].to(torch.float64).numpy().copy()


def _descriptor(topology: Topology) -> bytes:
    return json.dumps(topology.model_dump(mode="json"), sort_keys=True).encode("utf-8")


def encode_network(net: ScoreNetwork) -> bytes:
    descriptor = _descriptor(net.topology)
    params = parameters_to_vector(net.parameters()).detach().to(torch.float64).numpy()
    return b"".join(
        [
            struct.pack("<4sII", NKSN_MAGIC, NKSN_VERSION, len(descriptor)),
            descriptor,
            struct.pack("<Q", params.size),
            params.astype("<f8").tobytes(),
        ]
    )


def decode_network(payload: bytes, precision: str = "float64") -> ScoreNetwork:
    header = struct.calcsize("<4sII")
    if len(payload) < header:
        raise FormatError("NKSN file is truncated (header)", {"size": len(payload)})
    magic, version, desc_len = struct.unpack_from("<4sII", payload, 0)
    if magic != NKSN_MAGIC:
        raise FormatError(f"Not an NKSN checkpoint (magic {magic!r})")
    if version != NKSN_VERSION:
        raise FormatError(
            f"Unsupported NKSN version {version} (expected {NKSN_VERSION})",
            {"found": version, "expected": NKSN_VERSION},
        )

    offset = header
    if len(payload) < offset + desc_len + 8:
        raise FormatError("NKSN file is truncated (topology descriptor)")
    try:
        topology = Topology.model_validate(json.loads(payload[offset : offset + desc_len].decode("utf-8")))
    except (UnicodeDecodeError, ValueError, ValidationError) as e:
        raise FormatError(f"NKSN topology descriptor is invalid: {e}")
    except RecursionError:
        raise FormatError("NKSN topology descriptor is nested too deeply")
    offset += desc_len

    (count,) = struct.unpack_from("<Q", payload, offset)
    offset += 8
    expected = topology_parameter_count(topology)
    if count != expected:
        raise FormatError(
            f"NKSN parameter count {count} does not match topology ({expected})",
            {"found": count, "expected": expected},
        )
    remaining = len(payload) - offset
    if remaining != 8 * count:
        kind = "truncated" if remaining < 8 * count else "followed by trailing bytes"
        raise FormatError(f"NKSN parameter payload is {kind}", {"bytes": remaining, "expected": 8 * count})

    values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
    net = ScoreNetwork(topology).to(_DTYPES[precision])
    with torch.no_grad():
        vector_to_parameters(torch.from_numpy(values).to(_DTYPES[precision]), net.parameters())
    return net


def save_network(net: ScoreNetwork, path: Union[str, Path]) -> None:
    atomic_write(path, encode_network(net))
    logger.info(f"Saved score network checkpoint to {path}")


def load_network(path: Union[str, Path], precision: str = "float64") -> ScoreNetwork:
    return decode_network(read_bytes(path), precision)
