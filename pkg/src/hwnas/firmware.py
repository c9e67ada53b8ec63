"""Deployable firmware descriptor: a lossless integer encoding of the final
quantized, pruned network plus the HLS settings and provenance needed to
reproduce it. Stands in for a synthesis hand-off; decoding returns exactly
the quantized real weights the network computed with.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from hwnas.config import ArchitectureSpec, HlsConfig
from hwnas.costs import analytic_estimate, effective_bops
from hwnas.nn import Network, build
from hwnas.quantize import (FixedPointFormat, from_integers, quantize_array,
                            to_integers)

DESCRIPTOR_VERSION = 1


def encode_firmware(net: Network, spec: ArchitectureSpec, hls: HlsConfig,
                    provenance: Optional[dict] = None) -> dict:
    """Integer-encode a quantized network. Weight integers are step counts
    w_int = round(w / 2**(I-T)); masked entries encode as 0 with mask 0."""
    if net.quant is None:
        raise ValueError("attach a fixed-point format before export")
    fmt = net.quant
    layers = []
    for layer in net.layers:
        w_eff = quantize_array(layer.weights * layer.mask, fmt)
        layers.append({
            "shape": list(layer.weights.shape),
            "weights_int": to_integers(w_eff, fmt).tolist(),
            "bias_int": to_integers(quantize_array(layer.bias, fmt),
                                    fmt).tolist(),
            "mask": layer.mask.astype(int).tolist(),
            "activation": layer.activation,
            "batch_norm": None if layer.bn is None else {
                "gamma": layer.bn.gamma.tolist(),
                "beta": layer.bn.beta.tolist(),
                "running_mean": layer.bn.running_mean.tolist(),
                "running_var": layer.bn.running_var.tolist(),
            },
        })
    densities = [float(l.mask.sum()) / l.mask.size for l in net.layers]
    est = analytic_estimate(spec, hls, densities=densities,
                            input_dim=net.input_dim)
    return {
        "version": DESCRIPTOR_VERSION,
        "architecture": spec.to_dict(),
        "fixed_point": {"total_bits": fmt.total_bits,
                        "integer_bits": fmt.integer_bits},
        "hls": hls.to_dict(),
        "layers": layers,
        "effective_bops": effective_bops(net),
        "resource_estimate": est.to_dict(),
        "provenance": provenance or {},
    }


def decode_firmware(descriptor: dict) -> Network:
    """Rebuild the exact quantized network from a descriptor."""
    if descriptor.get("version") != DESCRIPTOR_VERSION:
        raise ValueError(f"unsupported descriptor version "
                         f"{descriptor.get('version')!r}")
    spec = ArchitectureSpec.from_dict(descriptor["architecture"])
    fp = descriptor["fixed_point"]
    fmt = FixedPointFormat(fp["total_bits"], fp["integer_bits"])
    input_dim = descriptor["layers"][0]["shape"][0]
    net = build(spec, input_dim, spec.output_dim, seed=0)
    net.quant = fmt
    for layer, enc in zip(net.layers, descriptor["layers"]):
        layer.weights = from_integers(np.asarray(enc["weights_int"]), fmt)
        layer.bias = from_integers(np.asarray(enc["bias_int"]), fmt)
        layer.mask = np.asarray(enc["mask"], dtype=np.float64)
        bn = enc.get("batch_norm")
        if bn is not None and layer.bn is not None:
            layer.bn.gamma = np.asarray(bn["gamma"])
            layer.bn.beta = np.asarray(bn["beta"])
            layer.bn.running_mean = np.asarray(bn["running_mean"])
            layer.bn.running_var = np.asarray(bn["running_var"])
    return net


def save_descriptor(descriptor: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(descriptor, fh, indent=2, sort_keys=True)


def load_descriptor(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
