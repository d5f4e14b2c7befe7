#!/usr/bin/env python3
"""Convert torchvision VGG-19 weights into the caststyle backbone blob.

The blob holds conv1_1 .. conv4_3 (weight then bias, float32 little endian)
and a `<blob>.json` sidecar with the tap names and a SHA-256 of the blob.

    python tools/convert_torchvision_vgg19.py --out vgg19.bin            # ImageNet weights
    python tools/convert_torchvision_vgg19.py --out vgg19.bin --state-dict vgg19.pth
"""

import argparse
import hashlib
import json
import sys

import numpy as np
import torch
import torchvision

# Indices of conv1_1 .. conv4_3 inside torchvision's vgg19().features.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23]
CONV_NAMES = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
              "conv4_1", "conv4_2", "conv4_3"]
DEFAULT_TAPS = ["relu1_2", "relu2_2", "relu3_3", "relu4_3"]


def convert(model, out_path, taps=DEFAULT_TAPS):
    chunks = []
    tensors = []
    for index, name in zip(CONV_INDICES, CONV_NAMES):
        conv = model.features[index]
        for suffix, t in (("weight", conv.weight), ("bias", conv.bias)):
            arr = t.detach().cpu().numpy().astype("<f4", copy=False)
            chunks.append(np.ascontiguousarray(arr).tobytes())
            tensors.append({"name": f"{name}.{suffix}", "shape": list(arr.shape)})
    blob = b"".join(chunks)
    with open(out_path, "wb") as f:
        f.write(blob)
    sidecar = {
        "format": "caststyle-vgg19-f32le",
        "taps": list(taps),
        "tensors": tensors,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(f"{out_path}.json", "w") as f:
        json.dump(sidecar, f, indent=2)
    return sidecar["sha256"]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True, help="output blob path")
    parser.add_argument("--state-dict", help="local vgg19 state dict instead of the torchvision download")
    parser.add_argument("--taps", nargs="+", default=DEFAULT_TAPS)
    args = parser.parse_args(argv)

    if args.state_dict:
        model = torchvision.models.vgg19(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    digest = convert(model, args.out, args.taps)
    print(f"wrote {args.out} (sha256 {digest})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
