"""Export torchvision VGG19 convolutions (conv1_1 .. conv5_4) to a RSGCKPT1
feature-extractor checkpoint readable by `ranksurge train-sr --features`.

    python scripts/export_vgg19.py vgg19.ckpt
    python scripts/export_vgg19.py vgg19.ckpt --state-dict vgg19-dcbb9e9d.pth
"""

import argparse
import json
import struct
import sys

import numpy as np
import torch
import torchvision

WIDTHS = [64, 128, 256, 512, 512]
DEPTHS = [2, 2, 4, 4, 4]


def load_vgg(state_dict):
    if state_dict is None:
        weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
        return torchvision.models.vgg19(weights=weights)
    model = torchvision.models.vgg19(weights=None)
    model.load_state_dict(torch.load(state_dict, map_location="cpu"))
    return model


def conv_params(model):
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    if len(convs) != sum(DEPTHS):
        sys.exit(f"expected {sum(DEPTHS)} convolutions, found {len(convs)}")
    blob = []
    for conv in convs:
        blob.append(conv.weight.detach().cpu().numpy().astype("<f4").ravel())
        blob.append(conv.bias.detach().cpu().numpy().astype("<f4").ravel())
    return np.concatenate(blob)


def write_checkpoint(path, params):
    header = {
        "kind": "features",
        "arch": {"widths": WIDTHS, "depths": DEPTHS},
        "state": {"iteration": 0, "seed": 0, "lr": 0.0},
    }
    header = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(b"RSGCKPT1")
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<Q", params.size))
        f.write(params.astype("<f4").tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output")
    parser.add_argument("--state-dict", help="local torchvision VGG19 state dict; downloads the ImageNet weights when omitted")
    args = parser.parse_args()
    params = conv_params(load_vgg(args.state_dict))
    write_checkpoint(args.output, params)
    print(f"wrote {params.size} parameters to {args.output}")


if __name__ == "__main__":
    main()
