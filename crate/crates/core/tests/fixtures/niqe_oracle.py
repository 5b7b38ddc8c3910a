"""Reference NIQE scores for the fixture images.

Runs the basicsr port of the official MATLAB NIQE (`pip install basicsr`)
and prints a JSON map of image name -> score. The basicsr package import
pulls in training code with heavy optional dependencies, so only the
metric submodules are loaded here.
"""
import importlib.util
import json
import os
import sys
import types

import cv2
import numpy as np


def load_basicsr_metrics():
    spec = importlib.util.find_spec("basicsr")
    root = os.path.dirname(spec.origin)
    for name in ("basicsr", "basicsr.metrics", "basicsr.utils"):
        mod = types.ModuleType(name)
        mod.__path__ = [os.path.join(root, *name.split(".")[1:])]
        sys.modules[name] = mod
    color_util = importlib.import_module("basicsr.utils.color_util")
    sys.modules["basicsr.utils"].bgr2ycbcr = color_util.bgr2ycbcr
    return importlib.import_module("basicsr.metrics.niqe")


def main():
    niqe = load_basicsr_metrics()
    here = os.path.dirname(os.path.abspath(__file__))
    images = os.path.join(here, "images")
    out = {}
    for fname in sorted(os.listdir(images)):
        if not fname.endswith(".png"):
            continue
        img = cv2.imread(os.path.join(images, fname), cv2.IMREAD_UNCHANGED)
        out[fname[:-4]] = niqe.calculate_niqe(img, 0, input_order="HWC", convert_to="y")
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
