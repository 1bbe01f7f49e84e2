#!/usr/bin/env python3
"""Convert a RobustBench WRN-28-10 state dict (Standard, CIFAR-10) into a ctta checkpoint.

    python scripts/convert_robustbench.py Standard.pt wrn28_standard.npz

Keys like ``block1.layer.0.bn1.weight`` become ``backbone/block1/layer0/bn1/weight``;
``fc.*`` becomes ``classifier/*``. ``num_batches_tracked`` entries are dropped.
"""
import argparse
import io
import json
import re
import zipfile

import numpy as np
import torch


def convert_key(key):
    if key.startswith("fc."):
        return "classifier/" + key[3:]
    key = re.sub(r"\.layer\.(\d+)\.", r"/layer\1/", key)
    return "backbone/" + key.replace(".", "/")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("state_dict")
    ap.add_argument("out")
    ap.add_argument("--widen-factor", type=int, default=10)
    args = ap.parse_args()

    state = torch.load(args.state_dict, map_location="cpu")
    if "state_dict" in state:
        state = state["state_dict"]
    state = {k.removeprefix("module."): v for k, v in state.items()}

    with zipfile.ZipFile(args.out, "w", zipfile.ZIP_STORED) as z:
        for key, value in sorted(state.items()):
            if key.endswith("num_batches_tracked"):
                continue
            buf = io.BytesIO()
            np.lib.format.write_array(buf, value.float().numpy().astype("<f4"), allow_pickle=False)
            z.writestr(f"param/{convert_key(key)}.npy", buf.getvalue())
        meta = {
            "arch_id": "wrn28",
            "widen_factor": str(args.widen_factor),
            "num_classes": "10",
            "input_mean": "0,0,0",
            "input_std": "1,1,1",
            "dataset": "cifar10",
        }
        z.writestr("meta", json.dumps(meta, indent=1))


if __name__ == "__main__":
    main()
