#!/usr/bin/env python3
"""Regenerate the golden test fixtures under tests/data/.

Golden values come from the package's own forward pass at generation time
and pin regressions; rerun this script only when an intentional numeric
change invalidates them (bit-level values are build-specific).
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from rthare.imfe import IMFEConfig, IMFENetwork, extract_motion_feature, save_checkpoint
from rthare.tensor import Tensor, save_tensor

DATA = ROOT / "tests" / "data"


def tiny_clip(seed):
    rng = np.random.default_rng(seed)
    cfg = IMFEConfig.profile("tiny")
    return Tensor(rng.uniform(-1.0, 1.0,
                              size=(cfg.clip_len, 3, cfg.height, cfg.width)).astype(np.float32))


def main():
    DATA.mkdir(parents=True, exist_ok=True)

    # library-level golden: tiny profile, net seed 42, clip seed 42
    net = IMFENetwork.create(IMFEConfig.profile("tiny"), seed=42)
    feature = extract_motion_feature(tiny_clip(42), net)
    save_tensor(DATA / "imfe_tiny_seed42_feature.rtt1", feature)

    # CLI extract fixture: checkpoint dir + input clip + expected output
    ckpt_dir = DATA / "tiny_ckpt_seed42"
    save_checkpoint(net, ckpt_dir)
    clip = tiny_clip(7)
    save_tensor(DATA / "tiny_clip_seed7.rtt1", clip)
    save_tensor(DATA / "tiny_clip_seed7_feature.rtt1", extract_motion_feature(clip, net))

    print("golden fixtures written to", DATA)


if __name__ == "__main__":
    main()
