"""Writes the tiny convolutional network used by the ONNX backend tests,
plus the reference outputs computed by PyTorch for a fixed input batch.

    python tools/make_test_onnx.py crates/core/tests/data
"""

import json
import sys
from pathlib import Path

import torch
from torch import nn

SIDE = 32
BATCH = 3


def pattern(n, c, h, w):
    return ((h * 7 + w * 3 + c * 11 + n * 5) % 17) / 17.0


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    net = nn.Sequential(
        nn.Conv2d(3, 6, 3, stride=2),
        nn.ReLU(),
        nn.Conv2d(6, 5, 3),
    ).eval()

    x = torch.tensor(
        [[[[pattern(n, c, h, w) for w in range(SIDE)] for h in range(SIDE)] for c in range(3)] for n in range(BATCH)],
        dtype=torch.float32,
    )
    with torch.no_grad():
        y = net(x).mean(dim=(2, 3))

    torch.onnx.export(
        net,
        x,
        str(out / "tiny_cnn.onnx"),
        input_names=["input"],
        output_names=["features"],
        dynamic_axes={"input": {0: "batch"}, "features": {0: "batch"}},
        opset_version=13,
        dynamo=False,
    )
    (out / "tiny_cnn_expected.json").write_text(
        json.dumps({"side": SIDE, "gap": y.tolist()}, indent=1) + "\n"
    )


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data")
