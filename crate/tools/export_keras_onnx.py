"""Export ImageNet-pretrained Keras backbones to ONNX for `covifex extract`.

Each network is built with include_top=False and pooling="avg", so the ONNX
output is the globally pooled last convolutional block, shape (N, D). Keras
graphs are channels-last: pass `--layout nhwc` to the CLI.

    pip install tensorflow tf2onnx
    python tools/export_keras_onnx.py --out models/ DenseNet121 ResNet50

Writes models/<Name>.onnx. Input preprocessing is done by covifex, not by the
exported graph.
"""

import argparse
import pathlib
import sys

SIDES = {
    "MobileNet": 224,
    "DenseNet121": 224,
    "DenseNet201": 224,
    "Xception": 224,
    "InceptionV3": 224,
    "InceptionResNetV2": 224,
    "ResNet50": 224,
    "ResNet152": 224,
    "VGG16": 224,
    "VGG19": 224,
    "NASNetLarge": 331,
    "NASNetMobile": 224,
    "ResNet50V2": 224,
    "ResNet101V2": 224,
    "ResNet152V2": 224,
}


def export(name, out_dir, opset):
    import tensorflow as tf
    import tf2onnx

    side = SIDES[name]
    ctor = getattr(tf.keras.applications, name)
    net = ctor(include_top=False, weights="imagenet", pooling="avg", input_shape=(side, side, 3))
    spec = (tf.TensorSpec((None, side, side, 3), tf.float32, name="input"),)
    path = out_dir / f"{name}.onnx"
    tf2onnx.convert.from_keras(net, input_signature=spec, opset=opset, output_path=str(path))
    print(f"{name}: {net.output_shape[-1]} features -> {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help="architectures to export (default: all)")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("models"))
    ap.add_argument("--opset", type=int, default=13)
    args = ap.parse_args()
    names = args.names or list(SIDES)
    unknown = [n for n in names if n not in SIDES]
    if unknown:
        sys.exit(f"unknown architectures: {', '.join(unknown)}")
    args.out.mkdir(parents=True, exist_ok=True)
    for n in names:
        export(n, args.out, args.opset)


if __name__ == "__main__":
    main()
