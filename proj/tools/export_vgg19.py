"""Convert torchvision's ImageNet VGG19 convolution weights to a PCBW archive.

    python tools/export_vgg19.py $PCB_SENTINEL_CACHE/vgg19_features.pcbw

Needs torch + torchvision and network access (or a warm torch hub cache).
"""
import argparse
import struct
import sys

import numpy as np


def vgg19_convs():
    import torchvision

    weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights).eval()
    return [m for m in model.features if m.__class__.__name__ == "Conv2d"]


def names():
    counts = [2, 2, 4, 4, 4]
    for b, n in enumerate(counts, start=1):
        for i in range(1, n + 1):
            yield f"conv{b}_{i}"


def write_archive(path, convs):
    entries = []
    for name, conv in zip(names(), convs):
        w = conv.weight.detach().numpy().astype("<f4")
        out_c = w.shape[0]
        entries.append((name + ".weight", (out_c, w[0].size, 1, 1), w.reshape(out_c, -1)))
        b = conv.bias.detach().numpy().astype("<f4")
        entries.append((name + ".bias", (out_c, 1, 1, 1), b))
    with open(path, "wb") as f:
        f.write(b"PCBW")
        f.write(struct.pack("<II", 1, len(entries)))
        for name, shape, data in entries:
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<IIII", *shape))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    args = ap.parse_args()
    convs = vgg19_convs()
    if len(convs) != 16:
        sys.exit(f"expected 16 convolutions, found {len(convs)}")
    write_archive(args.output, convs)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
