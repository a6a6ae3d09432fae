#!/usr/bin/env python3
"""Export torchvision backbone weights as a plain name -> tensor dict.

The C++ loader reads the dict with torch::pickle_load, matching tensors by
their torchvision names. `--probe` additionally writes reference activations
at every tap for a random input, which the parity tests compare against.

    python3 tools/export_weights.py --arch resnet50 --out weights/resnet50.pt
    python3 tools/export_weights.py --arch vgg19 --out weights/vgg19.pt      # AdaIN encoder
    python3 tools/export_weights.py --arch resnet34 --random-init --seed 0 \
        --out w.pt --probe probe.pt --probe-size 64
"""

import argparse
import sys

import torch
import torchvision

VGG_POOLS = {"vgg16": [4, 9, 16, 23, 30], "vgg19": [4, 9, 18, 27, 36]}


def build(arch, random_init):
    ctor = getattr(torchvision.models, arch)
    if random_init:
        return ctor(weights=None)
    return ctor(weights="DEFAULT")


def probe(model, arch, size, seed):
    gen = torch.Generator().manual_seed(seed)
    image = torch.rand(2, 3, size, size, generator=gen)
    mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
    x = (image - mean) / std
    out = {"input": image}
    model.eval()
    with torch.no_grad():
        if arch in VGG_POOLS:
            pools = VGG_POOLS[arch]
            block = 1
            for i, layer in enumerate(model.features):
                if i in pools[:-1]:
                    out[f"block{block}"] = x.clone()
                    block += 1
                x = layer(x)
                out[f"features.{i}"] = x.clone()
            out["block5"] = x.clone()
        else:
            x = model.maxpool(model.relu(model.bn1(model.conv1(x))))
            out["stem"] = x.clone()
            for name in ["layer1", "layer2", "layer3", "layer4"]:
                x = getattr(model, name)(x)
                out[name] = x.clone()
        out["global"] = x.mean(dim=(2, 3))
    return out


def main(argv):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--arch", required=True,
                        choices=["vgg16", "vgg19", "resnet34", "resnet50", "resnet101", "resnet152"])
    parser.add_argument("--out", required=True, help="output .pt file (name -> tensor dict)")
    parser.add_argument("--random-init", action="store_true", help="skip the download; use torchvision's random init")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--probe", help="also write reference tap activations to this file")
    parser.add_argument("--probe-size", type=int, default=64)
    args = parser.parse_args(argv)

    torch.manual_seed(args.seed)
    model = build(args.arch, args.random_init)
    if args.random_init:
        # give BatchNorm non-trivial statistics so the parity check covers them
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.uniform_(-0.1, 0.1)
                    m.running_var.uniform_(0.5, 1.5)
                    m.weight.uniform_(0.5, 1.5)
                    m.bias.uniform_(-0.1, 0.1)
    torch.save(dict(model.state_dict()), args.out)
    if args.probe:
        torch.save(probe(model, args.arch, args.probe_size, args.seed), args.probe)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
