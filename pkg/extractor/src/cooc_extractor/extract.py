"""Run images through a pretrained CNN and write activation tensors.

Images are fed at their original size (optionally rescaled by each factor
in the scale list) through the convolutional trunk of the backbone; the
post-ReLU feature map is transposed to rows x columns x channels and
written as one COOCT file per (image, scale), named
``<stem>@<scale>.cooct``.

Backbones: ``vgg16`` exposes the last pooling layer ("pool5",
512 channels, stride 32); ``resnet50`` exposes the layer4 output
(2048 channels, stride 32) for the large-depth benchmark shapes.
"""

import argparse
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .tensor_io import write_cooct

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}

# ImageNet statistics expected by the torchvision pretrained weights.
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)

DEFAULT_SCALES = (1.0, 0.7071, 0.5)

# backbone stride: both trunks downsample by 32
MIN_SIDE = 32


@dataclass
class ExtractJob:
    image_dir: Path
    out_dir: Path
    backbone: str = "vgg16"
    layer: str = "pool5"
    scales: tuple[float, ...] = DEFAULT_SCALES
    device: str = "cpu"
    pretrained: bool = True
    weights_path: Path | None = None

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.out_dir = Path(self.out_dir)
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scale factors must be positive, got {self.scales}")


class BackboneError(RuntimeError):
    """The requested backbone or its weights could not be loaded."""


def _build_backbone(job: ExtractJob) -> torch.nn.Module:
    import torchvision.models as models

    try:
        if job.backbone == "vgg16":
            if job.layer != "pool5":
                raise BackboneError(f"vgg16 exposes only pool5, got layer {job.layer!r}")
            weights = models.VGG16_Weights.IMAGENET1K_V1 if job.pretrained else None
            net = models.vgg16(weights=None if job.weights_path else weights)
            trunk = net.features
        elif job.backbone == "resnet50":
            weights = models.ResNet50_Weights.IMAGENET1K_V1 if job.pretrained else None
            net = models.resnet50(weights=None if job.weights_path else weights)
            trunk = torch.nn.Sequential(
                net.conv1, net.bn1, net.relu, net.maxpool,
                net.layer1, net.layer2, net.layer3, net.layer4,
            )
        else:
            raise BackboneError(f"unknown backbone {job.backbone!r}")
        if job.weights_path is not None:
            state = torch.load(job.weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
    except BackboneError:
        raise
    except Exception as exc:
        raise BackboneError(f"cannot load backbone {job.backbone!r}: {exc}") from exc
    trunk = trunk.to(job.device).eval()
    return trunk


def _load_image(path: Path) -> Image.Image:
    with Image.open(path) as img:
        return img.convert("RGB")


def _to_input(image: Image.Image, scale: float) -> torch.Tensor:
    if scale != 1.0:
        width = max(1, round(image.width * scale))
        height = max(1, round(image.height * scale))
        image = image.resize((width, height), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 255.0
    array = (array - np.array(CHANNEL_MEAN, dtype=np.float32)) / np.array(
        CHANNEL_STD, dtype=np.float32
    )
    return torch.from_numpy(array.transpose(2, 0, 1)).unsqueeze(0)


def _scale_tag(scale: float) -> str:
    return f"{scale:g}"


def list_images(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )


def extract(job: ExtractJob) -> list[Path]:
    """Extract every image in the job; returns the written tensor paths.

    Unreadable or too-small images are skipped with a warning; a backbone
    that cannot be built aborts the whole job.
    """
    trunk = _build_backbone(job)
    images = list_images(job.image_dir)
    if not images:
        raise FileNotFoundError(f"no images in {job.image_dir}")
    job.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in images:
        try:
            image = _load_image(path)
        except Exception as exc:
            warnings.warn(f"skipping unreadable image {path}: {exc}", stacklevel=2)
            continue
        for scale in job.scales:
            batch = _to_input(image, scale)
            if batch.shape[2] < MIN_SIDE or batch.shape[3] < MIN_SIDE:
                warnings.warn(
                    f"skipping {path} at scale {scale:g}: "
                    f"{batch.shape[3]}x{batch.shape[2]} is below the {MIN_SIDE}px stride",
                    stacklevel=2,
                )
                continue
            with torch.no_grad():
                features = trunk(batch.to(job.device))[0]
            tensor = features.cpu().numpy().transpose(1, 2, 0)  # rows, cols, channels
            out_path = job.out_dir / f"{path.stem}@{_scale_tag(scale)}.cooct"
            write_cooct(tensor, out_path)
            written.append(out_path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Extract CNN activation tensors from images into COOCT files."
    )
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--out", required=True, help="output directory for tensors")
    parser.add_argument("--backbone", default="vgg16", choices=["vgg16", "resnet50"])
    parser.add_argument("--layer", default="pool5")
    parser.add_argument("--scales", default="1,0.7071,0.5", help="comma-separated factors")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights", default=None, help="local state-dict file")
    parser.add_argument(
        "--no-pretrained",
        action="store_true",
        help="randomly initialized backbone (format/shape testing only)",
    )
    args = parser.parse_args(argv)
    try:
        job = ExtractJob(
            image_dir=Path(args.images),
            out_dir=Path(args.out),
            backbone=args.backbone,
            layer=args.layer,
            scales=tuple(float(s) for s in args.scales.split(",")),
            device=args.device,
            pretrained=not args.no_pretrained,
            weights_path=Path(args.weights) if args.weights else None,
        )
        written = extract(job)
    except (BackboneError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} tensor file(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
