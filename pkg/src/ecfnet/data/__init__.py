from .dataset import (
    ImagePair,
    bicubic_baseline,
    load_manifest,
    make_dataset,
    split_holdout,
    stack_pairs,
    write_dataset,
)
from .degradation import kspace_truncate, kspace_zero_fill
from .image_io import read_image, read_png, read_raw, write_image, write_png, write_raw
from .phantom import TISSUES, generate_contrasts, generate_phantom

__all__ = [
    "ImagePair",
    "make_dataset",
    "load_manifest",
    "write_dataset",
    "split_holdout",
    "stack_pairs",
    "bicubic_baseline",
    "kspace_truncate",
    "kspace_zero_fill",
    "read_image",
    "write_image",
    "read_png",
    "write_png",
    "read_raw",
    "write_raw",
    "TISSUES",
    "generate_contrasts",
    "generate_phantom",
]
