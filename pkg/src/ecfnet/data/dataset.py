"""
Paired (HR, LR, Ref) samples: synthesis, manifests and batching
"""
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Tensor
from ..config import PhantomSpec
from ..errors import DataFormatError, ShapeMismatchError
from ..utils.logger import get_logger
from ..utils.retry import durable_write
from .degradation import kspace_truncate
from .image_io import read_image, write_image
from .phantom import generate_phantom

logger = get_logger("data")


@dataclass(frozen=True)
class ImagePair:
    """Registered HR / Ref images and the LR image truncated from HR"""
    hr: Tensor
    lr: Tensor
    ref: Tensor
    scale: int
    seed: int
    image_id: str = ""

    def verify(self) -> None:
        if self.hr.shape != self.ref.shape:
            raise ShapeMismatchError("ImagePair", "ref shape", self.hr.shape, self.ref.shape)
        expected = kspace_truncate(self.hr, self.scale)
        if expected.shape != self.lr.shape or not np.array_equal(expected.values, self.lr.values):
            raise DataFormatError(f"pair {self.image_id}: lr is not the k-space truncation of hr",
                                  image_id=self.image_id)


def thread_count() -> int:
    try:
        return max(1, int(os.getenv("ECF_THREADS", "1")))
    except ValueError:
        return 1


def build_pair(hr: Tensor, ref: Tensor, scale: int, seed: int, image_id: str) -> ImagePair:
    pair = ImagePair(hr=hr, lr=kspace_truncate(hr, scale), ref=ref, scale=scale, seed=seed, image_id=image_id)
    pair.verify()
    return pair


def _synth_one(spec: PhantomSpec, scale: int, seed: int) -> ImagePair:
    hr, ref = generate_phantom(spec.model_copy(update={"seed": seed}))
    return build_pair(hr, ref, scale, seed, f"phantom_{seed:05d}")


def make_dataset(n: int, spec: PhantomSpec, s: int, seed0: Optional[int] = None) -> List[ImagePair]:
    """``n`` phantom pairs with seeds seed0 .. seed0 + n - 1, in seed order"""
    if n < 1:
        raise ValueError("n must be >= 1")
    seed0 = spec.seed if seed0 is None else seed0
    seeds = [seed0 + i for i in range(n)]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        pairs = list(pool.map(lambda seed: _synth_one(spec, s, seed), seeds))
    logger.debug("Synthesized phantom pairs", count=n, scale=s, seed0=seed0)
    return pairs


def split_holdout(pairs: Sequence[ImagePair], holdout: int) -> Tuple[List[ImagePair], List[ImagePair]]:
    """Tail split; with nothing left over for training, evaluate on the training pairs"""
    pairs = list(pairs)
    if holdout <= 0 or holdout >= len(pairs):
        return pairs, pairs
    return pairs[:-holdout], pairs[-holdout:]


def stack_pairs(pairs: Sequence[ImagePair], dtype=None) -> Tuple[Tensor, Tensor, Tensor]:
    """Batch tensors (lr, ref, hr) with batch axis first"""
    def stack(attr: str) -> Tensor:
        return Tensor(np.concatenate([getattr(p, attr).values for p in pairs], axis=0),
                      dtype=dtype or getattr(pairs[0], attr).dtype)

    return stack("lr"), stack("ref"), stack("hr")


# --------------------------------------------------------------------- files

def write_dataset(pairs: Sequence[ImagePair], out_dir: Path, png_previews: bool = False) -> Path:
    """Raw images plus ``manifest.json`` with paths relative to ``out_dir``"""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        hr_rel = f"images/{pair.image_id}_hr.ecf"
        ref_rel = f"images/{pair.image_id}_ref.ecf"
        write_image(pair.hr, out_dir / hr_rel)
        write_image(pair.ref, out_dir / ref_rel)
        if png_previews:
            write_image(pair.hr, out_dir / f"images/{pair.image_id}_hr.png")
            write_image(pair.ref, out_dir / f"images/{pair.image_id}_ref.png")
            write_image(pair.lr, out_dir / f"images/{pair.image_id}_lr.png")
        entries.append({"hr_path": hr_rel, "ref_path": ref_rel, "scale": pair.scale, "seed": pair.seed})
    return write_manifest(entries, out_dir / "manifest.json")


@durable_write
def write_manifest(entries: List[dict], path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path: Path) -> List[ImagePair]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest {path} is not valid JSON: {exc}", path=str(path)) from exc
    if not isinstance(entries, list):
        raise DataFormatError(f"manifest {path} must be a JSON list", path=str(path))

    pairs = []
    for index, entry in enumerate(entries):
        try:
            hr_path, ref_path = entry["hr_path"], entry["ref_path"]
            scale, seed = int(entry["scale"]), int(entry.get("seed", index))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"manifest entry {index} is malformed: {exc}", path=str(path), entry=index) from exc
        hr = read_image(path.parent / hr_path)
        ref = read_image(path.parent / ref_path)
        image_id = Path(hr_path).stem.removesuffix("_hr")
        pairs.append(build_pair(hr, ref, scale, seed, image_id))
    logger.info("Loaded manifest", path=str(path), pairs=len(pairs))
    return pairs


def bicubic_baseline(pairs: Sequence[ImagePair], dtype="float32", interpolation: str = "bicubic") -> List[float]:
    """PSNR of the clamped interpolated LR image against HR, per pair"""
    from ..metrics.quality import psnr
    from ..ml.model import preprocess

    scores = []
    for pair in pairs:
        lr = pair.lr.astype(dtype)
        ref = pair.ref.astype(dtype)
        lr_up, _ = preprocess(lr, ref, pair.scale, interpolation)
        clamped = Tensor(np.clip(lr_up.values, 0.0, 1.0), dtype=lr_up.dtype)
        scores.append(psnr(clamped, pair.hr.astype(dtype)))
    return scores
