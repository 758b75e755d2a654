"""
Image quality metrics: PSNR, Gaussian-window SSIM and error maps
"""
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from ..autograd import Tensor
from ..errors import ShapeMismatchError
from ..utils.retry import durable_write

PSNR_CAP_DB = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_WINDOW = 11
ERROR_MAP_CAP = 0.2
REPORT_COLUMNS = ["image_id", "scale", "psnr_db", "ssim", "config_hash"]

ImageLike = Union[Tensor, np.ndarray]


def _plane(img: ImageLike) -> np.ndarray:
    values = img.values if isinstance(img, Tensor) else np.asarray(img)
    values = np.asarray(values, dtype=np.float64)
    while values.ndim > 2 and values.shape[0] == 1:
        values = values[0]
    return values


def _pair(op: str, a: ImageLike, b: ImageLike) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _plane(a), _plane(b)
    if x.shape != y.shape:
        raise ShapeMismatchError(op, "image shape", x.shape, y.shape)
    return x, y


def psnr(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf"""
    x, y = _pair("psnr", a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def capped_psnr(value: float) -> float:
    return min(value, PSNR_CAP_DB)


class SSIMComponents(NamedTuple):
    luminance: float
    contrast_structure: float


def _ssim_maps(a: ImageLike, b: ImageLike, data_range: float) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _pair("ssim", a, b)
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ShapeMismatchError("ssim", "image size", f">= {SSIM_WINDOW}x{SSIM_WINDOW}", x.shape)

    def blur(v: np.ndarray) -> np.ndarray:
        return ndimage.gaussian_filter(v, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    luminance = (2 * ux * uy + c1) / (ux * ux + uy * uy + c1)
    contrast_structure = (2 * vxy + c2) / (vx + vy + c2)
    pad = (SSIM_WINDOW - 1) // 2
    crop = (slice(pad, -pad), slice(pad, -pad))
    return luminance[crop], contrast_structure[crop]


def ssim(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> float:
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), border-cropped"""
    luminance, contrast_structure = _ssim_maps(a, b, data_range)
    return float(np.mean(luminance * contrast_structure))


def ssim_components(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> SSIMComponents:
    luminance, contrast_structure = _ssim_maps(a, b, data_range)
    return SSIMComponents(float(np.mean(luminance)), float(np.mean(contrast_structure)))


def error_map(sr: ImageLike, hr: ImageLike, cap: float = ERROR_MAP_CAP) -> Tensor:
    x, y = _pair("error_map", sr, hr)
    out = np.clip(np.abs(x - y) / cap, 0.0, 1.0)
    return Tensor(out.reshape(1, 1, *out.shape))


# ------------------------------------------------------------------- reports

@dataclass
class MetricRecord:
    psnr: float
    ssim: float
    image_id: str
    scale: int
    config_hash: str

    def to_row(self) -> dict:
        row = asdict(self)
        row["psnr_db"] = capped_psnr(row.pop("psnr"))
        return {column: row[column] for column in REPORT_COLUMNS}


def records_frame(records: Sequence[MetricRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in records], columns=REPORT_COLUMNS)


def summarize(records: Sequence[MetricRecord]) -> pd.DataFrame:
    """Mean and standard deviation of PSNR / SSIM per scale"""
    frame = records_frame(records)
    if frame.empty:
        return pd.DataFrame(columns=["scale", "count", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"])
    grouped = frame.groupby("scale")
    summary = pd.DataFrame({
        "count": grouped["psnr_db"].count(),
        "psnr_mean": grouped["psnr_db"].mean(),
        "psnr_std": grouped["psnr_db"].std(ddof=0),
        "ssim_mean": grouped["ssim"].mean(),
        "ssim_std": grouped["ssim"].std(ddof=0),
    })
    return summary.reset_index()


@durable_write
def write_report(records: Sequence[MetricRecord], out_dir: Path, stem: str = "metrics") -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = records_frame(records)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    frame.to_csv(csv_path, index=False)
    frame.to_json(json_path, orient="records", indent=2)
    return [csv_path, json_path]
