from .quality import (
    PSNR_CAP_DB,
    MetricRecord,
    SSIMComponents,
    capped_psnr,
    error_map,
    psnr,
    records_frame,
    ssim,
    ssim_components,
    summarize,
    write_report,
)

__all__ = [
    "PSNR_CAP_DB",
    "MetricRecord",
    "SSIMComponents",
    "capped_psnr",
    "error_map",
    "psnr",
    "records_frame",
    "ssim",
    "ssim_components",
    "summarize",
    "write_report",
]
