"""Evaluation metrics: PSNR, SSIM, and uncertainty-error correlations.

Correlations come in two aggregations. The voxel-level score is the mean
over ensemble members of the Pearson correlation between a member's
flattened uncertainty and error fields (fine-grained spatial agreement);
the member-level score correlates per-member mean uncertainty with
per-member mean error across the ensemble (which members are hard).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PSNR_CAP_DB",
    "CorrelationReport",
    "psnr",
    "ssim",
    "pearson",
    "voxel_level_corr",
    "member_level_corr",
    "correlation_report",
]

PSNR_CAP_DB = 100.0

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def psnr(pred, truth, data_range):
    """Peak signal-to-noise ratio in dB, capped at 100.

    10 log10(data_range^2 / MSE); identical fields hit the cap.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    mse = float(np.mean((pred - truth) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(data_range**2 / mse))


def _gaussian_kernel():
    half = (_SSIM_WINDOW - 1) / 2.0
    x = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(x**2) / (2.0 * _SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img, kernel):
    """Separable valid-mode correlation along every axis."""
    out = img
    for axis in range(img.ndim):
        windows = np.lib.stride_tricks.sliding_window_view(
            out, len(kernel), axis=axis
        )
        out = windows @ kernel
    return out


def _ssim_2d(pred, truth, data_range):
    kernel = _gaussian_kernel()
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    mu1 = _filter_valid(pred, kernel)
    mu2 = _filter_valid(truth, kernel)
    s11 = _filter_valid(pred * pred, kernel) - mu1 * mu1
    s22 = _filter_valid(truth * truth, kernel) - mu2 * mu2
    s12 = _filter_valid(pred * truth, kernel) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def _center_slices(field):
    slices = []
    for axis in range(field.ndim):
        idx = [slice(None)] * field.ndim
        idx[axis] = field.shape[axis] // 2
        slices.append(field[tuple(idx)])
    return slices


def ssim(pred, truth, data_range):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    2D fields are scored directly; 3D fields as the mean SSIM over the
    three axis-aligned center slices (a render-free stand-in for
    image-space comparison). Symmetric in its arguments.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    if pred.ndim == 2:
        pairs = [(pred, truth)]
    elif pred.ndim == 3:
        pairs = list(zip(_center_slices(pred), _center_slices(truth)))
    else:
        raise ValueError("ssim expects a 2D or 3D field")
    if any(min(p.shape) < _SSIM_WINDOW for p, _ in pairs):
        raise ValueError(f"field smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    return float(np.mean([_ssim_2d(p, t, data_range) for p, t in pairs]))


def pearson(a, b):
    """Pearson correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        raise ValueError("constant vector has no correlation")
    return float(np.sum(da * db) / denom)


@dataclass(frozen=True)
class CorrelationReport:
    """Voxel- and member-level correlation between uncertainty and error."""

    voxel_level: float
    member_level: float
    per_member: list
    excluded_members: int


def _stack_members(u_fields, e_fields):
    u = np.asarray(u_fields, dtype=np.float64)
    e = np.asarray(e_fields, dtype=np.float64)
    if u.shape != e.shape or u.ndim < 2:
        raise ValueError("need matching (members, grid...) stacks")
    return u.reshape(u.shape[0], -1), e.reshape(e.shape[0], -1)


def _per_member_correlations(u, e):
    per_member = []
    excluded = 0
    for um, em in zip(u, e):
        if np.ptp(um) == 0.0 or np.ptp(em) == 0.0:
            excluded += 1
            continue
        per_member.append(pearson(um, em))
    return per_member, excluded


def voxel_level_corr(u_fields, e_fields):
    """Mean over members of per-member Pearson correlation.

    Members with a constant uncertainty or error field are excluded
    (see correlation_report for the count).
    """
    u, e = _stack_members(u_fields, e_fields)
    per_member, _ = _per_member_correlations(u, e)
    if not per_member:
        raise ValueError("every member had a constant field")
    return float(np.mean(per_member))


def member_level_corr(u_fields, e_fields):
    """Pearson correlation of per-member mean uncertainty vs mean error."""
    u, e = _stack_members(u_fields, e_fields)
    if u.shape[0] < 3:
        raise ValueError("member-level correlation needs at least 3 members")
    return pearson(u.mean(axis=1), e.mean(axis=1))


def correlation_report(u_fields, e_fields) -> CorrelationReport:
    u, e = _stack_members(u_fields, e_fields)
    per_member, excluded = _per_member_correlations(u, e)
    if not per_member:
        raise ValueError("every member had a constant field")
    return CorrelationReport(
        voxel_level=float(np.mean(per_member)),
        member_level=member_level_corr(u_fields, e_fields),
        per_member=per_member,
        excluded_members=excluded,
    )
