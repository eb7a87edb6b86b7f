"""Synthetic ensemble simulators, dataset splitting, and persistence.

The default generator ("two_bumps") maps a parameter vector to a smooth
scalar field: a sum of two Gaussian bumps whose centers, widths, and
amplitudes are affine-plus-sinusoidal functions of the parameters. Noise
modes stack on top of that mean field:

- ``none``: deterministic mean field, zero noise ground truth
- ``heteroscedastic``: additive Gaussian noise with spatially varying
  std 0.05 + 0.15 * b(s), b the min-max-normalized bump intensity;
  the true variance field is stored per member
- ``parameter-perturbation``: the field is evaluated at x + eps with
  eps uniform in +/-1e-3 of each parameter range (numerical-error proxy)
- ``resolution-variants``: members are one of four downsamplings of a
  double-resolution field; the cross-variant variance is stored as the
  reference variability

Fields are computed in float64 and stored as float32 (row-major,
little-endian raw files plus a human-readable manifest).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

__all__ = [
    "SPLITS",
    "EnsembleMember",
    "EnsembleDataset",
    "SimulatorSpec",
    "DatasetError",
    "simulate_member",
    "generate_dataset",
    "perturbation_reference",
    "downsample_variants",
    "resolution_variants",
    "save_dataset",
    "load_dataset",
]

SPLITS = ("train", "calibration", "test")

_SCHEMA_VERSION = 1
_NOISE_MODELS = ("none", "heteroscedastic", "parameter-perturbation", "resolution-variants")


class DatasetError(Exception):
    """Dataset is malformed on disk or violates split hygiene."""


@dataclass(frozen=True)
class EnsembleMember:
    """One simulation run: parameters, output field, optional noise truth."""

    member_id: int
    params: np.ndarray
    field: np.ndarray
    truth_noise_var: np.ndarray | None = None


@dataclass(frozen=True)
class SimulatorSpec:
    """Which generator to run and how it is seeded."""

    name: str = "two_bumps"
    d: int = 3
    grid_shape: tuple = (32, 32)
    noise_model: str = "heteroscedastic"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(int(g) for g in self.grid_shape))
        if self.name not in _GENERATORS:
            raise ValueError(
                f"unknown simulator {self.name!r}; registered: {sorted(_GENERATORS)}"
            )
        if self.noise_model not in _NOISE_MODELS:
            raise ValueError(
                f"unknown noise model {self.noise_model!r}; one of {_NOISE_MODELS}"
            )
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @property
    def param_ranges(self):
        """Declared input ranges, one (lo, hi) row per dimension."""
        return np.array([[0.0, 1.0]] * self.d)


@dataclass(frozen=True)
class EnsembleDataset:
    """Members plus split labels that partition them."""

    members: list
    split_labels: dict
    param_ranges: np.ndarray
    grid_shape: tuple
    sim: SimulatorSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(int(g) for g in self.grid_shape))
        ids = [m.member_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate member ids")
        if set(self.split_labels) != set(ids):
            raise DatasetError("split labels must cover member ids exactly")
        bad = {s for s in self.split_labels.values() if s not in SPLITS}
        if bad:
            raise DatasetError(f"unknown split labels: {sorted(bad)}")

    def split(self, name):
        """Members labeled ``name``, ordered by member_id."""
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        chosen = [m for m in self.members if self.split_labels[m.member_id] == name]
        return sorted(chosen, key=lambda m: m.member_id)

    def counts(self):
        return {s: len(self.split(s)) for s in SPLITS}


def _grid_coords(grid_shape):
    axes = [(np.arange(n) + 0.5) / n for n in grid_shape]
    return np.meshgrid(*axes, indexing="ij")


def _normalize_params(x, ranges):
    lo = ranges[:, 0]
    hi = ranges[:, 1]
    return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)


def _two_bumps_mean(u, grid_shape):
    """Sum of two Gaussian bumps; all bump parameters vary with u."""
    d = len(u)
    p, q, r = u[0], u[1 % d], u[2 % d]
    two_pi = 2.0 * np.pi

    c1 = [0.30 + 0.25 * p + 0.10 * np.sin(two_pi * q),
          0.35 + 0.20 * q + 0.10 * np.sin(two_pi * r),
          0.50 + 0.20 * np.sin(two_pi * p)]
    c2 = [0.70 - 0.25 * q + 0.10 * np.sin(two_pi * p),
          0.65 - 0.20 * r - 0.10 * np.sin(two_pi * q),
          0.50 - 0.20 * np.sin(two_pi * r)]
    w1 = 0.12 + 0.06 * r
    w2 = 0.10 + 0.05 * p
    a1 = 0.8 + 0.4 * p + 0.2 * np.sin(two_pi * r)
    a2 = 0.6 + 0.3 * r - 0.2 * np.sin(two_pi * p)

    coords = _grid_coords(grid_shape)
    sq1 = sum((c - ck) ** 2 for c, ck in zip(coords, c1))
    sq2 = sum((c - ck) ** 2 for c, ck in zip(coords, c2))
    return a1 * np.exp(-sq1 / (2.0 * w1**2)) + a2 * np.exp(-sq2 / (2.0 * w2**2))


def _bump_intensity(mean_field):
    lo = float(mean_field.min())
    hi = float(mean_field.max())
    if hi <= lo:
        return np.zeros_like(mean_field)
    return (mean_field - lo) / (hi - lo)


_GENERATORS = {"two_bumps": _two_bumps_mean}


def _member_rng(spec_seed, member_seed):
    return np.random.default_rng([spec_seed & 0xFFFFFFFF, member_seed & 0xFFFFFFFFFFFF, 0xE5])


def _check_in_ranges(x, ranges):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ranges.shape[0],):
        raise ValueError(f"parameter vector must have length {ranges.shape[0]}")
    if np.any(x < ranges[:, 0]) or np.any(x > ranges[:, 1]):
        raise ValueError("parameters outside declared ranges")
    return x


def simulate_member(spec: SimulatorSpec, x, member_seed, member_id=0) -> EnsembleMember:
    """Run one simulation; deterministic given (spec, x, member_seed)."""
    ranges = spec.param_ranges
    x = _check_in_ranges(x, ranges)
    u = _normalize_params(x, ranges)
    mean = _GENERATORS[spec.name](u, spec.grid_shape)
    rng = _member_rng(spec.seed, member_seed)

    if spec.noise_model == "none":
        field, noise_var = mean, np.zeros_like(mean)
    elif spec.noise_model == "heteroscedastic":
        sigma = 0.05 + 0.15 * _bump_intensity(mean)
        field = mean + rng.normal(0.0, 1.0, size=mean.shape) * sigma
        noise_var = sigma**2
    elif spec.noise_model == "parameter-perturbation":
        field = _perturbed_field(spec, x, rng)
        noise_var = None
    else:  # resolution-variants
        variants, noise_var = _resolution_member(spec, u)
        field = variants[rng.integers(len(variants))]

    return EnsembleMember(
        member_id=int(member_id),
        params=x.copy(),
        field=field.astype(np.float32),
        truth_noise_var=None if noise_var is None else noise_var.astype(np.float32),
    )


def _perturbed_field(spec, x, rng):
    ranges = spec.param_ranges
    widths = ranges[:, 1] - ranges[:, 0]
    eps = rng.uniform(-1e-3, 1e-3, size=len(x)) * widths
    u = _normalize_params(np.clip(x + eps, ranges[:, 0], ranges[:, 1]), ranges)
    return _GENERATORS[spec.name](u, spec.grid_shape)


def perturbation_reference(spec: SimulatorSpec, x, member_seed, n_replicas=8):
    """Reference uncertainty for the numerical-error proxy.

    Mean absolute deviation, per grid element, across ``n_replicas``
    fields evaluated at independently perturbed inputs.
    """
    ranges = spec.param_ranges
    x = _check_in_ranges(x, ranges)
    replicas = []
    for k in range(n_replicas):
        rng = _member_rng(spec.seed, (member_seed << 8) + k + 1)
        replicas.append(_perturbed_field(spec, x, rng))
    stack = np.stack(replicas)
    return np.mean(np.abs(stack - stack.mean(axis=0)), axis=0)


def _resolution_member(spec, u):
    double_shape = tuple(2 * g for g in spec.grid_shape)
    high = _GENERATORS[spec.name](u, double_shape)
    variants = downsample_variants(high, 2)
    stack = np.stack(variants)
    return variants, stack.var(axis=0)


def _block_view(field, factor):
    shape = []
    for n in field.shape:
        shape.extend([n // factor, factor])
    reduce_axes = tuple(range(1, 2 * field.ndim, 2))
    return field.reshape(shape), reduce_axes


def downsample_variants(field, factor):
    """Four downsamplings of a field: (bilinear, nearest, max, min).

    Bilinear is the block mean (the integer-factor analogue of bilinear
    interpolation); nearest takes the top-left corner of each block.
    """
    field = np.asarray(field, dtype=np.float64)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if any(n % factor for n in field.shape):
        raise ValueError(
            f"grid dimensions {field.shape} not divisible by factor {factor}"
        )
    blocks, axes = _block_view(field, factor)
    bilinear = blocks.mean(axis=axes)
    nearest = field[tuple(slice(0, None, factor) for _ in field.shape)].copy()
    max_pool = blocks.max(axis=axes)
    min_pool = blocks.min(axis=axes)
    return bilinear, nearest, max_pool, min_pool


def resolution_variants(member: EnsembleMember, factor):
    """Downsampling variants of a member's field plus their variance.

    Returns ((bilinear, nearest, max, min), per-element population
    variance across the four).
    """
    variants = downsample_variants(member.field, factor)
    variance = np.stack(variants).var(axis=0)
    return variants, variance


def generate_dataset(
    spec: SimulatorSpec,
    n_train,
    n_cal,
    n_test,
    seed,
    sparse_region=None,
) -> EnsembleDataset:
    """Draw i.i.d. parameter vectors from one stream and simulate members.

    Split labels (train, calibration, test, in that order of member ids)
    are fixed before any simulation, so splits are exchangeable by
    construction. ``sparse_region`` is an iterable of (dim, lo, hi)
    constraints; training draws falling inside the region are redrawn
    from the same stream, leaving calibration/test untouched.
    """
    if n_train < 1 or n_cal < 0 or n_test < 0:
        raise ValueError("need n_train >= 1 and nonnegative n_cal, n_test")
    ranges = spec.param_ranges
    rng = np.random.default_rng(seed)
    region = [(int(d), float(lo), float(hi)) for d, lo, hi in (sparse_region or [])]

    def in_region(x):
        return bool(region) and all(lo <= x[d] <= hi for d, lo, hi in region)

    def draw(avoid_region):
        for _ in range(100_000):
            x = rng.uniform(ranges[:, 0], ranges[:, 1])
            if not (avoid_region and in_region(x)):
                return x
        raise ValueError("sparse region rejects nearly all training draws")

    members = []
    split_labels = {}
    next_id = 0
    for split, count in (("train", n_train), ("calibration", n_cal), ("test", n_test)):
        for _ in range(count):
            x = draw(avoid_region=(split == "train"))
            members.append(simulate_member(spec, x, member_seed=next_id, member_id=next_id))
            split_labels[next_id] = split
            next_id += 1

    return EnsembleDataset(
        members=members,
        split_labels=split_labels,
        param_ranges=ranges,
        grid_shape=spec.grid_shape,
        sim=spec,
    )


def _format_float(v):
    return repr(float(v))


def save_dataset(ds: EnsembleDataset, directory):
    """Write manifest plus one raw float32 file per member (row-major)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"schema_version = {_SCHEMA_VERSION}"]
    if ds.sim is not None:
        lines += [
            f"simulator = {ds.sim.name}",
            f"noise_model = {ds.sim.noise_model}",
            f"sim_seed = {ds.sim.seed}",
        ]
    d = ds.param_ranges.shape[0]
    lines.append(f"d = {d}")
    lines.append("grid_shape = " + " ".join(str(g) for g in ds.grid_shape))
    for k in range(d):
        lines.append(
            f"param_range_{k} = {_format_float(ds.param_ranges[k, 0])}"
            f" {_format_float(ds.param_ranges[k, 1])}"
        )
    lines.append("members:")
    for m in sorted(ds.members, key=lambda m: m.member_id):
        field_file = f"member_{m.member_id:05d}.f32"
        (directory / field_file).write_bytes(
            np.ascontiguousarray(m.field, dtype="<f4").tobytes()
        )
        if m.truth_noise_var is not None:
            noise_file = f"noise_{m.member_id:05d}.f32"
            (directory / noise_file).write_bytes(
                np.ascontiguousarray(m.truth_noise_var, dtype="<f4").tobytes()
            )
        else:
            noise_file = "-"
        params_text = " ".join(_format_float(p) for p in m.params)
        lines.append(
            f"{m.member_id} {ds.split_labels[m.member_id]} {params_text}"
            f" {field_file} {noise_file}"
        )
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_raw(path, grid_shape, member_id, what):
    blob = path.read_bytes()
    expected = int(np.prod(grid_shape)) * 4
    if len(blob) != expected:
        raise DatasetError(
            f"member {member_id}: {what} file {path.name} holds {len(blob)} bytes,"
            f" expected {expected}"
        )
    return np.frombuffer(blob, dtype="<f4").reshape(grid_shape).copy()


def load_dataset(directory) -> EnsembleDataset:
    """Read a dataset directory written by save_dataset."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise DatasetError(f"missing manifest: {manifest}")
    header = {}
    member_lines = []
    in_members = False
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "members:":
            in_members = True
            continue
        if in_members:
            member_lines.append(line)
        else:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()

    if header.get("schema_version") != str(_SCHEMA_VERSION):
        raise DatasetError(
            f"manifest schema_version {header.get('schema_version')!r} unsupported"
        )
    d = int(header["d"])
    grid_shape = tuple(int(g) for g in header["grid_shape"].split())
    ranges = np.array(
        [[float(v) for v in header[f"param_range_{k}"].split()] for k in range(d)]
    )
    sim = None
    if "simulator" in header:
        sim = SimulatorSpec(
            name=header["simulator"],
            d=d,
            grid_shape=grid_shape,
            noise_model=header.get("noise_model", "none"),
            seed=int(header.get("sim_seed", 0)),
        )

    members = []
    split_labels = {}
    for line in member_lines:
        parts = line.split()
        if len(parts) != d + 4:
            raise DatasetError(f"malformed member row: {line!r}")
        member_id = int(parts[0])
        split = parts[1]
        params = np.array([float(v) for v in parts[2 : 2 + d]])
        field = _read_raw(directory / parts[2 + d], grid_shape, member_id, "field")
        noise_name = parts[3 + d]
        noise = (
            None
            if noise_name == "-"
            else _read_raw(directory / noise_name, grid_shape, member_id, "noise")
        )
        members.append(
            EnsembleMember(
                member_id=member_id, params=params, field=field, truth_noise_var=noise
            )
        )
        split_labels[member_id] = split

    return EnsembleDataset(
        members=members,
        split_labels=split_labels,
        param_ranges=ranges,
        grid_shape=grid_shape,
        sim=sim,
    )
