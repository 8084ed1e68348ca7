"""Relevance diagnostics, retained-dimension counting, image dumps and metric files."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distributions import clamp_log_var
from .models import ModelState, Variant
from .network import MlpParams, mlp_forward

DEFAULT_THRESHOLD = 0.01


def weight_col_sq_norms(decoder: MlpParams) -> np.ndarray:
    """Squared column norms of the decoder's first weight matrix, one per latent dimension."""
    W = decoder.hidden[0].W if decoder.hidden else decoder.head_mean.W
    return np.sum(W * W, axis=0)


def relevance_mass(state: ModelState) -> np.ndarray:
    """Posterior second moment ``mu_tau**2 + var_tau`` of each relevance weight."""
    if state.ard is None:
        raise ValueError("SGVB models have no relevance weights")
    return state.ard.mu_tau**2 + np.exp(clamp_log_var(state.ard.log_var_tau)[0])


def retained_dims(values, threshold_frac: float = DEFAULT_THRESHOLD) -> tuple[int, np.ndarray]:
    """Flag dimensions whose score reaches ``threshold_frac`` of the largest score."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no dimensions to score")
    if not 0.0 < threshold_frac < 1.0:
        raise ValueError(f"threshold_frac must lie in (0, 1), got {threshold_frac}")
    flags = (values >= threshold_frac * values.max()) & (values > 0)
    return int(flags.sum()), flags


def resolve_rule(state: ModelState, rule: str) -> str:
    return "weight_norm" if state.variant is Variant.SGVB else rule


def retained_count(state: ModelState, rule: str = "ard_mass", threshold_frac: float = DEFAULT_THRESHOLD) -> int:
    rule = resolve_rule(state, rule)
    scores = relevance_mass(state) if rule == "ard_mass" else weight_col_sq_norms(state.decoder)
    return retained_dims(scores, threshold_frac)[0]


@dataclass
class DimRecord:
    index: int
    mu_tau: float | None
    var_tau: float | None
    lam: float | None
    weight_col_sq_norm: float
    retained: bool


@dataclass
class RelevanceReport:
    variant: str
    rule: str
    threshold_used: float
    retained_count: int
    dims: list[DimRecord]

    # text layout: header keys in this order, then per dimension the DimRecord fields
    HEADER_KEYS = ("variant", "rule", "threshold_used", "retained_count", "latent_dim")

    def dumps(self) -> str:
        lines = [f"variant={self.variant}", f"rule={self.rule}", f"threshold_used={_fmt(self.threshold_used)}",
                 f"retained_count={self.retained_count}", f"latent_dim={len(self.dims)}"]
        for rec in self.dims:
            for f in fields(DimRecord):
                if f.name == "index":
                    continue
                lines.append(f"dim.{rec.index}.{f.name}={_fmt(getattr(rec, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RelevanceReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                key, _, val = line.partition("=")
                kv[key] = val
        n = int(kv["latent_dim"])
        dims = []
        for i in range(n):
            dims.append(DimRecord(
                index=i,
                mu_tau=_parse(kv[f"dim.{i}.mu_tau"]),
                var_tau=_parse(kv[f"dim.{i}.var_tau"]),
                lam=_parse(kv[f"dim.{i}.lam"]),
                weight_col_sq_norm=float(kv[f"dim.{i}.weight_col_sq_norm"]),
                retained=kv[f"dim.{i}.retained"] == "true",
            ))
        return cls(kv["variant"], kv["rule"], float(kv["threshold_used"]), int(kv["retained_count"]), dims)

    def table(self) -> str:
        out = [f"{'dim':>4} {'mu_tau':>12} {'var_tau':>12} {'lambda':>12} {'|W_d|^2':>12} retained"]
        for r in self.dims:
            cols = [_short(r.mu_tau), _short(r.var_tau), _short(r.lam), _short(r.weight_col_sq_norm)]
            out.append(f"{r.index:>4} " + " ".join(f"{c:>12}" for c in cols) + f" {'yes' if r.retained else 'no'}")
        out.append(f"retained {self.retained_count} of {len(self.dims)} ({self.rule}, threshold {self.threshold_used:g})")
        return "\n".join(out)


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(s: str):
    return None if s == "null" else float(s)


def _short(v) -> str:
    return "-" if v is None else f"{v:.4g}"


def relevance_report(state: ModelState, rule: str = "ard_mass", threshold: float = DEFAULT_THRESHOLD) -> RelevanceReport:
    rule = resolve_rule(state, rule)
    norms = weight_col_sq_norms(state.decoder)
    if state.ard is not None:
        mu = state.ard.mu_tau
        var = np.exp(clamp_log_var(state.ard.log_var_tau)[0])
        lam = state.ard.lam
    scores = relevance_mass(state) if rule == "ard_mass" else norms
    count, flags = retained_dims(scores, threshold)
    dims = []
    for d in range(state.latent_dim):
        has = state.ard is not None
        dims.append(DimRecord(d, float(mu[d]) if has else None, float(var[d]) if has else None,
                              float(lam[d]) if has else None, float(norms[d]), bool(flags[d])))
    return RelevanceReport(state.variant.value, rule, float(threshold), count, dims)


# ---------------------------------------------------------------------------
# images


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM is not supported")
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=w * h)
    return data.reshape(h, w)


def quantize(values, lo: float, hi: float) -> np.ndarray:
    """Map ``[lo, hi]`` linearly onto 0..255."""
    span = hi - lo if hi > lo else 1.0
    return np.clip(np.rint((np.asarray(values) - lo) / span * 255.0), 0, 255).astype(np.uint8)


def dequantize(pixels, lo: float, hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return np.asarray(pixels, dtype=float) / 255.0 * span + lo


def reconstruct_mean(state: ModelState, x) -> tuple[np.ndarray, np.ndarray]:
    """Decoder mean and standard deviation at the posterior-mean code of each row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mu_z, lv_z, _ = mlp_forward(state.encoder, x)
    if state.variant is Variant.SGVB:
        code = mu_z
    elif state.variant is Variant.SGVB_ARD:
        code = mu_z * state.ard.mu_tau
    else:
        a = np.exp(-clamp_log_var(lv_z)[0])
        b = np.exp(-clamp_log_var(state.ard.log_var_tau)[0])
        code = (a * mu_z + b * state.ard.mu_tau) / (a + b)
    mean, lv, _ = mlp_forward(state.decoder, code)
    if state.likelihood == "bernoulli":
        p = 0.5 * (1.0 + np.tanh(0.5 * mean))
        return p, np.sqrt(p * (1.0 - p))
    return mean, np.exp(0.5 * clamp_log_var(lv)[0])


def dump_reconstruction(state: ModelState, datapoint, shape: tuple[int, int], path,
                        value_range: tuple[float, float] | None = None) -> dict[str, Path]:
    """Write original, mean reconstruction and per-pixel std as P5 PGM files.

    Original and mean share the grey map of ``value_range`` (defaults to the
    datapoint's own min/max); the std image maps ``[0, max std]``. Files are
    ``<path>_original.pgm``, ``<path>_mean.pgm`` and ``<path>_std.pgm``.
    """
    h, w = shape
    x = np.asarray(datapoint, dtype=float).reshape(-1)
    if h * w != x.size:
        raise ValueError(f"image shape {shape} holds {h * w} pixels, datapoint has {x.size}")
    mean, std = reconstruct_mean(state, x)
    lo, hi = value_range if value_range is not None else (float(x.min()), float(x.max()))
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    out = {
        "original": base.with_name(base.name + "_original.pgm"),
        "mean": base.with_name(base.name + "_mean.pgm"),
        "std": base.with_name(base.name + "_std.pgm"),
    }
    write_pgm(out["original"], quantize(x.reshape(h, w), lo, hi))
    write_pgm(out["mean"], quantize(mean.reshape(h, w), lo, hi))
    write_pgm(out["std"], quantize(std.reshape(h, w), 0.0, float(std.max())))
    return out


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    iteration: int
    epoch: int
    total: float
    recon: float
    kl_z: float
    kl_w: float
    total_per_pixel: float
    test_total: float | None
    retained_count: int
    grad_norm: float
    rejected_steps: int
    wall_clock: float


METRIC_FIELDS = tuple(f.name for f in fields(RunMetrics))
_INT_FIELDS = {"iteration", "epoch", "retained_count", "rejected_steps"}


def write_metrics(stream: Iterable[RunMetrics], path) -> int:
    """Write metrics as CSV with a header row; returns the number of data rows."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        last = None
        for row in stream:
            if last is not None and row.iteration <= last:
                raise ValueError(f"iterations must increase: {row.iteration} after {last}")
            last = row.iteration
            w.writerow([format_cell(getattr(row, f)) for f in METRIC_FIELDS])
            n += 1
    return n


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def read_metrics(path) -> list[RunMetrics]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for rec in r:
            vals = {}
            for name, cell in zip(header, rec):
                if cell == "":
                    vals[name] = None
                elif name in _INT_FIELDS:
                    vals[name] = int(cell)
                else:
                    vals[name] = float(cell)
            rows.append(RunMetrics(**vals))
    return rows


def retained_trace(metrics: Sequence[RunMetrics]) -> np.ndarray:
    return np.array([m.retained_count for m in metrics])


def is_nonincreasing_after(trace, frac: float = 0.2) -> bool:
    trace = np.asarray(trace)
    start = int(math.floor(frac * len(trace)))
    return bool(np.all(np.diff(trace[start:]) <= 0))
