"""JSON and CSV file formats.

Complex numbers are stored as ``[re, im]`` pairs.  Floats are written with
Python's shortest round-trip representation, so reading back a written file
reproduces every double exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import BoundaryProblem, Grid, SampledFunction, SpectralData, make_polynomial_pair
from .errors import ValidationError

SIGMA_EXPRESSIONS = ("zero", "constant", "cosine", "piecewise-linear")
DELTA_CSV_COLUMNS = ("lambda_re", "lambda_im", "delta_re", "delta_im")


def encode_complex(z) -> list:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def decode_complex(v) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(
        isinstance(t, (int, float)) and not isinstance(t, bool) for t in v
    ):
        return complex(v[0], v[1])
    raise ValidationError(f"expected a number or an [re, im] pair, got {v!r}")


def decode_complex_list(v, name: str) -> np.ndarray:
    if not isinstance(v, list) or not v:
        raise ValidationError(f"{name} must be a nonempty list")
    return np.array([decode_complex(t) for t in v], dtype=complex)


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return doc


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


# -- problems ------------------------------------------------------------------


def sigma_from_dict(entry: dict, grid: Grid) -> SampledFunction:
    """Build sigma from a ``samples`` or ``expression`` description."""
    if not isinstance(entry, dict):
        raise ValidationError("sigma must be an object")
    kind = entry.get("kind")
    if kind == "samples":
        vals = decode_complex_list(entry.get("values"), "sigma.values")
        if vals.size != grid.point_count:
            raise ValidationError(f"sigma has {vals.size} samples, grid has {grid.point_count} points")
        return SampledFunction(grid, vals)
    if kind != "expression":
        raise ValidationError(f"unknown sigma kind {kind!r}")
    name = entry.get("name")
    params = entry.get("params", {})
    x = grid.points
    if name == "zero":
        return SampledFunction.zeros(grid)
    if name == "constant":
        return SampledFunction(grid, np.full(x.size, decode_complex(params.get("value", 0))))
    if name == "cosine":
        a = decode_complex(params.get("amplitude", 1))
        k = float(params.get("frequency", 1))
        return SampledFunction(grid, a * np.cos(k * x))
    if name == "piecewise-linear":
        knots = decode_complex_list(params.get("knots"), "sigma.params.knots")
        if knots.size < 2:
            raise ValidationError("piecewise-linear sigma needs at least two knots")
        xk = np.linspace(0, np.pi, knots.size)
        return SampledFunction(grid, np.interp(x, xk, knots.real) + 1j * np.interp(x, xk, knots.imag))
    raise ValidationError(f"unknown sigma expression {name!r}; expected one of {SIGMA_EXPRESSIONS}")


def problem_from_dict(doc: dict, grid_m: int | None = None) -> BoundaryProblem:
    m = grid_m if grid_m is not None else doc.get("grid_m", Grid().m)
    if not isinstance(m, int) or isinstance(m, bool):
        raise ValidationError("grid_m must be an integer")
    grid = Grid(m)
    for key in ("sigma", "r1", "r2"):
        if key not in doc:
            raise ValidationError(f"problem file lacks {key!r}")
    sigma = sigma_from_dict(doc["sigma"], grid)
    polys = make_polynomial_pair(decode_complex_list(doc["r1"], "r1"), decode_complex_list(doc["r2"], "r2"))
    return BoundaryProblem(sigma, polys)


def problem_to_dict(problem: BoundaryProblem) -> dict:
    """Always written with sampled sigma."""
    return {
        "grid_m": problem.grid.m,
        "sigma": {"kind": "samples", "values": [encode_complex(v) for v in problem.sigma.values]},
        "r1": [encode_complex(c) for c in problem.polys.r1],
        "r2": [encode_complex(c) for c in problem.polys.r2],
    }


def read_problem(path, grid_m: int | None = None) -> BoundaryProblem:
    return problem_from_dict(read_json(path), grid_m)


def write_problem(path, problem: BoundaryProblem) -> None:
    write_json(path, problem_to_dict(problem))


# -- spectral data ---------------------------------------------------------------


def spectral_data_to_dict(data: SpectralData) -> dict:
    entries = []
    for n in range(data.count):
        e = {"n": n + 1, "rho": encode_complex(data.rho[n])}
        if data.alpha is not None:
            e["alpha"] = encode_complex(data.alpha[n])
        entries.append(e)
    meta = {
        "M1": data.M1,
        "N_prefix": data.unperturbed_prefix,
        "source": data.source,
        "multiplicities": [int(k) for k in data.multiplicities],
    }
    return {"entries": entries, "meta": meta}


def spectral_data_from_dict(doc: dict) -> SpectralData:
    entries = doc.get("entries")
    meta = doc.get("meta", {})
    if not isinstance(entries, list) or not entries:
        raise ValidationError("spectral data file needs a nonempty 'entries' list")
    if not isinstance(meta, dict):
        raise ValidationError("'meta' must be an object")
    ns = [e.get("n") if isinstance(e, dict) else None for e in entries]
    if ns != list(range(1, len(entries) + 1)):
        raise ValidationError("entry indices must be contiguous from 1")
    rho = np.array([decode_complex(e.get("rho")) for e in entries])
    has_alpha = ["alpha" in e for e in entries]
    if any(has_alpha) and not all(has_alpha):
        raise ValidationError("alpha must be given for all entries or none")
    alpha = np.array([decode_complex(e["alpha"]) for e in entries]) if all(has_alpha) else None
    mult = meta.get("multiplicities")
    return SpectralData(
        rho=rho, lam=rho**2, alpha=alpha,
        M1=int(meta.get("M1", 0)),
        unperturbed_prefix=int(meta.get("N_prefix", 0)),
        multiplicities=None if mult is None else np.asarray(mult, dtype=int),
        source=str(meta.get("source", "")),
    )


def read_spectral_data(path) -> SpectralData:
    return spectral_data_from_dict(read_json(path))


def write_spectral_data(path, data: SpectralData) -> None:
    write_json(path, spectral_data_to_dict(data))


def write_delta_csv(path, lam, delta) -> None:
    """Characteristic-function samples, columns ``DELTA_CSV_COLUMNS``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DELTA_CSV_COLUMNS)
        for l, d in zip(np.atleast_1d(lam), np.atleast_1d(delta)):
            w.writerow([repr(float(l.real)), repr(float(l.imag)), repr(float(d.real)), repr(float(d.imag))])


def read_delta_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != DELTA_CSV_COLUMNS:
        raise ValidationError("unexpected CSV header")
    a = np.array(rows[1:], dtype=float).reshape(-1, 4)
    return a[:, 0] + 1j * a[:, 1], a[:, 2] + 1j * a[:, 3]
