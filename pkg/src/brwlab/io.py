"""CSV emitters. Floats are written with 17 significant digits so that values round-trip.

Column layouts (stable):

=========================  ==================================================
file                       columns
=========================  ==================================================
eigenvalue_vs_beta.csv     L, beta, lambda0
critical_boxes.csv         L, beta_c, green_beta_c, lanczos_steps
regime_summary.csv         dimension, beta, beta_c, green_beta_c, L, lambda0, regime
transition_kernel.csv      t, x1..xd, y1..yd, p
moments.csv                flavor, n, t, x1..xd, value [, oracle, rel_discrepancy] [, duality_gap]
extinction.csv             z, t, x1..xd, F
mc_moments.csv             ic, n, t, site, estimate, stderr, replicas
vaccination_sweep.csv      alpha, beta_tilde, lambda0
duality_report.csv         t, max_gap, tolerance, passed
growth_fit.csv             regime, d, n, predicted_form, fitted_param, stderr, r2
=========================  ==================================================
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(value)


def coordinate_columns(prefix: str, dimension: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(dimension)]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def site_label(site) -> str:
    return ",".join(str(int(c)) for c in site)


def write_eigenvalue_vs_beta(path, rows: Iterable[tuple[int, float, float]]) -> Path:
    return write_csv(path, ["L", "beta", "lambda0"], rows)


def write_critical_boxes(path, report) -> Path:
    rows = [(b.half_width, b.beta_c, b.green_beta_c, b.lanczos_steps) for b in report.boxes]
    return write_csv(path, ["L", "beta_c", "green_beta_c", "lanczos_steps"], rows)


def write_regime_summary(path, regime_report) -> Path:
    r = regime_report
    crit = r.criticality
    row = (crit.dimension, r.beta, r.beta_c, crit.green_extrapolated, r.half_width, r.lambda0, r.regime)
    return write_csv(
        path, ["dimension", "beta", "beta_c", "green_beta_c", "L", "lambda0", "regime"], [row]
    )


def write_transition_kernel(path, box, times: Sequence[float], matrices: Sequence[np.ndarray], sites) -> Path:
    d = box.dimension
    idx = box.indices(sites)
    rows = []
    for t, P in zip(times, matrices):
        for i, x in zip(idx, sites):
            for j, y in zip(idx, sites):
                rows.append((t, *x, *y, P[i, j]))
    return write_csv(path, ["t", *coordinate_columns("x", d), *coordinate_columns("y", d), "p"], rows)


def write_moments(path, fields, sites, oracle=None, duality_gaps=None) -> Path:
    """``fields``: moment fields of increasing order on one grid.

    ``oracle`` maps an order to its oracle field; ``duality_gaps`` is a
    ``(K, N)`` array attached to the first-order rows.
    """
    box = fields[0].box
    d = box.dimension
    header = ["flavor", "n", "t", *coordinate_columns("x", d), "value"]
    if oracle is not None:
        header += ["oracle", "rel_discrepancy"]
    if duality_gaps is not None:
        header += ["duality_gap"]
    idx = box.indices(sites)
    rows = []
    for f in fields:
        o = None if oracle is None else oracle.get(f.order)
        for k, t in enumerate(f.times):
            for i, x in zip(idx, sites):
                v = f.values[k, i]
                row = [f.flavor, f.order, t, *x, v]
                if oracle is not None:
                    if o is None:
                        row += [None, None]
                    else:
                        ov = o.values[k, i]
                        row += [ov, abs(v - ov) / max(abs(ov), np.finfo(float).tiny)]
                if duality_gaps is not None:
                    row.append(duality_gaps[k, i] if f.order == 1 else None)
                rows.append(row)
    return write_csv(path, header, rows)


def write_extinction(path, fields, sites) -> Path:
    box = fields[0].box
    idx = box.indices(sites)
    rows = [
        (f.z, t, *x, f.values[k, i])
        for f in fields
        for k, t in enumerate(f.times)
        for i, x in zip(idx, sites)
    ]
    return write_csv(path, ["z", "t", *coordinate_columns("x", box.dimension), "F"], rows)


def write_mc_moments(path, estimates, ic_label: str) -> Path:
    rows = []
    for a, n in enumerate(estimates.orders):
        for k, t in enumerate(estimates.times):
            rows.append(
                (ic_label, n, t, "all", estimates.population[a, k], estimates.population_se[a, k], estimates.replicas)
            )
            for s, site in enumerate(estimates.sites):
                rows.append(
                    (ic_label, n, t, site_label(site), estimates.site[a, k, s], estimates.site_se[a, k, s], estimates.replicas)
                )
    return write_csv(path, ["ic", "n", "t", "site", "estimate", "stderr", "replicas"], rows)


def write_vaccination_sweep(path, rows: Iterable[tuple[float, float, float]]) -> Path:
    return write_csv(path, ["alpha", "beta_tilde", "lambda0"], rows)


def write_duality_report(path, report) -> Path:
    per_t = report.max_gap_by_time()
    rows = [(t, g, report.tolerance, bool(g < report.tolerance)) for t, g in zip(report.times, per_t)]
    return write_csv(path, ["t", "max_gap", "tolerance", "passed"], rows)


def write_growth_fit(path, rows: Iterable[tuple]) -> Path:
    return write_csv(path, ["regime", "d", "n", "predicted_form", "fitted_param", "stderr", "r2"], rows)
