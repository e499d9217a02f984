"""CSV and SVG emission for Pd surfaces and false-alarm tables.

CSV is the canonical output (long format, floats written with repr so
re-ingestion is lossless); SVG curves and heatmaps are a convenience and are
generated without any plotting dependency.  Byte output is deterministic for
fixed inputs.
"""

import csv
import os

import numpy as np

from ..errors import InvalidArgumentError

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f")


def write_surfaces_csv(path, surfaces):
    """Long-format rows (detector, preprocessing, snr_db, doppler_bin, pd, ci, trials)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["detector", "preprocessing", "snr_db", "doppler_bin",
                    "pd", "ci", "trials"])
        for kind in sorted(surfaces):
            s = surfaces[kind]
            for j, d in enumerate(s.doppler_bins):
                for i, snr in enumerate(s.snr_db):
                    w.writerow([s.detector, s.preprocessing, repr(float(snr)),
                                int(d), repr(float(s.pd[j, i])),
                                repr(float(s.ci[j, i])), s.trials])


def read_surfaces_csv(path):
    """Inverse of write_surfaces_csv; returns dict detector -> PdSurface."""
    from .pipeline import PdSurface

    rows = {}
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        for row in r:
            key = (row["detector"], row["preprocessing"])
            rows.setdefault(key, []).append(row)
    out = {}
    for (det, prep), entries in rows.items():
        bins = sorted({int(e["doppler_bin"]) for e in entries})
        snrs = sorted({float(e["snr_db"]) for e in entries})
        pd = np.zeros((len(bins), len(snrs)))
        ci = np.zeros_like(pd)
        trials = int(entries[0]["trials"])
        for e in entries:
            j = bins.index(int(e["doppler_bin"]))
            i = snrs.index(float(e["snr_db"]))
            pd[j, i] = float(e["pd"])
            ci[j, i] = float(e["ci"])
        out[det] = PdSurface(detector=det, preprocessing=prep,
                             snr_db=np.asarray(snrs), doppler_bins=np.asarray(bins),
                             pd=pd, ci=ci, trials=trials)
    return out


def write_pfa_csv(path, pfa_hat, target_pfa, n_trials):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["detector", "doppler_bin", "pfa_hat", "target_pfa", "trials"])
        for kind in sorted(pfa_hat):
            for b, v in enumerate(pfa_hat[kind]):
                w.writerow([kind, b, repr(float(v)), repr(float(target_pfa)),
                            n_trials])


# -- SVG ---------------------------------------------------------------------

def _heat_color(v):
    """Map [0, 1] to a blue->yellow ramp; returns #rrggbb."""
    v = min(max(float(v), 0.0), 1.0)
    r = int(round(35 + 220 * v))
    g = int(round(40 + 190 * v))
    b = int(round(140 - 90 * v))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_pd_curves(surfaces, doppler_bin, title=""):
    """Pd-vs-SNR curves for one Doppler bin, every detector overlaid."""
    W, H, ml, mb, mt, mr = 640, 420, 60, 50, 30, 160
    plot_w, plot_h = W - ml - mr, H - mt - mb
    kinds = sorted(surfaces)
    s0 = surfaces[kinds[0]]
    lo, hi = float(s0.snr_db[0]), float(s0.snr_db[-1])

    def x(snr):
        return ml + (snr - lo) / max(hi - lo, 1e-12) * plot_w

    def y(pd):
        return mt + (1.0 - pd) * plot_h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{ml}" y="18" font-family="sans-serif" font-size="13">{title}</text>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yy = y(frac)
        parts.append(f'<line x1="{ml}" y1="{yy:.1f}" x2="{ml + plot_w}" y2="{yy:.1f}" '
                     'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{ml - 8}" y="{yy + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{frac:.2f}</text>')
    n_ticks = 8
    for i in range(n_ticks):
        snr = lo + (hi - lo) * i / (n_ticks - 1)
        xx = x(snr)
        parts.append(f'<text x="{xx:.1f}" y="{H - mb + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{snr:.0f}</text>')
    parts.append(f'<text x="{ml + plot_w / 2:.1f}" y="{H - 10}" text-anchor="middle" '
                 'font-family="sans-serif" font-size="12">SNR (dB)</text>')
    parts.append(f'<text x="16" y="{mt + plot_h / 2:.1f}" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 16 {mt + plot_h / 2:.1f})" '
                 'text-anchor="middle">Pd</text>')
    for ki, kind in enumerate(kinds):
        s = surfaces[kind]
        j = list(s.doppler_bins).index(doppler_bin)
        pts = " ".join(f"{x(float(snr)):.1f},{y(float(s.pd[j, i])):.1f}"
                       for i, snr in enumerate(s.snr_db))
        color = _PALETTE[ki % len(_PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.8"/>')
        ly = mt + 16 + 18 * ki
        parts.append(f'<line x1="{W - mr + 8}" y1="{ly}" x2="{W - mr + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2.5"/>')
        parts.append(f'<text x="{W - mr + 36}" y="{ly + 4}" font-family="sans-serif" '
                     f'font-size="11">{kind}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" '
                 'fill="none" stroke="#333333"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def svg_heatmap(surface, title=""):
    """Pd heatmap over (Doppler bin, SNR) for one detector."""
    nb, ns = surface.pd.shape
    cell_w, cell_h = max(6, int(520 / max(ns, 1))), 22
    ml, mt, mb, mr = 70, 30, 45, 20
    W = ml + ns * cell_w + mr
    H = mt + nb * cell_h + mb
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{ml}" y="18" font-family="sans-serif" font-size="13">{title}</text>']
    for j in range(nb):
        for i in range(ns):
            parts.append(f'<rect x="{ml + i * cell_w}" y="{mt + j * cell_h}" '
                         f'width="{cell_w}" height="{cell_h}" '
                         f'fill="{_heat_color(surface.pd[j, i])}"/>')
        parts.append(f'<text x="{ml - 8}" y="{mt + j * cell_h + cell_h / 2 + 4:.1f}" '
                     'text-anchor="end" font-family="sans-serif" font-size="11">'
                     f'd={int(surface.doppler_bins[j])}</text>')
    step = max(1, ns // 8)
    for i in range(0, ns, step):
        parts.append(f'<text x="{ml + i * cell_w + cell_w / 2:.1f}" y="{H - mb + 16}" '
                     'text-anchor="middle" font-family="sans-serif" font-size="10">'
                     f'{float(surface.snr_db[i]):.0f}</text>')
    parts.append(f'<text x="{ml + ns * cell_w / 2:.1f}" y="{H - 8}" text-anchor="middle" '
                 'font-family="sans-serif" font-size="12">SNR (dB)</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(surfaces, out_dir, fmt="csv+svg"):
    """Write the canonical CSV and the SVG figures; returns written paths."""
    if not surfaces:
        raise InvalidArgumentError("no surfaces to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    csv_path = os.path.join(out_dir, "pd_surfaces.csv")
    write_surfaces_csv(csv_path, surfaces)
    written.append(csv_path)
    if "svg" in fmt:
        any_surface = surfaces[sorted(surfaces)[0]]
        for d in any_surface.doppler_bins:
            path = os.path.join(out_dir, f"pd_curves_d{int(d)}.svg")
            with open(path, "w") as f:
                f.write(svg_pd_curves(surfaces, int(d),
                                      title=f"Pd vs SNR, Doppler bin {int(d)}"))
            written.append(path)
        for kind in sorted(surfaces):
            path = os.path.join(out_dir, f"pd_heatmap_{kind}.svg")
            with open(path, "w") as f:
                f.write(svg_heatmap(surfaces[kind], title=f"Pd map, {kind}"))
            written.append(path)
    return written
