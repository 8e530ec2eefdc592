"""Energy-versus-parameter plots from a sweep CSV."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sweep import read_csv  # noqa: E402

AXIS_LABELS = {
    "K": "number of users K",
    "N": "number of subcarriers N",
    "p_max": "max transmit power (dBm)",
    "T": "deadline T (s)",
    "f_k": "user CPU frequency (Hz)",
    "F": "MEC capacity F (Hz)",
}
VARIANT_LABELS = {"pa": "PA", "epa": "EPA", "fr": "FR", "lc": "LC"}


def plot_sweep(csv_path: str | Path, out_path: str | Path, log_y: bool = True) -> Path:
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    var = rows[0]["sweep_var"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant in dict.fromkeys(r["variant"] for r in rows):
        sub = sorted((r for r in rows if r["variant"] == variant), key=lambda r: r["sweep_value"])
        x = [r["sweep_value"] for r in sub]
        y = [r["mean_energy_j"] for r in sub]
        ax.errorbar(x, y, yerr=[r["std_energy_j"] for r in sub], marker="o", capsize=3,
                    label=VARIANT_LABELS.get(variant, variant))
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(AXIS_LABELS.get(var, var))
    ax.set_ylabel("total energy (J)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=out.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return out
