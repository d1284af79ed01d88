"""Output plumbing: delimited tables, JSON summaries, figures, manifests.

All files are written atomically (temp file + rename). Report-producing
commands render a matplotlib figure next to each CSV; the CSV stays the
data contract, figures are for eyeballing.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .util import sha256_file  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "font.size": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 9,
}


def _atomic_write(path, data: bytes):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_json(path, payload) -> str:
    _atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True,
                                    default=_jsonable) + "\n").encode())
    return path


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def save_figure(fig, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def fig_loglog_rate(eps, errors, slope=None, intercept=None, title="",
                    reference_slope=None):
    """Error decay against eps with the fitted (and reference) power laws."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        eps = np.asarray(eps, dtype=float)
        errors = np.asarray(errors, dtype=float)
        ax.loglog(eps, errors, "o", label="measured")
        if slope is not None:
            ax.loglog(eps, np.exp(intercept) * eps**slope, "-",
                      label=f"fit slope {slope:.3f}")
        if reference_slope is not None:
            anchor = errors[0] / eps[0] ** reference_slope
            ax.loglog(eps, anchor * eps**reference_slope, "--",
                      label=f"reference slope {reference_slope:.3f}")
        ax.set_xlabel("eps")
        ax.set_ylabel("error")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
    return fig


def fig_curves(x, curves: dict, xlabel="", ylabel="", title="", logy=False):
    """One line per labeled curve over a shared abscissa."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, y in curves.items():
            ax.plot(np.asarray(x), np.asarray(y), label=str(label))
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if curves:
            ax.legend()
        fig.tight_layout()
    return fig


def fig_field(values, epsilon, title=""):
    """Snapshot of a lattice field (line in 1-d, image in 2-d)."""
    values = np.asarray(values)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if values.ndim == 1:
            n = values.size
            order = np.argsort(_signed_sites(n))
            ax.plot(_signed_sites(n)[order] * epsilon, values[order])
            ax.set_xlabel("x")
            ax.set_ylabel("U(x)")
        else:
            im = ax.imshow(values, origin="lower", cmap="viridis")
            fig.colorbar(im, ax=ax)
        ax.set_title(title)
        fig.tight_layout()
    return fig


def _signed_sites(n):
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


@dataclass
class RunManifest:
    """Everything needed to reproduce a run and audit its outputs."""

    subcommand: str
    config: dict
    seed: int
    versions: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)  # {path, sha256}
    assertions: dict = field(default_factory=dict)

    def register(self, path):
        self.outputs.append({"path": str(path), "sha256": sha256_file(path)})

    def write(self, path) -> str:
        return write_json(path, asdict(self))


def package_versions() -> dict:
    import platform

    import matplotlib as mpl
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": mpl.__version__,
    }


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start
