"""Figure rendering from hulab's delimited outputs.

Consumes the CSV contracts verbatim and draws three figure kinds:
``spectrum`` (radial structure factors, mean with a standard-error band,
optional log-log inset and theory overlay), ``scatter_overlay`` (source
and destination point samples in two colors), and ``variance_curve``.
Rendering is a pure function of the input files: fixed style, no clock
or seed dependence, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import toml

__all__ = ["FigureSpec", "FigureInputError", "render"]

STYLE = {
    "figure.figsize": (6.0, 4.2),
    "figure.dpi": 150,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.prop_cycle": plt.cycler(color=["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]),
    "svg.hashsalt": "hulab-plots",  # deterministic SVG element ids
}

_COLUMNS = {
    "spectrum": ("k", "S_mean", "S_stderr"),
    "variance_curve": ("r", "var_norm", "stderr"),
    "theory": ("k", "S_theory"),
}


class FigureInputError(ValueError):
    """An input file violates the expected CSV contract."""


@dataclass(frozen=True)
class FigureSpec:
    """Declarative figure: kind, input CSVs with labels, output path."""

    kind: str
    inputs: tuple
    output: str
    theory: str | None = None
    loglog_inset: bool = True
    title: str | None = None

    _KINDS = ("spectrum", "scatter_overlay", "variance_curve")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise FigureInputError(
                f"unknown figure kind {self.kind!r}; expected one of {self._KINDS}"
            )
        if not self.inputs:
            raise FigureInputError("figure needs at least one input file")
        fmt = Path(self.output).suffix.lower()
        if fmt not in (".png", ".svg"):
            raise FigureInputError(f"unsupported output format {fmt!r}; use .png or .svg")

    @classmethod
    def from_toml(cls, path) -> "FigureSpec":
        data = toml.loads(Path(path).read_text())
        inputs = tuple(
            (entry["path"], entry.get("label", Path(entry["path"]).stem))
            for entry in data.get("inputs", ())
        )
        return cls(
            kind=data.get("kind", "spectrum"),
            inputs=inputs,
            output=data["output"],
            theory=data.get("theory"),
            loglog_inset=bool(data.get("loglog_inset", True)),
            title=data.get("title"),
        )


def _read_columns(path, required) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FigureInputError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise FigureInputError(f"column '{col}' missing in {path}")
        rows = list(reader)
    if not rows:
        raise FigureInputError(f"no data rows in {path}")
    out = {}
    for col in required:
        try:
            out[col] = np.array([float(r[col]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise FigureInputError(f"column '{col}' in {path} is not numeric") from exc
    return out


def _read_points(path) -> tuple[np.ndarray, float | None]:
    path = Path(path)
    if not path.exists():
        raise FigureInputError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("x", "y"):
            if col not in header:
                raise FigureInputError(f"column '{col}' missing in {path}")
        rows = list(reader)
    if not rows:
        raise FigureInputError(f"no data rows in {path}")
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    side = None
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        import json

        side = json.loads(sidecar.read_text()).get("box_side")
    return pts, side


def _save(fig, output) -> Path:
    output = Path(output)
    if output.parent != Path("."):
        output.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if output.suffix.lower() == ".svg" else {}
    fig.savefig(output, metadata=metadata)
    plt.close(fig)
    return output


def _render_spectrum(spec: FigureSpec):
    fig, ax = plt.subplots()
    curves = []
    for path, label in spec.inputs:
        cols = _read_columns(path, _COLUMNS["spectrum"])
        curves.append((cols, label))
        ax.plot(cols["k"], cols["S_mean"], label=label, lw=1.5)
        ax.fill_between(cols["k"], cols["S_mean"] - cols["S_stderr"],
                        cols["S_mean"] + cols["S_stderr"], alpha=0.25, lw=0)
    if spec.theory:
        th = _read_columns(spec.theory, _COLUMNS["theory"])
        ax.plot(th["k"], th["S_theory"], "k--", lw=1.0, label="theory")
    ax.set_xlabel("wavenumber k")
    ax.set_ylabel("structure factor S(k)")
    ax.legend(loc="lower right")
    if spec.loglog_inset:
        inset = ax.inset_axes([0.12, 0.55, 0.38, 0.4])
        for cols, _label in curves:
            pos = cols["S_mean"] > 0
            inset.loglog(cols["k"][pos], cols["S_mean"][pos], lw=1.0)
        if spec.theory:
            pos = th["S_theory"] > 0
            if pos.any():
                inset.loglog(th["k"][pos], th["S_theory"][pos], "k--", lw=0.8)
        inset.tick_params(labelsize=7)
        inset.grid(True, which="both", alpha=0.2)
    return fig


def _render_scatter(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    sides = []
    for (path, label), size in zip(spec.inputs, (9.0, 9.0, 6.0, 6.0)):
        pts, side = _read_points(path)
        if side:
            sides.append(side)
        ax.scatter(pts[:, 0], pts[:, 1], s=size, label=label, alpha=0.8,
                   edgecolors="none")
    if sides:
        ax.set_xlim(0, max(sides))
        ax.set_ylim(0, max(sides))
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(loc="upper right", framealpha=0.9)
    return fig


def _render_variance(spec: FigureSpec):
    fig, ax = plt.subplots()
    for path, label in spec.inputs:
        cols = _read_columns(path, _COLUMNS["variance_curve"])
        ax.plot(cols["r"], cols["var_norm"], label=label, lw=1.5)
        band = np.nan_to_num(cols["stderr"])
        ax.fill_between(cols["r"], cols["var_norm"] - band,
                        cols["var_norm"] + band, alpha=0.25, lw=0)
    ax.set_xlabel("window radius r")
    ax.set_ylabel("normalized variance")
    ax.legend(loc="best")
    return fig


def render(spec: FigureSpec) -> Path:
    """Render the figure described by ``spec`` and return the output path.

    Raises :class:`FigureInputError` (naming the offending file or
    column) before any file is written if an input violates its contract.
    """
    with plt.rc_context(STYLE):
        if spec.kind == "spectrum":
            fig = _render_spectrum(spec)
        elif spec.kind == "scatter_overlay":
            fig = _render_scatter(spec)
        else:
            fig = _render_variance(spec)
        if spec.title:
            fig.suptitle(spec.title)
        return _save(fig, spec.output)
