"""Static SVG figures and the per-patient report bundle."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib
import matplotlib.dates as mdates
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from .clustering import ClusterModel, KSelectionReport
from .timecourse import DwellContrast, StateTimecourse, dwell_contrast

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "svg.fonttype": "path",
    # fixed salt keeps generated element ids identical across runs
    "svg.hashsalt": "painstates",
    "lines.linewidth": 1.0,
}
SVG_METADATA = {"Date": None, "Creator": None}


def state_colors(labels: Sequence[str]) -> dict[str, tuple]:
    """Best state green through worst state red."""
    cmap = matplotlib.colormaps["RdYlGn"]
    n = len(labels)
    ordered = sorted(labels)
    return {lab: cmap(0.9 - 0.8 * i / max(n - 1, 1)) for i, lab in enumerate(ordered)}


def plot_timecourse(
    tc: StateTimecourse,
    traces: Mapping[str, Sequence[tuple[dt.date, float]]],
    labels: Sequence[str],
    path: Path,
    contrast: DwellContrast | None = None,
) -> Path:
    """State band on top, feature traces below, dwell bars when an event exists.

    Every day cell carries the SVG id ``day-cell-<date>`` inside the group
    ``state-band``; the dwell panels are ``dwell-pre`` and ``dwell-post``.
    """
    colors = state_colors(labels)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 5.5 if contrast is not None else 4.0))
        if contrast is not None:
            gs = fig.add_gridspec(3, 2, height_ratios=[0.6, 2.0, 1.6], hspace=0.6, wspace=0.3)
            band = fig.add_subplot(gs[0, :])
            lines = fig.add_subplot(gs[1, :], sharex=band)
            pre_ax = fig.add_subplot(gs[2, 0])
            post_ax = fig.add_subplot(gs[2, 1], sharey=pre_ax)
        else:
            gs = fig.add_gridspec(2, 1, height_ratios=[0.6, 2.0], hspace=0.4)
            band = fig.add_subplot(gs[0])
            lines = fig.add_subplot(gs[1], sharex=band)

        band.set_gid("state-band")
        for e in tc.entries:
            x0 = mdates.date2num(e.date)
            cell = Rectangle((x0 - 0.5, 0.0), 1.0, 1.0, facecolor=colors[e.label], edgecolor="none")
            cell.set_gid(f"day-cell-{e.date.isoformat()}")
            band.add_patch(cell)
        if tc.entries:
            band.set_xlim(
                mdates.date2num(tc.entries[0].date) - 1,
                mdates.date2num(tc.entries[-1].date) + 1,
            )
        band.set_ylim(0, 1)
        band.set_yticks([])
        band.set_title(f"{tc.participant_id}: state assignment")
        handles = [Rectangle((0, 0), 1, 1, facecolor=colors[lab]) for lab in labels]
        band.legend(handles, labels, ncol=len(labels), loc="lower left", bbox_to_anchor=(0, 1.15))

        lines.set_gid("feature-traces")
        for name, series in traces.items():
            if not series:
                continue
            xs = [mdates.date2num(d) for d, _ in series]
            lines.plot(xs, [v for _, v in series], label=name)
        lines.set_ylabel("normalized value")
        lines.xaxis_date()
        if traces:
            lines.legend(ncol=4, loc="upper left", bbox_to_anchor=(0, -0.15))

        if contrast is not None:
            ev = mdates.date2num(contrast.event_date)
            band.axvline(ev, color="black", lw=1.2)
            lines.axvline(ev, color="black", lw=1.2, ls="--")
            for ax, fr, title, gid in (
                (pre_ax, contrast.pre_fractions, f"{contrast.pre_days} days before", "dwell-pre"),
                (post_ax, contrast.post_fractions, f"{contrast.post_days} days after", "dwell-post"),
            ):
                ax.set_gid(gid)
                vals = np.nan_to_num(np.asarray(fr, dtype=float))
                ax.bar(range(len(labels)), vals, color=[colors[lab] for lab in labels])
                ax.set_xticks(range(len(labels)), labels)
                ax.set_ylim(0, 1)
                ax.set_title(title)
            pre_ax.set_ylabel("dwell fraction")

        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    return path


def plot_selection(report: KSelectionReport, path: Path) -> Path:
    """Four model-selection curves with each criterion's vote marked."""
    panels = [
        ("WCSS", report.wcss_curve, report.votes.get("elbow")),
        ("mean silhouette", report.silhouette_curve, report.votes.get("silhouette")),
        ("ARI k-means vs Ward", report.agglomerative_ari_curve, report.votes.get("agglomerative")),
        ("consensus PAC", report.consensus_pac_curve, report.votes.get("consensus")),
    ]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 2.4))
        axes = fig.subplots(1, 4)
        for ax, (title, curve, vote) in zip(axes, panels):
            ax.plot(report.k_range, curve, marker="o", ms=3, color="0.2")
            if vote is not None:
                ax.axvline(vote, color="tab:red", lw=0.8, ls=":")
            ax.set_title(title)
            ax.set_xlabel("k")
        fig.suptitle(f"chosen k = {report.chosen_k}")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    return path


def plot_state_profiles(model: ClusterModel, path: Path) -> Path:
    """Grouped bars of centroid coordinates, one group per feature."""
    labels = model.ranking or [str(i + 1) for i in range(model.k)]
    order = sorted(range(model.k), key=lambda s: labels[s])
    colors = state_colors(labels)
    d = len(model.feature_names)
    width = 0.8 / model.k
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(max(6.0, 0.6 * d + 2), 3.0))
        ax = fig.add_subplot()
        for j, s in enumerate(order):
            ax.bar(
                np.arange(d) + (j - (model.k - 1) / 2) * width,
                model.centroids[s],
                width,
                label=labels[s],
                color=colors[labels[s]],
            )
        ax.set_xticks(np.arange(d), model.feature_names, rotation=30, ha="right")
        ax.set_ylabel("centroid (normalized)")
        ax.legend(ncol=model.k)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    return path


@dataclass
class ReportBundle:
    directory: Path
    files: list[Path] = field(default_factory=list)
    contrasts: list[DwellContrast] = field(default_factory=list)


def _safe(pid: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in pid)


def export_timecourse(
    timecourses: Sequence[StateTimecourse],
    raw_features: Sequence,
    out_dir,
    labels: Sequence[str],
    events: Mapping[str, dt.date] | None = None,
    pre_days: int = 30,
    post_days: int = 30,
    trace_features: Sequence[str] | None = None,
) -> ReportBundle:
    """Write per-patient state CSVs and SVGs, plus ``dwell.csv`` when events exist."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle(out)
    traces_by_pid: dict[str, dict[str, list]] = {}
    for v in sorted(raw_features, key=lambda v: (v.participant_id, v.date)):
        names = trace_features or list(v.values)
        per = traces_by_pid.setdefault(v.participant_id, {n: [] for n in names})
        for n in names:
            if n in v.values and np.isfinite(v.values[n]):
                per[n].append((v.date, v.values[n]))
    alphabet = sorted(labels)
    events = events or {}

    for tc in timecourses:
        name = _safe(tc.participant_id)
        states_csv = out / f"{name}_states.csv"
        try:
            with open(states_csv, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["date", "state_label"])
                for e in tc.entries:
                    w.writerow([e.date.isoformat(), e.label])
        except OSError as exc:
            raise OSError(f"{states_csv}: {exc.strerror}") from exc
        bundle.files.append(states_csv)

        contrast = None
        if tc.participant_id in events:
            contrast = dwell_contrast(tc, events[tc.participant_id], pre_days, post_days, alphabet)
            bundle.contrasts.append(contrast)
        svg = out / f"{name}_timecourse.svg"
        try:
            plot_timecourse(tc, traces_by_pid.get(tc.participant_id, {}), alphabet, svg, contrast)
        except OSError as exc:
            raise OSError(f"{svg}: {exc.strerror}") from exc
        bundle.files.append(svg)

    if bundle.contrasts:
        path = out / "dwell.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["participant_id", "event_date", "window", "n_days", *alphabet])
            for c in bundle.contrasts:
                for window, fr, n in (("pre", c.pre_fractions, c.n_pre), ("post", c.post_fractions, c.n_post)):
                    w.writerow([c.participant_id, c.event_date.isoformat(), window, n, *(repr(float(x)) for x in fr)])
        bundle.files.append(path)
    return bundle
