"""Benchmark and cost-report rendering: CSV, aligned text, optional figures.

CSV is the contract; the figure renderer is an opt-in convenience that drops
a PNG next to the delimited output.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

CSV_COLUMNS = ["benchmark", "channel", "world_size", "size_bytes", "rep", "seconds"]


@dataclass
class Summary:
    median: float
    mean: float
    p95: float
    max: float

    @classmethod
    def of(cls, samples: list[float]) -> "Summary":
        ordered = sorted(samples)
        p95 = ordered[min(len(ordered) - 1, int(0.95 * (len(ordered) - 1)))]
        return cls(statistics.median(samples), statistics.fmean(samples),
                   p95, max(samples))


@dataclass
class BenchmarkResult:
    benchmark: str
    channel: str
    world_size: int
    size_bytes: int
    samples: list[float]
    metered_cost_usd: Decimal | None = None
    failed_ranks: dict[int, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def summary(self) -> Summary:
        return Summary.of(self.samples)


def render_csv(results: list[BenchmarkResult]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(CSV_COLUMNS)
    for r in results:
        for rep, s in enumerate(r.samples):
            writer.writerow([r.benchmark, r.channel, r.world_size,
                             r.size_bytes, rep, f"{s:.9f}"])
    for r in results:
        s = r.summary
        out.write(f"# {r.benchmark}/{r.channel} n={r.world_size} "
                  f"size={r.size_bytes}: median={s.median:.9f} "
                  f"mean={s.mean:.9f} p95={s.p95:.9f} max={s.max:.9f}\n")
        if r.metered_cost_usd is not None:
            out.write(f"# {r.benchmark}/{r.channel} metered_cost_usd="
                      f"{r.metered_cost_usd}\n")
        if r.failed_ranks:
            out.write(f"# {r.benchmark}/{r.channel} failed_ranks="
                      f"{sorted(r.failed_ranks)}\n")
    return out.getvalue()


def render_text(results: list[BenchmarkResult]) -> str:
    header = (f"{'benchmark':<14} {'channel':<10} {'n':>3} {'size':>10} "
              f"{'reps':>5} {'median_s':>12} {'mean_s':>12} {'p95_s':>12} "
              f"{'max_s':>12}")
    lines = [header, "-" * len(header)]
    for r in results:
        s = r.summary
        lines.append(f"{r.benchmark:<14} {r.channel:<10} {r.world_size:>3} "
                     f"{r.size_bytes:>10} {len(r.samples):>5} "
                     f"{s.median:>12.6f} {s.mean:>12.6f} {s.p95:>12.6f} "
                     f"{s.max:>12.6f}")
        if r.metered_cost_usd is not None:
            lines.append(f"{'':14} metered cost: ${r.metered_cost_usd}")
        if r.failed_ranks:
            lines.append(f"{'':14} failed ranks: {sorted(r.failed_ranks)}")
    return "\n".join(lines) + "\n"


def emit_report(results: list[BenchmarkResult], path: str | Path,
                fmt: str = "csv", plot: bool = False) -> Path:
    """Write results to ``path``; optionally render a PNG alongside."""
    path = Path(path)
    text = render_csv(results) if fmt == "csv" else render_text(results)
    path.write_text(text)
    if plot:
        render_figure(results, path.with_suffix(".png"))
    return path


def render_figure(results: list[BenchmarkResult], png_path: str | Path) -> Path:
    """Per-repetition latency traces, one line per result row."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for r in results:
        label = f"{r.benchmark}/{r.channel} n={r.world_size} s={r.size_bytes}"
        ax.plot(range(len(r.samples)), [s * 1e3 for s in r.samples],
                marker=".", linewidth=0.8, label=label)
    ax.set_xlabel("repetition")
    ax.set_ylabel("time [ms]")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_cost_csv(reports, s3_note: str = "") -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["channel", "preset", "time_ms", "faas_usd",
                     "channel_usd", "total_usd"])
    for r in reports:
        writer.writerow([r.channel, r.preset,
                         f"{r.time_per_exchange * 1e3:.2f}",
                         f"{r.cents(r.faas_cost)}",
                         f"{r.cents(r.channel_cost)}",
                         f"{r.cents(r.total_cost)}"])
    if s3_note:
        out.write(f"# {s3_note}\n")
    return out.getvalue()


def render_cost_text(reports) -> str:
    header = (f"{'channel':<10} {'preset':<20} {'time_ms':>10} "
              f"{'faas_usd':>12} {'channel_usd':>12} {'total_usd':>12}")
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.channel:<10} {r.preset:<20} "
                     f"{r.time_per_exchange * 1e3:>10.2f} "
                     f"{r.cents(r.faas_cost):>12} "
                     f"{r.cents(r.channel_cost):>12} "
                     f"{r.cents(r.total_cost):>12}")
    return "\n".join(lines) + "\n"


def render_cost_figure(reports, png_path: str | Path) -> Path:
    """Grouped bars: worker cost vs channel cost per channel."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [f"{r.channel}\n({r.preset})" for r in reports]
    faas = [float(r.faas_cost) for r in reports]
    chan = [float(r.channel_cost) for r in reports]
    xs = range(len(reports))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(xs, faas, width=0.6, label="worker time")
    ax.bar(xs, chan, width=0.6, bottom=faas, label="channel")
    ax.set_xticks(list(xs), names, fontsize=7)
    ax.set_ylabel("USD")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)
