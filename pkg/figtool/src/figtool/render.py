"""CSV loading, schema validation, and the five figure kinds."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import yaml

# The producer's row schema, duplicated here on purpose: this package
# depends on the documented CSV contract, not on the producer's code.
SCHEMA_VERSION = "wtcsim-rows-1"
SCHEMA_COLUMNS = ["schema", "scheme", "k", "q", "n", "snr_yf_db", "snr_yfb_db",
                  "snr_zf_db", "snr_zfb_db", "seed", "bler", "i_bob_bits",
                  "l_eve_bits", "sag_bits", "tau", "beta_final", "runtime_s"]

_INT_COLUMNS = ("k", "q", "n", "seed")

FIGURE_KINDS = ("bler-vs-blocklength", "mi-vs-blocklength", "bler-vs-snr",
                "leakage-vs-snr", "tradeoff-scatter")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    """One figure: input rows, kind, grouping, output path."""

    input: str
    kind: str
    output: str
    group_by: tuple = ()
    title: str | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {FIGURE_KINDS}")
        bad = [g for g in self.group_by if g not in SCHEMA_COLUMNS]
        if bad:
            raise SchemaError(f"group_by columns not in schema: {bad}")

    @classmethod
    def from_file(cls, path) -> "PlotSpec":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: plot spec must be a mapping")
        known = {"input", "kind", "output", "group_by", "title"}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"{path}: unknown spec fields {sorted(unknown)}")
        for req in ("input", "kind", "output"):
            if req not in raw:
                raise SchemaError(f"{path}: missing required field {req!r}")
        return cls(input=raw["input"], kind=raw["kind"], output=raw["output"],
                   group_by=tuple(raw.get("group_by", ())),
                   title=raw.get("title"))


def _parse(name: str, value: str):
    if value == "":
        return None
    if name in _INT_COLUMNS:
        return int(value)
    if name in ("schema", "scheme"):
        return value
    return float(value)


def load_rows(path) -> list[dict]:
    """Parse and validate a rows CSV; raises SchemaError on any mismatch."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a schema header")
        missing = [c for c in SCHEMA_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing schema columns {missing}")
        extra = [c for c in header if c not in SCHEMA_COLUMNS]
        if extra:
            raise SchemaError(f"{path}: unexpected columns {extra}")
        idx = {c: header.index(c) for c in SCHEMA_COLUMNS}
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise SchemaError(f"{path}:{line_no}: wrong field count")
            row = {}
            for name in SCHEMA_COLUMNS:
                try:
                    row[name] = _parse(name, record[idx[name]])
                except ValueError as exc:
                    raise SchemaError(
                        f"{path}:{line_no}: bad value for {name!r}: {exc}")
            if row["schema"] != SCHEMA_VERSION:
                raise SchemaError(f"{path}:{line_no}: schema version "
                                  f"{row['schema']!r} != {SCHEMA_VERSION!r}")
            rows.append(row)
    return rows


def _require(rows, columns, kind):
    for col in columns:
        if all(r[col] is None for r in rows):
            raise SchemaError(f"figure kind {kind!r} needs column {col!r}, "
                              f"which has no values in this CSV")


def _group(rows, keys):
    out = {}
    for r in rows:
        label = ", ".join(f"{k}={r[k]}" for k in keys) if keys else "all rows"
        out.setdefault(label, []).append(r)
    return out


def _series(ax, rows, keys, x_col, y_col, **plot_kw):
    for label, members in sorted(_group(rows, keys).items()):
        pts = sorted((r[x_col], r[y_col]) for r in members
                     if r[x_col] is not None and r[y_col] is not None)
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=label, **plot_kw)


_AXIS_LABELS = {
    "n": "blocklength n",
    "snr_yf_db": "forward SNR at Bob (dB)",
    "bler": "block error rate",
    "l_eve_bits": "information leakage (bits)",
}


def render(spec: PlotSpec) -> str:
    """Draw the requested figure and write it to spec.output."""
    rows = load_rows(spec.input)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    kind = spec.kind
    if not rows:
        warnings.warn(f"{spec.input}: no data rows; rendering empty axes")
        ax.set_title(spec.title or f"{kind} (no data)")
        fig.savefig(spec.output, dpi=120)
        plt.close(fig)
        return spec.output

    if kind == "bler-vs-blocklength":
        _require(rows, ("n", "bler"), kind)
        keys = spec.group_by or ("scheme", "snr_yf_db")
        _series(ax, rows, keys, "n", "bler")
        ax.set_yscale("log")
        ax.set_xlabel(_AXIS_LABELS["n"])
        ax.set_ylabel(_AXIS_LABELS["bler"])
    elif kind == "mi-vs-blocklength":
        _require(rows, ("n",), kind)
        if all(r["i_bob_bits"] is None for r in rows) and \
                all(r["l_eve_bits"] is None for r in rows):
            raise SchemaError(f"figure kind {kind!r} needs column "
                              f"'i_bob_bits' or 'l_eve_bits' values")
        keys = spec.group_by or ("scheme", "snr_yf_db")
        _series(ax, rows, keys, "n", "i_bob_bits", linestyle="-")
        _series(ax, rows, keys, "n", "l_eve_bits", linestyle="--")
        ax.set_xlabel(_AXIS_LABELS["n"])
        ax.set_ylabel("estimated mutual information (bits)")
    elif kind == "bler-vs-snr":
        _require(rows, ("snr_yf_db", "bler"), kind)
        keys = spec.group_by or ("scheme", "n")
        _series(ax, rows, keys, "snr_yf_db", "bler")
        ax.set_yscale("log")
        ax.set_xlabel(_AXIS_LABELS["snr_yf_db"])
        ax.set_ylabel(_AXIS_LABELS["bler"])
    elif kind == "leakage-vs-snr":
        _require(rows, ("snr_yf_db", "l_eve_bits"), kind)
        keys = spec.group_by or ("scheme", "n")
        _series(ax, rows, keys, "snr_yf_db", "l_eve_bits")
        ax.set_xlabel(_AXIS_LABELS["snr_yf_db"])
        ax.set_ylabel(_AXIS_LABELS["l_eve_bits"])
    elif kind == "tradeoff-scatter":
        _require(rows, ("l_eve_bits", "bler"), kind)
        keys = spec.group_by or ("snr_yf_db", "snr_yfb_db")
        for label, members in sorted(_group(rows, keys).items()):
            xs = [r["l_eve_bits"] for r in members if r["l_eve_bits"] is not None]
            ys = [r["bler"] for r in members if r["bler"] is not None]
            ax.scatter(xs, ys, label=label)
            for r in members:
                if r["tau"] is not None and r["l_eve_bits"] is not None \
                        and r["bler"] is not None:
                    ax.annotate(f"τ={r['tau']:g}", (r["l_eve_bits"], r["bler"]),
                                fontsize=7, xytext=(3, 3),
                                textcoords="offset points")
        ax.set_yscale("log")
        ax.set_xlabel("achieved leakage (bits)")
        ax.set_ylabel(_AXIS_LABELS["bler"])

    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title(spec.title or kind)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=120)
    plt.close(fig)
    return spec.output


def render_figure(input_csv: str, kind: str, output: str,
                  group_by=(), title=None) -> str:
    """Convenience wrapper building the spec inline."""
    return render(PlotSpec(input=input_csv, kind=kind, output=output,
                           group_by=tuple(group_by), title=title))
