"""CSV time series and the output sinks driven by the integrator."""
from __future__ import annotations

from pathlib import Path

from .snapshot import write_snapshot

HEADER = (
    "t,dM,dJx,dJy,dJz,dE,H,H_rel,prop24,E_func,N_beta,macro_dev,"
    "rho_min,rho_max,T_min,T_max,u_max,ck_gap,flags"
)
PARTIAL_MARKER = "PARTIAL"


def _g(x: float) -> str:
    return "%.17g" % x


def format_record(r) -> str:
    nums = [r.t, r.dM, *r.dJ, r.dE, r.H, r.H_rel, r.prop24_lhs, r.E_func, r.N_beta, r.macro_dev,
            r.rho_min, r.rho_max, r.T_min, r.T_max, r.u_max, r.ck_gap]
    return ",".join(_g(x) for x in nums) + "," + r.flags()


def write_series(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        for r in records:
            fh.write(format_record(r) + "\n")


def read_series(path) -> list[dict]:
    """Parse a series file back into dictionaries of floats (flags kept as text)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path} does not start with the series header")
    names = HEADER.split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row = {k: float(v) for k, v in zip(names[:-1], parts[:-1])}
        row["flags"] = dict(kv.split("=") for kv in parts[-1].split(";"))
        rows.append(row)
    return rows


class SeriesSink:
    """Streams records to ``series.csv`` and snapshots into ``directory``.

    On failure :meth:`abort` leaves a ``PARTIAL`` marker file next to the
    output so incomplete results are never mistaken for finished ones.
    """

    def __init__(self, directory, name: str = "series.csv"):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        marker = self.directory / PARTIAL_MARKER
        if marker.exists():
            marker.unlink()
        self.path = self.directory / name
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._fh.write(HEADER + "\n")

    def record(self, rec) -> None:
        self._fh.write(format_record(rec) + "\n")

    def snapshot(self, F, n: int) -> None:
        write_snapshot(F, self.directory / f"snapshot_{n:06d}.esbg")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def abort(self) -> None:
        try:
            self.close()
        finally:
            (self.directory / PARTIAL_MARKER).write_text("run aborted before completion\n", encoding="utf-8")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
