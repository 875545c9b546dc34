"""Confusion counts and change-detection scores (Pf, Pm, PCC, KC, GD/OE)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .imaging import check_same_shape


class NonBinaryLabels(ValueError):
    def __init__(self, which: str, coord):
        super().__init__(f"{which} map is not binary at pixel (row={coord[0]}, col={coord[1]})")
        self.coord = coord


@dataclass(frozen=True)
class Confusion:
    Nu: int  # truly unchanged pixels
    Nc: int  # truly changed pixels
    Fn: int  # unchanged detected as changed
    Mn: int  # changed detected as unchanged


def _check_binary(arr, which):
    bad = np.argwhere((arr != 0) & (arr != 1))
    if len(bad):
        raise NonBinaryLabels(which, tuple(int(v) for v in bad[0]))


def confusion(pred, truth) -> Confusion:
    """Tally a binary prediction against binary ground truth (1 = changed).

    Maps stored as 0/255 display rasters are accepted and mapped to 0/1.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    check_same_shape(pred, truth)
    pred = np.where(pred == 255, 1, pred)
    truth = np.where(truth == 255, 1, truth)
    _check_binary(pred, "predicted")
    _check_binary(truth, "truth")
    t = truth.astype(bool)
    p = pred.astype(bool)
    return Confusion(Nu=int((~t).sum()), Nc=int(t.sum()),
                     Fn=int((p & ~t).sum()), Mn=int((~p & t).sum()))


@dataclass(frozen=True)
class Report:
    """All fields in percent; None when undefined (zero denominator)."""

    Pf: float | None
    Pm: float | None
    PCC: float | None
    KC: float | None
    GD_OE: float | None

    def as_dict(self):
        return asdict(self)


def _div(a, b):
    return None if b == 0 else a / b


def evaluate(c: Confusion) -> Report:
    Nu, Nc, Fn, Mn = c.Nu, c.Nc, c.Fn, c.Mn
    N = Nu + Nc
    pcc = _div(N - Fn - Mn, N)
    # Expected agreement from predicted/true marginals. The printed form,
    # ((Nc + Fn - Mn) Nc + (Nu + M - F) Nu) / (Nc + Nu)^2, has symbol typos;
    # predicted-changed count is Nc - Mn + Fn and predicted-unchanged Nu - Fn + Mn.
    pre = _div((Nc - Mn + Fn) * Nc + (Nu - Fn + Mn) * Nu, N * N)
    kc = None
    if pcc is not None and pre is not None:
        kc = 1.0 if pre == 1 and pcc == 1 else _div(pcc - pre, 1 - pre)
    # GD/OE taken literally as (Nu - Mn) / (Fn + Mn), as defined in the source.
    gd = _div(Nu - Mn, Fn + Mn)

    def pct(x):
        return None if x is None else 100.0 * x

    return Report(Pf=pct(_div(Fn, Nu)), Pm=pct(_div(Mn, Nc)), PCC=pct(pcc),
                  KC=pct(kc), GD_OE=pct(gd))


def score(pred, truth) -> Report:
    return evaluate(confusion(pred, truth))


def _fmt(v):
    return "undefined" if v is None else f"{v:.2f}"


def format_table(report: Report, c: Confusion | None = None) -> str:
    rows = [("Pf (%)", report.Pf), ("Pm (%)", report.Pm), ("PCC (%)", report.PCC),
            ("KC (%)", report.KC), ("GD/OE (%) [as-defined-in-source]", report.GD_OE)]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {_fmt(v):>10}" for name, v in rows]
    if c is not None:
        lines = [f"Nu={c.Nu} Nc={c.Nc} Fn={c.Fn} Mn={c.Mn}"] + lines
    return "\n".join(lines)


def format_keyvalue(report: Report, c: Confusion | None = None) -> str:
    lines = []
    if c is not None:
        lines += [f"{k} = {v}" for k, v in asdict(c).items()]
    lines += [f"{k} = {_fmt(v)}" for k, v in report.as_dict().items()]
    lines.append("GD_OE_note = as-defined-in-source")
    return "\n".join(lines) + "\n"
