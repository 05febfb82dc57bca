"""DET curve, EER, min t-DCF and per-attack breakdowns for CM scores.

Scores are "higher = more bona fide". At a threshold ``t`` a spoof trial
scoring ``>= t`` is a false alarm and a bona fide trial scoring ``< t`` is
a miss.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .protocol import DataError, Key, ProtocolEntry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    score: float
    key: Key
    attack_id: str = "-"

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError(f"{self.utt_id}: non-finite score {self.score}")


def _split(scores) -> tuple[np.ndarray, np.ndarray]:
    """Accept ScoreRecords or a ``(bonafide, spoof)`` pair of arrays."""
    if isinstance(scores, tuple) and len(scores) == 2 and not isinstance(scores[0], ScoreRecord):
        bona, spoof = (np.asarray(s, dtype=np.float64).ravel() for s in scores)
    else:
        recs = list(scores)
        bona = np.array([r.score for r in recs if r.key is Key.BONAFIDE], dtype=np.float64)
        spoof = np.array([r.score for r in recs if r.key is Key.SPOOF], dtype=np.float64)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError(
            f"need both classes, got {bona.size} bona fide and {spoof.size} spoof scores"
        )
    if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(spoof))):
        raise ValueError("scores must be finite")
    return bona, spoof


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray
    fa: np.ndarray
    miss: np.ndarray

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fa.tolist(), self.miss.tolist(), self.thresholds.tolist()))


def det_curve(scores) -> DetCurve:
    """Error rates at every distinct score plus one threshold above the maximum.

    The lowest threshold gives (P_fa, P_miss) = (1, 0); the last one (0, 1).
    """
    bona, spoof = _split(scores)
    values = np.unique(np.concatenate([bona, spoof]))
    top = values[-1]
    above = np.nextafter(top, np.inf) if np.isfinite(np.nextafter(top, np.inf)) else top
    thresholds = np.append(values, above)
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    miss = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    fa = (spoof.size - np.searchsorted(spoof_sorted, thresholds, side="left")) / spoof.size
    # the extra threshold sits strictly above every score
    miss[-1], fa[-1] = 1.0, 0.0
    return DetCurve(thresholds, fa, miss)


def _crossing(fa, miss, thresholds) -> tuple[float, float]:
    d = fa - miss
    i = int(np.argmax(d <= 0))
    if d[i] == 0 or i == 0:
        return float(fa[i]), float(thresholds[i])
    lam = d[i - 1] / (d[i - 1] - d[i])
    rate = fa[i - 1] + lam * (fa[i] - fa[i - 1])
    thr = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
    return float(rate), float(thr)


def eer(scores) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Linear interpolation between the two DET points bracketing the first
    place where P_fa - P_miss changes sign.
    """
    det = det_curve(scores)
    return _crossing(det.fa, det.miss, det.thresholds)


@dataclass(frozen=True)
class TdcfCosts:
    """Cost model of the tandem detection cost function.

    Priors and CM/ASV costs default to the ASVspoof 2019 official operating
    point. The ASV error rates depend on the fixed ASV system and its
    scores; the defaults below are placeholders and should be replaced with
    the rates measured for the ASV system in use.
    """

    p_spoof: float = 0.05
    p_tar: float = 0.95 * 0.99
    p_non: float = 0.95 * 0.01
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0
    p_miss_asv: float = 0.02
    p_fa_asv: float = 0.02
    p_miss_spoof_asv: float = 0.05
    label: str = "ASVspoof 2019 official operating point (placeholder ASV rates)"

    def __post_init__(self):
        for name in ("p_spoof", "p_tar", "p_non"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if abs(self.p_spoof + self.p_tar + self.p_non - 1.0) > 1e-9:
            raise ValueError("priors p_tar + p_non + p_spoof must sum to 1")
        for name in ("c_miss_asv", "c_fa_asv", "c_miss_cm", "c_fa_cm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def constants(self) -> tuple[float, float]:
        """(C1, C2): weights of the CM miss and false-alarm rates."""
        c1 = (self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
              - self.p_non * self.c_fa_asv * self.p_fa_asv)
        c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv)
        return c1, c2

    def to_dict(self) -> dict:
        return asdict(self)


def tdcf_curve(scores, costs: TdcfCosts = TdcfCosts()) -> tuple[np.ndarray, np.ndarray]:
    """Normalised t-DCF at every DET threshold."""
    c1, c2 = costs.constants
    if c1 <= 0 or c2 <= 0:
        raise ValueError(f"invalid ASV operating point: C1={c1:.6g}, C2={c2:.6g} must be positive")
    det = det_curve(scores)
    return (c1 * det.miss + c2 * det.fa) / min(c1, c2), det.thresholds


def min_tdcf(scores, costs: TdcfCosts = TdcfCosts()) -> tuple[float, float]:
    curve, thresholds = tdcf_curve(scores, costs)
    i = int(np.argmin(curve))
    return float(curve[i]), float(thresholds[i])


def per_attack_eer(scores: Iterable[ScoreRecord]) -> dict[str, float]:
    """EER of all bona fide trials against each attack's spoof trials."""
    recs = list(scores)
    bona = [r for r in recs if r.key is Key.BONAFIDE]
    _split(recs)
    attacks = sorted({r.attack_id for r in recs if r.key is Key.SPOOF})
    out: dict[str, float] = {}
    for attack in attacks:
        subset = [r for r in recs if r.key is Key.SPOOF and r.attack_id == attack]
        if not subset:
            log.warning("attack %s has no trials; omitted", attack)
            continue
        out[attack] = eer(bona + subset)[0]
    return out


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    min_tdcf: float
    min_tdcf_threshold: float
    per_attack_eer: dict[str, float]
    det_points: list[tuple[float, float, float]]
    costs: TdcfCosts = field(default_factory=TdcfCosts)
    n_bonafide: int = 0
    n_spoof: int = 0

    def summary_table(self, name: str = "CM") -> str:
        rows = [
            "Scores        EER (%)   min t-DCF",
            f"{name:<12}  {100 * self.eer:<8.4g}  {self.min_tdcf:.4g}",
            "",
            "Attack   EER (%)",
        ]
        rows += [f"{a:<7}  {100 * v:.4g}" for a, v in self.per_attack_eer.items()]
        c1, c2 = self.costs.constants
        rows += ["", f"t-DCF cost model: {self.costs.label}; C1={c1:.4g} C2={c2:.4g}"]
        return "\n".join(rows)

    def to_csv_rows(self) -> list[list]:
        rows = [["metric", "attack", "value"],
                ["eer", "all", repr(self.eer)],
                ["eer_threshold", "all", repr(self.eer_threshold)],
                ["min_tdcf", "all", repr(self.min_tdcf)],
                ["min_tdcf_threshold", "all", repr(self.min_tdcf_threshold)],
                ["n_bonafide", "all", str(self.n_bonafide)],
                ["n_spoof", "all", str(self.n_spoof)]]
        rows += [["eer", a, repr(v)] for a, v in self.per_attack_eer.items()]
        rows += [[f"cost.{k}", "all", repr(v) if isinstance(v, float) else v]
                 for k, v in self.costs.to_dict().items()]
        return rows


def evaluate(records: Sequence[ScoreRecord], costs: TdcfCosts = TdcfCosts()) -> EvalReport:
    records = list(records)
    e, e_thr = eer(records)
    t, t_thr = min_tdcf(records, costs)
    det = det_curve(records)
    bona, spoof = _split(records)
    return EvalReport(e, e_thr, t, t_thr, per_attack_eer(records), det.points(), costs,
                      int(bona.size), int(spoof.size))


# --------------------------------------------------------------------------
# score files


def format_scores(scores: Iterable[tuple[str, float]], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [f"{utt} {score!r}" for utt, score in scores]
    return "\n".join(lines) + "\n"


def parse_scores(text: str) -> dict[str, float]:
    """Parse ``utt_id score`` lines; ``#`` lines are comments."""
    out: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise DataError(f"expected 'utt_id score', got {len(fields)} fields", line=lineno)
        try:
            value = float(fields[1])
        except ValueError:
            raise DataError(f"bad score {fields[1]!r}", line=lineno) from None
        if not math.isfinite(value):
            raise DataError(f"non-finite score {fields[1]!r}", line=lineno)
        if fields[0] in out:
            raise DataError(f"duplicate utt_id {fields[0]!r}", line=lineno)
        out[fields[0]] = value
    return out


def join_scores(scores: dict[str, float], protocol: Iterable[ProtocolEntry]) -> list[ScoreRecord]:
    """Attach protocol labels to scores; every scored utterance must be in the protocol."""
    by_id = {e.utt_id: e for e in protocol}
    missing = [u for u in scores if u not in by_id]
    if missing:
        raise DataError(f"{len(missing)} scored utterances not in protocol, e.g. {missing[0]!r}")
    return [ScoreRecord(u, s, by_id[u].key, by_id[u].attack_id) for u, s in scores.items()]
