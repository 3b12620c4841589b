"""Exact checks of vitality and independent evolution for finite processes.

A finite process is an explicit table of trajectories with probabilities.
For vitality the table is ``{"times": [...], "trajectories": [{"path": [...],
"death": T or null, "prob": p}]}`` where ``path[i]`` is the state at
``times[i]`` and ``death = null`` means survival beyond the last time.  For
independent evolution it is ``{"times": [...], "trajectories": [{"x": [...],
"y": [...], "prob": p}]}``.  States may be numbers, strings or lists.

All conditional probabilities are computed by enumeration with exact
rational arithmetic whenever the probabilities are given as fractions or
decimal strings, and otherwise in floating point with tolerance ``tol``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

from .errors import SpecError


def _key(v):
    if isinstance(v, list):
        return tuple(_key(u) for u in v)
    return v


def _prob(p):
    if isinstance(p, Fraction):
        return p
    if isinstance(p, str):
        try:
            return Fraction(p)
        except ValueError:
            raise SpecError(f"bad probability {p!r}") from None
    if isinstance(p, bool) or not isinstance(p, (int, float)):
        raise SpecError(f"bad probability {p!r}")
    return float(p)


def _normalised(probs, tol):
    if any(p < 0 for p in probs):
        raise SpecError("negative trajectory probability")
    total = sum(probs)
    exact = all(isinstance(p, (Fraction, int)) for p in probs)
    if (exact and total != 1) or (not exact and abs(float(total) - 1.0) > tol):
        raise SpecError(f"trajectory probabilities sum to {float(total)!r}, not 1")


def _close(a, b, tol):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= tol


def _load(spec):
    if isinstance(spec, str):
        spec = json.loads(spec)
    if not isinstance(spec, dict) or "times" not in spec or "trajectories" not in spec:
        raise SpecError("spec needs 'times' and 'trajectories'")
    times = list(spec["times"])
    if any(b <= a for a, b in zip(times, times[1:])):
        raise SpecError("times must be strictly increasing")
    if not spec["trajectories"]:
        raise SpecError("no trajectories")
    return spec, times


@dataclass(frozen=True)
class Verdict:
    holds: bool
    label: str
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {"holds": self.holds, "verdict": self.label, "witness": self.witness}


def vitality_check(spec, tol: float = 1e-12) -> Verdict:
    """Is pr(T > t | Y) = pr(T > t | Y(t)) in {0, 1} at every time point?"""
    spec, times = _load(spec)
    rows = []
    for tr in spec["trajectories"]:
        try:
            path = tuple(_key(v) for v in tr["path"])
            death = tr.get("death")
            p = _prob(tr["prob"])
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad trajectory entry {tr!r}: {exc}") from None
        if len(path) != len(times):
            raise SpecError(f"path of length {len(path)} for {len(times)} time points")
        death = math.inf if death is None else float(death)
        rows.append((path, death, p))
    _normalised([p for _, _, p in rows], tol)

    for i, t in enumerate(times):
        by_value = defaultdict(lambda: [0, 0])   # y -> [mass, mass alive]
        by_path = defaultdict(lambda: [0, 0])
        for path, death, p in rows:
            if p == 0:
                continue
            alive = death > t
            for acc in (by_value[path[i]], by_path[path]):
                acc[0] += p
                if alive:
                    acc[1] += p
        for path, (mass, alive_mass) in by_path.items():
            y = path[i]
            pv = by_value[y][1] / by_value[y][0]
            pp = alive_mass / mass
            if not _close(pp, pv, tol):
                return Verdict(False, "non-vital", {
                    "reason": "{T > t} is not conditionally independent of the trajectory given Y(t)",
                    "t": t, "y": _plain(y), "trajectory": _plain(path),
                    "pr_given_trajectory": float(pp), "pr_given_value": float(pv)})
        for y, (mass, alive_mass) in by_value.items():
            pv = alive_mass / mass
            if not (_close(pv, 0, tol) or _close(pv, 1, tol)):
                pair = _two_paths(rows, i, y, t)
                return Verdict(False, "non-vital", {
                    "reason": "pr(T > t | Y(t) = y) lies strictly between 0 and 1",
                    "t": t, "y": _plain(y), "pr_alive": float(pv), "trajectories": pair})
    return Verdict(True, "vital")


def _two_paths(rows, i, y, t):
    alive = next((p for p, d, w in rows if w != 0 and p[i] == y and d > t), None)
    dead = next((p for p, d, w in rows if w != 0 and p[i] == y and not d > t), None)
    return [_plain(alive), _plain(dead)]


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(u) for u in v]
    return v


def _bivariate_rows(spec, tol):
    spec, times = _load(spec)
    rows = []
    for tr in spec["trajectories"]:
        try:
            x = tuple(_key(v) for v in tr["x"])
            y = tuple(_key(v) for v in tr["y"])
            p = _prob(tr["prob"])
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad trajectory entry {tr!r}: {exc}") from None
        if len(x) != len(times) or len(y) != len(times):
            raise SpecError("x and y paths must have one state per time point")
        rows.append((x, y, p))
    _normalised([p for *_, p in rows], tol)
    return times, [r for r in rows if r[2] != 0]


def independent_evolution_check(spec, direction: str = "y", tol: float = 1e-12) -> Verdict:
    """Does ``direction`` ('y' or 'x') evolve independently of the other process?

    For direction 'y' checks pr(Y in A | H_t^{XY}) = pr(Y in A | H_t^Y) for
    every time point t and every set A of Y-trajectories, which is the same
    as equality of the two conditional laws of the whole Y-trajectory.
    """
    if direction not in ("x", "y"):
        raise SpecError("direction must be 'x' or 'y'")
    times, rows = _bivariate_rows(spec, tol)
    if direction == "x":
        rows = [(y, x, p) for x, y, p in rows]
    # rows are (other, target, prob); target is the process that should evolve independently
    for i, t in enumerate(times):
        joint = defaultdict(lambda: defaultdict(int))   # (other[:i+1], target[:i+1]) -> target -> mass
        own = defaultdict(lambda: defaultdict(int))     # target[:i+1] -> target -> mass
        for o, y, p in rows:
            joint[(o[: i + 1], y[: i + 1])][y] += p
            own[y[: i + 1]][y] += p
        for (oh, yh), dist in joint.items():
            ref = own[yh]
            m_full = sum(dist.values())
            m_ref = sum(ref.values())
            for y in set(dist) | set(ref):
                a = dist.get(y, 0) / m_full
                b = ref.get(y, 0) / m_ref
                if not _close(a, b, tol):
                    other = next(((o2,) for (o2, y2), d2 in joint.items()
                                  if y2 == yh and o2 != oh
                                  and not _close(d2.get(y, 0) / sum(d2.values()), a, tol)), None)
                    return Verdict(False, "fails", {
                        "t": t, "event": {"target_trajectory": _plain(y)},
                        "history": {"other": _plain(oh), "target": _plain(yh), "pr": float(a)},
                        "other_history": None if other is None else {
                            "other": _plain(other[0]), "target": _plain(yh),
                            "pr": float(joint[(other[0], yh)].get(y, 0) / sum(joint[(other[0], yh)].values()))},
                        "pr_given_own_history": float(b)})
    return Verdict(True, "holds")


def independent(spec, tol: float = 1e-12) -> bool:
    """Are the X and Y trajectories independent?"""
    _, rows = _bivariate_rows(spec, tol)
    px, py, pxy = defaultdict(int), defaultdict(int), defaultdict(int)
    for x, y, p in rows:
        px[x] += p
        py[y] += p
        pxy[(x, y)] += p
    return all(_close(pxy.get((x, y), 0), px[x] * py[y], tol) for x in px for y in py)


def conditionally_independent_given_initial(spec, tol: float = 1e-12) -> bool:
    """Are X and Y independent given the initial pair (X_0, Y_0)?"""
    _, rows = _bivariate_rows(spec, tol)
    groups = defaultdict(list)
    for x, y, p in rows:
        groups[(x[0], y[0])].append((x, y, p))
    for grp in groups.values():
        tot = sum(p for *_, p in grp)
        px, py, pxy = defaultdict(int), defaultdict(int), defaultdict(int)
        for x, y, p in grp:
            px[x] += p / tot
            py[y] += p / tot
            pxy[(x, y)] += p / tot
        if not all(_close(pxy.get((x, y), 0), px[x] * py[y], tol) for x in px for y in py):
            return False
    return True


# -- desk library ----------------------------------------------------------------------

def _F(s):
    return Fraction(s)


def recoded_survival_spec() -> dict:
    """T uniform on {0.5, 1.5, 2.5} or beyond; Y(t) = 1 while alive, 0 after death."""
    times = [0, 1, 2, 3]
    trajs = []
    for death, p in [(0.5, "1/4"), (1.5, "1/4"), (2.5, "1/4"), (None, "1/4")]:
        d = math.inf if death is None else death
        trajs.append({"path": [1 if t < d else 0 for t in times], "death": death, "prob": p})
    return {"times": times, "trajectories": trajs}


def vital_pair_spec() -> dict:
    """(Y, Z): Y the re-coded survival process, Z an unrelated coin flipped at each time."""
    base = recoded_survival_spec()
    times = base["times"]
    trajs = []
    for tr in base["trajectories"]:
        for z in ([0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 1, 0]):
            trajs.append({"path": [[y, zz] for y, zz in zip(tr["path"], z)], "death": tr["death"],
                          "prob": str(Fraction(tr["prob"]) / 3)})
    return {"times": times, "trajectories": trajs}


def constant_process_spec() -> dict:
    """Y constant in time (a frailty class) that shifts the death-time law."""
    times = [0, 1, 2]
    trajs = [
        {"path": ["low"] * 3, "death": 0.5, "prob": "1/4"},
        {"path": ["low"] * 3, "death": None, "prob": "1/4"},
        {"path": ["high"] * 3, "death": 1.5, "prob": "1/4"},
        {"path": ["high"] * 3, "death": None, "prob": "1/4"},
    ]
    return {"times": times, "trajectories": trajs}


def independent_pair_spec() -> dict:
    """X and Y independent two-step Markov chains."""
    xs = [([0, 0, 1], "1/2"), ([0, 1, 1], "1/4"), ([1, 1, 0], "1/4")]
    ys = [([0, 1, 0], "1/3"), ([1, 1, 1], "2/3")]
    trajs = [{"x": x, "y": y, "prob": str(Fraction(px) * Fraction(py))} for x, px in xs for y, py in ys]
    return {"times": [0, 1, 2], "trajectories": trajs}


def lagged_copy_spec() -> dict:
    """X i.i.d. fair bits; Y(0) = 0 and Y(t) = X(t - 1)."""
    trajs = []
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                trajs.append({"x": [a, b, c], "y": [0, a, b], "prob": "1/8"})
    return {"times": [0, 1, 2], "trajectories": trajs}


def coupled_initial_spec() -> dict:
    """X(0) = Y(0) a fair bit; afterwards each process flips with its own independent noise.

    Each evolves independently of the other, yet they are dependent through
    the shared initial state; given that state they are independent.
    """
    flips_x = [((0, 0), "1/2"), ((1, 0), "1/4"), ((1, 1), "1/4")]
    flips_y = [((0, 0), "1/3"), ((0, 1), "2/3")]
    trajs = []
    for s in (0, 1):
        for fx, px in flips_x:
            for fy, py in flips_y:
                x = [s, s ^ fx[0], s ^ fx[0] ^ fx[1]]
                y = [s, s ^ fy[0], s ^ fy[0] ^ fy[1]]
                trajs.append({"x": x, "y": y, "prob": str(Fraction(1, 2) * Fraction(px) * Fraction(py))})
    return {"times": [0, 1, 2], "trajectories": trajs}


DESK_LIBRARY = {
    "recoded_survival": (recoded_survival_spec, {"vital": True}),
    "vital_pair": (vital_pair_spec, {"vital": True}),
    "constant_process": (constant_process_spec, {"vital": False}),
    "independent_pair": (independent_pair_spec, {"y_evolves": True, "x_evolves": True, "independent": True}),
    "lagged_copy": (lagged_copy_spec, {"y_evolves": False, "x_evolves": True}),
    "coupled_initial": (coupled_initial_spec, {"y_evolves": True, "x_evolves": True, "independent": False,
                                               "ci_given_initial": True}),
}


def run_desk_library() -> dict:
    """Checker verdicts for each library case next to the hand-derived truth."""
    out = {}
    for name, (make, truth) in DESK_LIBRARY.items():
        spec = make()
        got = {}
        if "vital" in truth:
            got["vital"] = vitality_check(spec).holds
        if "y_evolves" in truth:
            got["y_evolves"] = independent_evolution_check(spec, "y").holds
            got["x_evolves"] = independent_evolution_check(spec, "x").holds
        if "independent" in truth:
            got["independent"] = independent(spec)
        if "ci_given_initial" in truth:
            got["ci_given_initial"] = conditionally_independent_given_initial(spec)
        out[name] = {"truth": truth, "got": got, "match": got == truth}
    return out
