"""Verification protocols, EER and DET computation, multi-run aggregation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .signature_io import GENUINE, SKILLED_FORGERY, ConfigError, parse_key
from .verifier import build_feature_matrix, reference_stats, score_questioned

RANDOM_FORGERY = "random_forgery"
MODES = (RANDOM_FORGERY, SKILLED_FORGERY)
DET_GRID_POINTS = 50
DET_GRID_MIN = 1e-3


class ProtocolError(ValueError):
    pass


@dataclass
class ProtocolConfig:
    n_refs: int = 5
    repeats: int = 10
    seed: int = 0
    mode: str = RANDOM_FORGERY
    feature_group: str = "omega"
    feature_source: str = "simulated"

    def __post_init__(self):
        aliases = {"random": RANDOM_FORGERY, "skilled": SKILLED_FORGERY}
        self.mode = aliases.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.n_refs < 2:
            raise ConfigError("n_refs must be >= 2")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.feature_group not in ("theta", "omega", "tau"):
            raise ConfigError(f"unknown feature group {self.feature_group!r}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown protocol option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunScores:
    genuine: np.ndarray
    impostor: np.ndarray
    # (target user, questioned key, label, VerificationScore)
    rows: list = field(default_factory=list, repr=False)


def _by_user(keys):
    users = {}
    for key in sorted(keys):
        user, label, _ = parse_key(key)
        users.setdefault(user, {GENUINE: [], SKILLED_FORGERY: []})[label].append(key)
    return users


def run_protocol(features, config):
    """Genuine and impostor scores for each repeat of the protocol.

    Parameters
    ----------
    features : dict
        Signature key to JointFeatureSeries.
    config : ProtocolConfig

    Lower scores mean more genuine. Random-forgery runs score with the
    path-normalised distance, skilled-forgery runs with the
    reference-normalised one.
    """
    users = _by_user(features)
    for user, groups in users.items():
        if len(groups[GENUINE]) <= config.n_refs:
            raise ProtocolError(f"user {user} has {len(groups[GENUINE])} genuine signatures; "
                                f"need more than {config.n_refs}")
        if config.mode == SKILLED_FORGERY and not groups[SKILLED_FORGERY]:
            raise ProtocolError(f"user {user} has no skilled forgeries")
    if config.mode == RANDOM_FORGERY and len(users) < 2:
        raise ProtocolError("random-forgery mode needs at least two users")
    mats = {key: build_feature_matrix(features[key], config.feature_group)
            for key in sorted(features)}
    skilled = config.mode == SKILLED_FORGERY
    runs = []
    for run_seq in np.random.SeedSequence(config.seed).spawn(config.repeats):
        rng = np.random.default_rng(run_seq)
        gen, imp, rows = [], [], []
        for user in sorted(users):
            genuine = users[user][GENUINE]
            pick = np.sort(rng.choice(len(genuine), config.n_refs, replace=False))
            ref_keys = [genuine[i] for i in pick]
            refs = [mats[k] for k in ref_keys]
            tests = [k for k in genuine if k not in ref_keys]
            if skilled:
                stats = reference_stats(refs)
                impostors = users[user][SKILLED_FORGERY]
            else:
                stats = _NO_STATS
                impostors = []
                for other in sorted(users):
                    if other != user:
                        pool = users[other][GENUINE]
                        impostors.append(pool[rng.integers(len(pool))])
            for key, bucket in [(k, gen) for k in tests] + [(k, imp) for k in impostors]:
                s = score_questioned(mats[key], refs, stats)
                bucket.append(s.s_hat_2 if skilled else s.s_hat_1)
                rows.append((user, key, GENUINE if bucket is gen else "impostor", s))
        runs.append(RunScores(np.array(gen), np.array(imp), rows))
    return runs


class _UnitStats:
    # random-forgery scoring never uses mu_R; skip the pairwise reference DTWs
    mu_R = float("nan")


_NO_STATS = _UnitStats()


def _check_scores(genuine, impostor):
    g = np.asarray(genuine, dtype=float)
    i = np.asarray(impostor, dtype=float)
    if g.size == 0 or i.size == 0:
        raise ValueError("genuine and impostor score lists must be non-empty")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
        raise ValueError("scores must be finite")
    return g, i


def det_curve(genuine, impostor):
    """``(K, 2)`` array of (FAR, FRR), one point per distinct threshold plus (0, 1).

    FAR(t) is the share of impostor scores <= t, FRR(t) the share of genuine
    scores > t.
    """
    g, i = _check_scores(genuine, impostor)
    thresholds = np.unique(np.concatenate((g, i)))
    gs, is_ = np.sort(g), np.sort(i)
    far = np.searchsorted(is_, thresholds, side="right") / is_.size
    frr = 1.0 - np.searchsorted(gs, thresholds, side="right") / gs.size
    return np.vstack(([0.0, 1.0], np.column_stack((far, frr))))


def eer_from_det(det):
    far, frr = det[:, 0], det[:, 1]
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(far[k])
    f0, r0, f1, r1 = far[k - 1], frr[k - 1], far[k], frr[k]
    s = (r0 - f0) / ((f1 - f0) - (r1 - r0))
    return float(f0 + s * (f1 - f0))


def compute_eer(genuine, impostor):
    """Equal error rate at the FAR/FRR crossing of the DET polyline."""
    return eer_from_det(det_curve(genuine, impostor))


def det_grid(n=DET_GRID_POINTS, lo=DET_GRID_MIN):
    return np.geomspace(lo, 1.0, n)


def interpolate_det(det, grid):
    """FRR of a DET curve at the given FAR values (best FRR per FAR step)."""
    far, inv = np.unique(det[:, 0], return_inverse=True)
    frr = np.full(far.size, np.inf)
    np.minimum.at(frr, inv, det[:, 1])
    return np.interp(grid, far, frr)


@dataclass
class EvaluationReport:
    eers: list
    eer_mean: float
    eer_std: float
    det_far: np.ndarray
    det_frr: np.ndarray
    run_seeds: list
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "eers": self.eers, "eer_mean": self.eer_mean,
                "eer_std": self.eer_std, "run_seeds": self.run_seeds}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def det_csv(self):
        lines = ["far,frr"] + [f"{a!r},{b!r}" for a, b in zip(self.det_far.tolist(),
                                                              self.det_frr.tolist())]
        return "\n".join(lines) + "\n"


def aggregate_runs(runs, config=None):
    """Per-run EERs, mean and sample std, and the DET averaged on a geometric FAR grid."""
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one run")
    pairs = [(r.genuine, r.impostor) if isinstance(r, RunScores) else r for r in runs]
    dets = [det_curve(g, i) for g, i in pairs]
    eers = [eer_from_det(d) for d in dets]
    grid = det_grid()
    frr = np.mean([interpolate_det(d, grid) for d in dets], axis=0)
    std = float(np.std(eers, ddof=1)) if len(eers) > 1 else 0.0
    seeds = []
    if config is not None:
        seeds = [int(s.generate_state(1)[0])
                 for s in np.random.SeedSequence(config.seed).spawn(len(runs))]
    return EvaluationReport([float(e) for e in eers], float(np.mean(eers)), std, grid, frr,
                            seeds, config.__dict__.copy() if config is not None else {})


def evaluate(features, config):
    return aggregate_runs(run_protocol(features, config), config)
