"""Online signature files, corpora on disk, and a seeded synthetic generator."""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erf

GENUINE = "genuine"
SKILLED_FORGERY = "skilled_forgery"
LABELS = (GENUINE, SKILLED_FORGERY)
_LABEL_PREFIX = {GENUINE: "g", SKILLED_FORGERY: "f"}
_CHANNELS = ("t", "x", "y", "p")
_SPLIT = re.compile(r"[,\s]+")


class SignatureParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"row {line}: {message}"
        super().__init__(message)


class SignatureValidationError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(eq=False)
class SignatureTrajectory:
    """Timestamped pen samples of one signature.

    ``pressure`` is optional; a zero entry marks a pen-up sample.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pressure: np.ndarray | None = None
    user_id: str = "u000"
    label: str = GENUINE
    session: int = 1

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=float)
        self.x = np.ascontiguousarray(self.x, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        if self.pressure is not None:
            self.pressure = np.ascontiguousarray(self.pressure, dtype=float)
        self.validate()

    def validate(self):
        n = self.t.size
        if n < 2:
            raise SignatureValidationError(f"a signature needs at least 2 samples, got {n}")
        chans = [self.t, self.x, self.y] + ([self.pressure] if self.pressure is not None else [])
        if any(c.ndim != 1 or c.size != n for c in chans):
            raise SignatureValidationError("channel lengths differ")
        if not all(np.all(np.isfinite(c)) for c in chans):
            raise SignatureValidationError("non-finite sample value")
        if np.any(np.diff(self.t) <= 0):
            k = int(np.argmax(np.diff(self.t) <= 0)) + 1
            raise SignatureValidationError(f"timestamps not strictly increasing at sample {k}")
        if self.pressure is not None and np.any(self.pressure < 0):
            raise SignatureValidationError("negative pressure")
        if self.label not in LABELS:
            raise SignatureValidationError(f"unknown label {self.label!r}")

    def __len__(self):
        return self.t.size

    @property
    def xy(self):
        return np.column_stack((self.x, self.y))

    @property
    def pen_down(self):
        if self.pressure is None:
            return np.ones(self.t.size, dtype=bool)
        return self.pressure > 0

    def allclose(self, other, atol=1e-9):
        if len(self) != len(other) or (self.pressure is None) != (other.pressure is None):
            return False
        meta = (self.user_id, self.label, self.session) == (other.user_id, other.label, other.session)
        pairs = [(self.t, other.t), (self.x, other.x), (self.y, other.y)]
        if self.pressure is not None:
            pairs.append((self.pressure, other.pressure))
        return meta and all(np.allclose(a, b, rtol=0, atol=atol) for a, b in pairs)


@dataclass
class UserSignatures:
    genuine: list = field(default_factory=list)
    forgeries: list = field(default_factory=list)


@dataclass
class Corpus:
    users: dict

    def __post_init__(self):
        for uid, entry in self.users.items():
            for sig in entry.genuine + entry.forgeries:
                if sig.user_id != uid:
                    raise SignatureValidationError(
                        f"signature of user {sig.user_id!r} filed under {uid!r}")

    def items(self):
        """Yield ``(key, signature)`` for every signature, in a stable order."""
        for uid in sorted(self.users):
            entry = self.users[uid]
            for n, sig in enumerate(entry.genuine, 1):
                yield signature_key(uid, GENUINE, n), sig
            for n, sig in enumerate(entry.forgeries, 1):
                yield signature_key(uid, SKILLED_FORGERY, n), sig

    def __len__(self):
        return sum(len(e.genuine) + len(e.forgeries) for e in self.users.values())

    def subset(self, user_ids):
        return Corpus({u: self.users[u] for u in user_ids})


def signature_key(user_id, label, n):
    return f"{user_id}/{_LABEL_PREFIX[label]}_{n:02d}"


def parse_key(key):
    user_id, name = key.split("/")
    prefix, n = name.split("_")
    label = GENUINE if prefix == "g" else SKILLED_FORGERY
    return user_id, label, int(n)


# --------------------------------------------------------------------------- files

def _normalise_column_spec(column_spec):
    if column_spec is None:
        return None
    if isinstance(column_spec, Mapping):
        spec = {int(k): v for k, v in column_spec.items()}
    else:
        spec = {i: name for i, name in enumerate(column_spec) if name}
    for name in spec.values():
        if name not in _CHANNELS:
            raise ConfigError(f"unknown column name {name!r}")
    if "x" not in spec.values() or "y" not in spec.values():
        raise ConfigError("column spec must map both x and y")
    return spec


def parse_signature_file(data, column_spec=None, sample_rate=100.0, user_id=None,
                         label=None, session=None):
    """Parse a plain-text signature.

    ``column_spec`` maps column indices to channel names (``t``, ``x``, ``y``,
    ``p``), or is a sequence of names by position. When omitted the
    ``#cols:`` header is used, falling back to ``t x y``. Without a ``t``
    column timestamps are synthesised at ``sample_rate`` Hz.
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    meta = {}
    header_cols = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, value = body.partition(":")
                key = key.strip().lower()
                if key == "cols":
                    header_cols = value.split()
                else:
                    meta[key] = value.strip()
            continue
        fields = [f for f in _SPLIT.split(line) if f]
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise SignatureParseError(f"non-numeric field in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise SignatureParseError(f"non-finite value in {line!r}", lineno)
        if rows and len(values) != len(rows[0][1]):
            raise SignatureParseError(
                f"expected {len(rows[0][1])} columns, found {len(values)}", lineno)
        rows.append((lineno, values))
    if not rows:
        raise SignatureParseError("no sample rows")

    spec = _normalise_column_spec(column_spec if column_spec is not None else header_cols)
    if spec is None:
        spec = {0: "t", 1: "x", 2: "y"} if len(rows[0][1]) >= 3 else {0: "x", 1: "y"}
    width = len(rows[0][1])
    if max(spec) >= width:
        raise SignatureParseError(f"column spec needs {max(spec) + 1} columns, rows have {width}",
                                  rows[0][0])
    table = np.array([v for _, v in rows])
    chans = {name: table[:, idx] for idx, name in spec.items()}
    if "t" in chans:
        t = chans["t"]
    else:
        if not sample_rate or sample_rate <= 0:
            raise ConfigError("sample_rate must be positive when no t column exists")
        t = np.arange(table.shape[0]) / float(sample_rate)

    return SignatureTrajectory(
        t=t, x=chans["x"], y=chans["y"], pressure=chans.get("p"),
        user_id=user_id if user_id is not None else meta.get("user", "u000"),
        label=label if label is not None else meta.get("label", GENUINE),
        session=int(session if session is not None else meta.get("session", 1)),
    )


def write_signature_file(sig):
    sig.validate()
    cols = ["t", "x", "y"] + (["p"] if sig.pressure is not None else [])
    out = [f"#cols: {' '.join(cols)}", f"# user: {sig.user_id}", f"# label: {sig.label}",
           f"# session: {sig.session}"]
    chans = [sig.t, sig.x, sig.y] + ([sig.pressure] if sig.pressure is not None else [])
    for row in zip(*chans):
        out.append(" ".join(repr(float(v)) for v in row))
    return ("\n".join(out) + "\n").encode("utf-8")


def write_corpus(corpus, root):
    root = Path(root)
    for key, sig in corpus.items():
        path = root / f"{key}.sig"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_signature_file(sig))


def read_corpus(root, column_spec=None, sample_rate=100.0):
    """Load ``<root>/<user_id>/{g|f}_<n>.sig`` into a :class:`Corpus`."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    users = {}
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        entry = UserSignatures()
        files = sorted(user_dir.glob("*.sig"), key=lambda p: (p.stem[0], int(p.stem.split("_")[1])))
        for path in files:
            label = GENUINE if path.stem.startswith("g") else SKILLED_FORGERY
            try:
                sig = parse_signature_file(path.read_bytes(), column_spec, sample_rate,
                                           user_id=user_dir.name, label=label)
            except SignatureParseError as exc:
                raise SignatureParseError(f"{path}: {exc}") from exc
            (entry.genuine if label == GENUINE else entry.forgeries).append(sig)
        users[user_dir.name] = entry
    if not users:
        raise SignatureValidationError(f"no users found under {root}")
    return Corpus(users)


# ----------------------------------------------------------------------- synthesis

@dataclass
class SynthesisConfig:
    seed: int = 0
    n_users: int = 20
    genuine_per_user: int = 10
    forgeries_per_user: int = 5
    strokes_per_signature: tuple = (4, 7)
    duration: tuple = (2.0, 3.5)
    sample_rate: float = 100.0
    genuine_noise: float = 0.04
    forgery_noise: float = 0.18
    pen_up_probability: float = 0.3

    def __post_init__(self):
        self.strokes_per_signature = tuple(int(v) for v in self.strokes_per_signature)
        self.duration = tuple(float(v) for v in self.duration)
        self.validate()

    def validate(self):
        if min(self.n_users, self.genuine_per_user, self.forgeries_per_user) < 1:
            raise ConfigError("all counts must be >= 1")
        lo, hi = self.strokes_per_signature
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad strokes_per_signature range {self.strokes_per_signature}")
        dlo, dhi = self.duration
        if dlo <= 0 or dhi < dlo or dhi == 0:
            raise ConfigError(f"degenerate duration range {self.duration}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be > 0")
        if not self.forgery_noise > self.genuine_noise >= 0:
            raise ConfigError("forgery_noise must exceed genuine_noise")
        if not 0 <= self.pen_up_probability <= 1:
            raise ConfigError("pen_up_probability must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthesis keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class _Stroke:
    t0: float
    mu: float
    sigma: float
    amplitude: float
    angle_start: float
    angle_end: float


def _user_model(rng, cfg):
    n = int(rng.integers(cfg.strokes_per_signature[0], cfg.strokes_per_signature[1] + 1))
    total = rng.uniform(*cfg.duration)
    strokes = []
    # stroke onsets spread over the signature so neighbours overlap
    onsets = np.sort(rng.uniform(0.0, 1.0, n)) * 0.75 * total
    onsets[0] = 0.0
    for k in range(n):
        sigma = rng.uniform(0.2, 0.4)
        peak_delay = rng.uniform(0.15, 0.3)
        mu = math.log(peak_delay) + sigma**2
        a0 = rng.uniform(0, 2 * np.pi)
        strokes.append(_Stroke(float(onsets[k]), mu, sigma, rng.uniform(15.0, 45.0), a0,
                               a0 + rng.uniform(-2.0, 2.0)))
    pen_up = None
    if n > 2 and rng.uniform() < cfg.pen_up_probability:
        k = int(rng.integers(1, n - 1))
        pen_up = k
    return strokes, pen_up


def _jitter(rng, strokes, noise):
    out = []
    stretch = 1.0 + rng.normal(0, noise * 0.5)
    for s in strokes:
        out.append(_Stroke(
            t0=max(0.0, s.t0 * stretch + rng.normal(0, noise * 0.2)),
            mu=s.mu + math.log(abs(stretch)) + rng.normal(0, noise * 0.5),
            sigma=s.sigma * abs(1.0 + rng.normal(0, noise * 0.5)),
            amplitude=s.amplitude * abs(1.0 + rng.normal(0, noise)),
            angle_start=s.angle_start + rng.normal(0, noise * 1.5),
            angle_end=s.angle_end + rng.normal(0, noise * 1.5),
        ))
    out[0].t0 = 0.0
    return out


def _render(strokes, pen_up, sample_rate):
    t_end = max(s.t0 + math.exp(s.mu + 3.0 * s.sigma) for s in strokes)
    n = int(math.floor(t_end * sample_rate)) + 1
    t = np.arange(n) / sample_rate
    vx = np.zeros(n)
    vy = np.zeros(n)
    for s in strokes:
        tau = t - s.t0
        pos = tau > 0
        lt = np.log(tau[pos])
        z = (lt - s.mu) / s.sigma
        speed = s.amplitude / (s.sigma * math.sqrt(2 * math.pi) * tau[pos]) * np.exp(-0.5 * z * z)
        phi = s.angle_start + (s.angle_end - s.angle_start) * 0.5 * (1.0 + erf(z / math.sqrt(2)))
        vx[pos] += speed * np.cos(phi)
        vy[pos] += speed * np.sin(phi)
    dt = 1.0 / sample_rate
    x = np.concatenate(([0.0], np.cumsum(0.5 * (vx[1:] + vx[:-1]) * dt)))
    y = np.concatenate(([0.0], np.cumsum(0.5 * (vy[1:] + vy[:-1]) * dt)))
    speed = np.hypot(vx, vy)
    pressure = 0.4 + 0.6 * (1.0 - speed / max(speed.max(), 1e-12))
    if pen_up is not None:
        # lift around the valley between the chosen stroke and the next one
        a = strokes[pen_up].t0 + math.exp(strokes[pen_up].mu)
        b = strokes[pen_up + 1].t0 + math.exp(strokes[pen_up + 1].mu)
        lo, hi = sorted((a, b))
        mid, half = 0.5 * (lo + hi), 0.15 * (hi - lo)
        pressure[(t >= mid - half) & (t <= mid + half)] = 0.0
    return t, x, y, np.round(pressure, 6)


def generate_corpus(cfg):
    """Deterministic synthetic corpus: a pure function of ``cfg``.

    Each user owns a set of lognormal-speed strokes; genuine samples jitter the
    parameters by ``genuine_noise`` and skilled forgeries by ``forgery_noise``.
    """
    cfg.validate()
    users = {}
    width = max(3, len(str(cfg.n_users)))
    for u in range(cfg.n_users):
        uid = f"u{u + 1:0{width}d}"
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, u]))
        strokes, pen_up = _user_model(rng, cfg)
        entry = UserSignatures()
        for n in range(cfg.genuine_per_user):
            t, x, y, p = _render(_jitter(rng, strokes, cfg.genuine_noise), pen_up, cfg.sample_rate)
            entry.genuine.append(SignatureTrajectory(t, x, y, p, uid, GENUINE, 1 + (n >= cfg.genuine_per_user // 2)))
        for n in range(cfg.forgeries_per_user):
            t, x, y, p = _render(_jitter(rng, strokes, cfg.forgery_noise), pen_up, cfg.sample_rate)
            entry.forgeries.append(SignatureTrajectory(t, x, y, p, uid, SKILLED_FORGERY, 1))
        users[uid] = entry
    return Corpus(users)
