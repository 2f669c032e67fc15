"""Synthetic fixtures.

Two kinds: small numeric fixtures used by the property tests, and CSV
generators that mimic the column layout of NSL-KDD and TON_IoT (Windows 10)
so the full pipeline can be exercised without the real datasets.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import builtin_schema


def gaussian_normals(n: int, dim: int = 20, seed: int = 0, mean: float = 0.5, sd: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(mean, sd, size=(n, dim)), 0.0, 1.0)


def shifted_anomalies(n: int, dim: int = 20, seed: int = 1, mean: float = 0.5, sd: float = 0.1,
                      shift_sigmas: float = 3.0) -> np.ndarray:
    """Same Gaussian as :func:`gaussian_normals`, mean shifted by ``shift_sigmas`` sd on half the dims."""
    rng = np.random.default_rng(seed)
    X = rng.normal(mean, sd, size=(n, dim))
    X[:, : dim // 2] += shift_sigmas * sd
    return np.clip(X, 0.0, 1.0)


def contaminated_fixture(n_normal: int = 1000, n_anomaly: int = 100, dim: int = 20, seed: int = 0,
                         sd: float = 0.03) -> tuple[np.ndarray, np.ndarray]:
    """Tight Gaussian normals plus anomalies spread uniformly over the unit cube."""
    rng = np.random.default_rng(seed)
    normals = np.clip(rng.normal(0.5, sd, size=(n_normal, dim)), 0, 1)
    anomalies = rng.uniform(0, 1, size=(n_anomaly, dim))
    X = np.vstack([normals, anomalies])
    y = np.r_[np.zeros(n_normal, np.int64), np.ones(n_anomaly, np.int64)]
    perm = rng.permutation(len(y))
    return X[perm], y[perm]


def mixed_fixture(n_normal: int, n_anomaly: int, dim: int = 20, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian normals with a 3-sigma half-shifted anomaly cluster mixed in."""
    normals = gaussian_normals(n_normal, dim, seed=seed)
    anomalies = shifted_anomalies(n_anomaly, dim, seed=seed + 10_000)
    X = np.vstack([normals, anomalies])
    y = np.r_[np.zeros(n_normal, np.int64), np.ones(n_anomaly, np.int64)]
    perm = np.random.default_rng(seed + 1).permutation(len(y))
    return X[perm], y[perm]


# ---------------------------------------------------------------------------
# dataset look-alikes
# ---------------------------------------------------------------------------

_NSL_ATTACKS = {
    # name: (category, relative frequency among anomalies)
    "neptune": ("DoS", 0.40), "smurf": ("DoS", 0.06), "back": ("DoS", 0.03), "teardrop": ("DoS", 0.02),
    "satan": ("Probe", 0.05), "ipsweep": ("Probe", 0.05), "portsweep": ("Probe", 0.04), "nmap": ("Probe", 0.02),
    "guess_passwd": ("R2L", 0.03), "warezclient": ("R2L", 0.02), "warezmaster": ("R2L", 0.01),
    "buffer_overflow": ("U2R", 0.003), "rootkit": ("U2R", 0.002),
}
_NSL_CAT_VALUES = {
    "protocol_type": ["tcp", "udp", "icmp"],
    "service": ["http", "private", "domain_u", "smtp", "ftp_data", "ecr_i", "eco_i", "telnet", "ftp", "other",
                "finger", "imap4", "pop_3", "urp_i", "auth"],
    "flag": ["SF", "S0", "REJ", "RSTR", "RSTO", "SH", "S1", "S2", "S3", "OTH"],
}
# columns holding byte or packet counts, scaled up to look like raw counters
_NSL_COUNTERS = {"duration": 5000, "src_bytes": 50000, "dst_bytes": 80000, "count": 511, "srv_count": 511,
                 "dst_host_count": 255, "dst_host_srv_count": 255, "hot": 30, "num_compromised": 20}


def _profile(rng: np.random.Generator, dim: int, spread: float) -> tuple[np.ndarray, np.ndarray]:
    mean = rng.uniform(0.2, 0.8, size=dim)
    sd = rng.uniform(0.3, 1.0, size=dim) * spread
    return mean, sd


def _signature(rng: np.random.Generator, base: tuple[np.ndarray, np.ndarray], n_sig: int,
               sig_sd: float = 0.03) -> tuple[np.ndarray, np.ndarray]:
    """A normal profile with ``n_sig`` features pushed to the far end of [0, 1]."""
    mean, sd = base[0].copy(), base[1].copy()
    sig = rng.choice(len(mean), size=n_sig, replace=False)
    mean[sig] = np.where(mean[sig] < 0.5, rng.uniform(0.9, 1.0, n_sig), rng.uniform(0.0, 0.1, n_sig))
    sd[sig] = sig_sd
    return mean, sd


def _cat_prefs(rng: np.random.Generator, conc: float) -> dict[str, np.ndarray]:
    return {k: rng.dirichlet(np.full(len(v), conc)) for k, v in _NSL_CAT_VALUES.items()}


def write_nslkdd_like(path: str | Path, n_normal: int, n_anomaly: int, seed: int = 0,
                      n_normal_modes: int = 4) -> Path:
    """Headerless CSV in the NSL-KDD layout (41 features, label, difficulty).

    Normal traffic is a mixture of broad profiles; each attack type copies one
    normal profile and pins a handful of signature features near 0 or 1.
    """
    schema = builtin_schema("nsl_kdd")
    rng = np.random.default_rng(seed)
    numeric = schema.names("numeric")
    dim = len(numeric)
    structure = np.random.default_rng(12345)  # fixed class geometry across seeds
    normal_modes = [(_profile(structure, dim, 0.12), _cat_prefs(structure, 1.0)) for _ in range(n_normal_modes)]
    attack_profiles = {}
    for a in _NSL_ATTACKS:
        base = normal_modes[structure.integers(n_normal_modes)][0]
        attack_profiles[a] = (_signature(structure, base, int(structure.integers(4, 10))), _cat_prefs(structure, 0.2))

    names = list(_NSL_ATTACKS)
    freq = np.array([_NSL_ATTACKS[a][1] for a in names])
    attack_draw = rng.choice(len(names), size=n_anomaly, p=freq / freq.sum())
    labels = ["normal"] * n_normal + [names[i] for i in attack_draw]
    mode_draw = rng.integers(0, n_normal_modes, size=n_normal)

    rows = []
    for i, lab in enumerate(labels):
        if lab == "normal":
            (mean, sd), prefs = normal_modes[mode_draw[i]]
        else:
            (mean, sd), prefs = attack_profiles[lab]
        vals = np.clip(rng.normal(mean, sd), 0.0, 1.0)
        rec = {}
        for j, name in enumerate(numeric):
            v = vals[j]
            if name in _NSL_COUNTERS:
                rec[name] = str(int(round(v * _NSL_COUNTERS[name])))
            elif name in ("land", "logged_in", "root_shell", "is_host_login", "is_guest_login", "su_attempted"):
                rec[name] = "1" if v > 0.5 else "0"
            else:
                rec[name] = f"{v:.2f}"
        for k, choices in _NSL_CAT_VALUES.items():
            rec[k] = choices[rng.choice(len(choices), p=prefs[k])]
        rec["label"] = lab
        rec["difficulty"] = str(int(rng.integers(1, 22)))
        rows.append(",".join(rec[c.name] for c in schema.columns))
    order = rng.permutation(len(rows))
    path = Path(path)
    path.write_text("\n".join(rows[i] for i in order) + "\n", encoding="utf-8")
    return path


TON_TYPES = {"ddos": 3775, "dos": 375, "injection": 475, "xss": 750, "password": 2625, "scanning": 325, "mitm": 57}


def write_toniot_like(path: str | Path, n_normal: int, type_counts: dict[str, int] | None = None,
                      seed: int = 0, n_features: int = 124) -> Path:
    """CSV with a header in the TON_IoT Windows 10 layout (ts, counters, label, type)."""
    rng = np.random.default_rng(seed)
    structure = np.random.default_rng(54321)
    type_counts = dict(TON_TYPES if type_counts is None else type_counts)
    cols = [f"counter_{j:03d}" for j in range(n_features)]
    classes = {"normal": _profile(structure, n_features, 0.08)}
    for t in type_counts:
        classes[t] = _profile(structure, n_features, 0.08)
    scale = structure.choice([1.0, 100.0, 1e4], size=n_features)

    lines = [",".join(["ts", *cols, "label", "type"])]
    plan = [("normal", n_normal)] + list(type_counts.items())
    body = []
    ts = 1_554_000_000
    for t, count in plan:
        mean, sd = classes[t]
        X = np.clip(rng.normal(mean, sd, size=(count, n_features)), 0, 1) * scale
        for row in X:
            ts += int(rng.integers(1, 5))
            body.append(",".join([str(ts), *(f"{v:.4g}" for v in row), "0" if t == "normal" else "1", t]))
    order = rng.permutation(len(body))
    lines += [body[i] for i in order]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
