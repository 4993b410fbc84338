"""Two exchange-coupled singlet-triplet qubits.

Four spins in a linear chain, restricted to the six states with zero total
spin projection.  Qubit 1 is encoded in spins 1-2 and qubit 2 in spins
3-4 (``|up,down> = |0>``, ``|down,up> = |1>``).  Exchange between
neighbouring spins is set by detuning voltages through an exponential law;
programmed AWG samples are filtered by an impulse response before
piecewise-constant propagation.

Units: time in ns, energies and couplings in rad/ns, detunings in mV.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .calibration import CalibrationOptions, levenberg_marquardt
from .linalg import avg_gate_fidelity, expm_hermitian, leakage
from .gatesets import CNOT, two_qubit_gate_set

__all__ = [
    "SECTOR_STATES",
    "COMPUTATIONAL",
    "LEAKAGE",
    "BOHR_MAGNETON_RAD",
    "field_to_rate",
    "DeviceConfig",
    "PulseBlock",
    "default_kernel",
    "exchange_from_detuning",
    "convolve_impulse_response",
    "shaped_waveform",
    "hamiltonian",
    "full_space_hamiltonian",
    "zeeman_hamiltonian",
    "evolve",
    "effective_gate",
    "gate_metrics",
    "measurement_operators",
    "initial_state",
    "embed",
    "pre_optimize_gate",
    "perturb_pulses",
    "save_pulses",
    "load_pulses",
    "save_kernel",
    "load_kernel",
    "STQubitBackend",
]

# spin strings, "u" = up (sigma_z = +1), spin 1 first
SECTOR_STATES = ("dduu", "udud", "uddu", "duud", "dudu", "uudd")
COMPUTATIONAL = (1, 2, 3, 4)
LEAKAGE = (0, 5)

# mu_B / hbar in rad / (ns T)
BOHR_MAGNETON_RAD = 87.9410
_FREE = 0
_FIXED = 1
_OFF = 2


def field_to_rate(field_tesla: float, g_factor: float = 0.44) -> float:
    """Zeeman splitting ``|g| mu_B B / hbar`` in rad/ns."""
    return abs(g_factor) * BOHR_MAGNETON_RAD * field_tesla


def default_kernel(rate: float, tau: float = 1.0, sigma: float = 0.5) -> np.ndarray:
    """Single-pole low pass (time constant ``tau``) composed with a Gaussian.

    Sampled at ``rate`` samples per ns, normalised to unit sum.
    """
    dt = 1.0 / rate
    t_exp = np.arange(0, 8 * tau, dt)
    expo = np.exp(-t_exp / tau)
    t_g = np.arange(-4 * sigma, 4 * sigma + dt / 2, dt)
    gauss = np.exp(-0.5 * (t_g / sigma) ** 2)
    k = np.convolve(expo, gauss)
    return k / k.sum()


@dataclass(frozen=True)
class DeviceConfig:
    eps0: float = 0.272  # mV
    J0: float = 1.0  # rad/ns
    dB: tuple = (1.0, 7.0, -1.0)  # B1-B2, B2-B3, B3-B4 in rad/ns
    sample_rate: float = 1.0  # GS/s
    subsamples: int = 10
    bounds: tuple = (-5.4, 2.4)  # units of eps0
    kernel: tuple | None = None  # sampled at sample_rate * subsamples; None = default_kernel
    sigma_eps: float = 8e-3  # mV, quasistatic
    white_psd: float = 4e-20  # V^2/Hz, one-sided
    sigma_dB: float = field_to_rate(0.3e-3)  # rad/ns, quasistatic per gradient
    settle: int = 0  # extra sub-samples propagated after the pulse

    def __post_init__(self):
        if self.J0 <= 0 or self.eps0 <= 0:
            raise ValueError("J0 and eps0 must be positive")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("detuning bounds must satisfy lower < upper")
        if self.subsamples < 1 or self.sample_rate <= 0:
            raise ValueError("sample rate and sub-sampling must be positive")
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=float)
            if k.size == 0 or not np.all(np.isfinite(k)) or abs(k.sum() - 1) > 1e-9:
                raise ValueError("kernel must be finite with unit sum")

    @property
    def dt(self) -> float:
        """Propagation step in ns."""
        return 1.0 / (self.sample_rate * self.subsamples)

    @property
    def eps_bounds(self) -> tuple[float, float]:
        return self.bounds[0] * self.eps0, self.bounds[1] * self.eps0

    def kernel_array(self) -> np.ndarray:
        if self.kernel is None:
            return _cached_default_kernel(self.sample_rate * self.subsamples)
        return np.asarray(self.kernel, dtype=float)

    @property
    def white_sigma(self) -> float:
        """Per-sub-sample standard deviation of white detuning noise in mV."""
        rate_hz = self.sample_rate * self.subsamples * 1e9
        return np.sqrt(self.white_psd * rate_hz / 2) * 1e3

    def digest(self) -> str:
        d = asdict(self)
        d["kernel"] = None if self.kernel is None else [float(x) for x in self.kernel]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@lru_cache(maxsize=8)
def _cached_default_kernel(rate: float) -> np.ndarray:
    k = default_kernel(rate)
    k.setflags(write=False)
    return k


@dataclass
class PulseBlock:
    """Detuning samples of one gate, shape ``(3, n_seg)`` in mV.

    ``mode[j]`` says whether channel ``j`` (pairs 1-2, 2-3, 3-4) is free
    (calibrated), fixed at its samples, or switched off (no exchange).
    """

    samples: np.ndarray
    mode: tuple = (_FREE, _FREE, _FREE)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != 3:
            raise ValueError("samples must have shape (3, n_seg)")
        self.mode = tuple(int(m) for m in self.mode)

    @property
    def n_seg(self) -> int:
        return self.samples.shape[1]

    @property
    def free(self) -> np.ndarray:
        return np.array([m == _FREE for m in self.mode])

    @property
    def n_params(self) -> int:
        return int(self.free.sum()) * self.n_seg

    def params(self) -> np.ndarray:
        return self.samples[self.free].ravel().copy()

    def with_params(self, q) -> "PulseBlock":
        s = self.samples.copy()
        s[self.free] = np.asarray(q, dtype=float).reshape(-1, self.n_seg)
        return PulseBlock(s, self.mode)

    @classmethod
    def two_qubit(cls, samples) -> "PulseBlock":
        return cls(samples, (_FREE, _FREE, _FREE))

    @classmethod
    def single_qubit(cls, qubit: int, samples_active, idle_value: float) -> "PulseBlock":
        """Pulse for one qubit; the other qubit idles, the middle pair is off."""
        n = len(samples_active)
        s = np.full((3, n), idle_value, dtype=float)
        s[1] = 0.0
        active = 0 if qubit == 0 else 2
        s[active] = samples_active
        mode = [_FIXED, _OFF, _FIXED]
        mode[active] = _FREE
        return cls(s, tuple(mode))


def exchange_from_detuning(eps, config: DeviceConfig | None = None):
    config = config or DeviceConfig()
    return config.J0 * np.exp(np.asarray(eps, dtype=float) / config.eps0)


def convolve_impulse_response(samples, kernel) -> np.ndarray:
    """Causal filter of ``samples`` with edge padding by the boundary values.

    Output length is ``len(samples) + len(kernel) - 1``; the tail settles to
    ``samples[-1] * sum(kernel)``.
    """
    x = np.asarray(samples, dtype=float)
    h = np.asarray(kernel, dtype=float)
    if h.size == 0:
        raise ValueError("empty kernel")
    if x.size == 0:
        return np.zeros(0)
    m = len(h)
    padded = np.concatenate([np.full(m - 1, x[0]), x, np.full(m - 1, x[-1])])
    full = np.convolve(padded, h, mode="full")
    return full[m - 1 : m - 1 + len(x) + m - 1]


def shaped_waveform(block: PulseBlock, config: DeviceConfig) -> np.ndarray:
    """Filtered detuning per channel on the propagation grid, shape ``(3, n)``."""
    lo, hi = config.eps_bounds
    active = [j for j in range(3) if block.mode[j] != _OFF]
    if np.any(block.samples[active] < lo - 1e-12) or np.any(block.samples[active] > hi + 1e-12):
        raise ValueError("pulse samples outside the detuning bounds")
    n = block.n_seg * config.subsamples + config.settle
    up = np.repeat(block.samples, config.subsamples, axis=1)
    k = config.kernel_array()
    out = np.empty((3, n))
    for j in range(3):
        y = convolve_impulse_response(up[j], k)
        if len(y) < n:
            y = np.pad(y, (0, n - len(y)), mode="edge")
        out[j] = y[:n]
    return out


def _spin_basis_indices() -> list[int]:
    out = []
    for s in SECTOR_STATES:
        idx = 0
        for ch in s:
            idx = 2 * idx + (0 if ch == "u" else 1)
        out.append(idx)
    return out


@lru_cache(maxsize=1)
def _sector_operators():
    """SWAP_j and sigma_z(j) restricted to the sector, in the fixed order."""
    states = SECTOR_STATES
    pos = {s: n for n, s in enumerate(states)}
    swaps = np.zeros((3, 6, 6))
    for j in range(3):
        for n, s in enumerate(states):
            t = list(s)
            t[j], t[j + 1] = t[j + 1], t[j]
            swaps[j, pos["".join(t)], n] = 1
    z = np.array([[1.0 if s[j] == "u" else -1.0 for s in states] for j in range(4)])
    swaps.setflags(write=False)
    z.setflags(write=False)
    return swaps, z


def _fields(dB, B=None) -> np.ndarray:
    if B is not None:
        return np.asarray(B, dtype=float)
    d12, d23, d34 = dB
    # B_j with B1 - B2 = d12 etc. and sum B_j = 0
    rel = np.array([0.0, -d12, -d12 - d23, -d12 - d23 - d34])
    return rel - rel.mean()


def hamiltonian(J, dB=(1.0, 7.0, -1.0), B=None) -> np.ndarray:
    """Sector Hamiltonian for couplings ``J = (J12, J23, J34)``.

    ``J`` may carry leading batch axes, ``J[..., 3]``.  Explicit fields
    ``B`` override the gradients ``dB``.
    """
    J = np.asarray(J, dtype=float)
    swaps, z = _sector_operators()
    ex = np.einsum("...j,jab->...ab", J, 2 * swaps - np.eye(6)) / 4
    zee = np.diag(0.5 * _fields(dB, B) @ z)
    return ex + zee


def zeeman_hamiltonian(dB=(1.0, 7.0, -1.0), B=None) -> np.ndarray:
    return hamiltonian(np.zeros(3), dB, B)


def full_space_hamiltonian(J, dB=(1.0, 7.0, -1.0), B=None) -> np.ndarray:
    """The same Hamiltonian on all 16 spin states, built from Pauli tensors."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0]).astype(complex)
    I2 = np.eye(2)

    def op(single, j):
        mats = [I2] * 4
        mats[j] = single
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    H = np.zeros((16, 16), dtype=complex)
    for j in range(3):
        for s in (sx, sy, sz):
            H += J[j] / 4 * op(s, j) @ op(s, j + 1)
    for j, b in enumerate(_fields(dB, B)):
        H += 0.5 * b * op(sz, j)
    idx = _spin_basis_indices()
    return H, idx


def _couplings(block: PulseBlock, config: DeviceConfig, eps=None) -> np.ndarray:
    eps = shaped_waveform(block, config) if eps is None else eps
    J = exchange_from_detuning(eps, config)
    for j in range(3):
        if block.mode[j] == _OFF:
            J[j] = 0.0
    return J.T


def evolve(block: PulseBlock, config: DeviceConfig, dB=None, eps=None, steps_per_sample: int = 1) -> np.ndarray:
    """Lab-frame propagator of one pulse block.

    ``eps`` replaces the filtered waveform (used to inject noise);
    ``steps_per_sample`` splits every propagation sample into equal steps.
    """
    dB = config.dB if dB is None else dB
    J = _couplings(block, config, eps)
    H = hamiltonian(J, dB)
    steps = expm_hermitian(H, config.dt / steps_per_sample)
    U = np.eye(6, dtype=complex)
    for S in steps:
        for _ in range(steps_per_sample):
            U = S @ U
    return U


def duration(block: PulseBlock, config: DeviceConfig) -> float:
    return (block.n_seg * config.subsamples + config.settle) * config.dt


def effective_gate(block: PulseBlock, config: DeviceConfig, U_lab=None) -> np.ndarray:
    """Propagator in the frame co-rotating with the nominal Zeeman gradients."""
    U_lab = evolve(block, config) if U_lab is None else U_lab
    F = expm_hermitian(zeeman_hamiltonian(config.dB), duration(block, config))
    return F.conj().T @ U_lab


def measurement_operators() -> tuple[np.ndarray, np.ndarray]:
    """Readout of qubit 1 and of qubit 2; leakage states read as -1."""
    z = np.array([1.0, -1.0])
    M1 = np.diag(np.concatenate([[-1.0], np.kron(z, [1.0, 1.0]), [-1.0]]))
    M2 = np.diag(np.concatenate([[-1.0], np.kron([1.0, 1.0], z), [-1.0]]))
    return M1.astype(complex), M2.astype(complex)


def initial_state() -> np.ndarray:
    rho = np.zeros((6, 6), dtype=complex)
    rho[1, 1] = 1.0
    return rho


def embed(U4: np.ndarray) -> np.ndarray:
    """Place a two-qubit unitary on the computational block, identity elsewhere."""
    U = np.eye(6, dtype=complex)
    idx = np.array(COMPUTATIONAL)
    U[idx[:, None], idx[None, :]] = U4
    return U


def _metrics(U_eff, target) -> tuple[float, float]:
    return 1 - avg_gate_fidelity(U_eff, target, COMPUTATIONAL), leakage(U_eff, COMPUTATIONAL)


def gate_metrics(block: PulseBlock, target: np.ndarray, noise_draws: int, config: DeviceConfig, seed: int = 0):
    """Mean infidelity and leakage over quasistatic and white noise draws.

    Returns ``(infidelity, leakage, standard error of the infidelity)``.
    """
    eps0 = shaped_waveform(block, config)
    noiseless = (
        config.sigma_eps == 0 and config.white_psd == 0 and config.sigma_dB == 0
    ) or noise_draws == 0
    if noiseless:
        inf, leak = _metrics(effective_gate(block, config, evolve(block, config, eps=eps0)), target)
        return inf, leak, 0.0
    infs, leaks = [], []
    for n in range(noise_draws):
        rng = np.random.default_rng([seed, n])
        eps = eps0 + rng.normal(0, config.sigma_eps, (3, 1)) + rng.normal(0, config.white_sigma, eps0.shape)
        dB = np.asarray(config.dB) + rng.normal(0, config.sigma_dB, 3)
        U = evolve(block, config, dB=dB, eps=eps)
        i, l = _metrics(effective_gate(block, config, U), target)
        infs.append(i)
        leaks.append(l)
    infs = np.array(infs)
    return float(infs.mean()), float(np.mean(leaks)), float(infs.std(ddof=1) / np.sqrt(len(infs)) if len(infs) > 1 else 0.0)


def _target_residual(block: PulseBlock, target: np.ndarray, config: DeviceConfig):
    idx = np.array(COMPUTATIONAL)
    lk = np.array(LEAKAGE)

    def fun(q):
        U = effective_gate(block.with_params(q), config)
        Vc = U[idx[:, None], idx[None, :]]
        ov = np.trace(target.conj().T @ Vc)
        phase = ov / abs(ov) if abs(ov) > 1e-12 else 1.0
        diff = (Vc - phase * target).ravel()
        leak = U[lk[:, None], idx[None, :]].ravel()
        return np.concatenate([diff.real, diff.imag, leak.real, leak.imag])

    return fun


def pre_optimize_gate(
    target: np.ndarray,
    n_seg: int,
    config: DeviceConfig,
    seed: int = 0,
    qubit: int | None = None,
    starts: int = 4,
    max_iterations: int = 200,
    start: np.ndarray | None = None,
):
    """Search pulse samples realising ``target`` in the rotating frame.

    ``qubit=None`` optimises all three channels (two-qubit gate); otherwise
    only the channel of that qubit, with the other idling at the lower
    bound.  Returns ``(block, infidelity, leakage)`` of the best start; no
    optimality is implied.
    """
    lo, hi = config.eps_bounds
    rng = np.random.default_rng(seed)
    best = None
    for s in range(starts):
        if start is not None and s == 0:
            init = np.asarray(start, dtype=float)
        else:
            init = rng.uniform(lo, lo + 0.6 * (hi - lo), (3, n_seg))
        if qubit is None:
            block = PulseBlock.two_qubit(init)
        else:
            block = PulseBlock.single_qubit(qubit, init[0], lo)
        fun = _target_residual(block, target, config)
        q0 = block.params()
        opt = CalibrationOptions(max_iterations=max_iterations, tol=1e-7, stall_window=10, stall_rel=1e-6)
        q, _ = levenberg_marquardt(fun, q0, np.full_like(q0, lo), np.full_like(q0, hi), opt)
        cand = block.with_params(q)
        inf, leak = _metrics(effective_gate(cand, config), target)
        if best is None or inf + leak < best[1] + best[2]:
            best = (cand, inf, leak)
    return best


def perturb_pulses(block: PulseBlock, scale: float, config: DeviceConfig, seed: int = 0, direction=None):
    """Uniform perturbation of amplitude ``scale * eps0`` on free channels.

    Returns ``(block, n_clipped)``; fixed and switched-off channels are left
    untouched.
    """
    if scale < 0:
        raise ValueError("scale must be non-negative")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, block.n_params) if direction is None else np.asarray(direction, dtype=float)
    lo, hi = config.eps_bounds
    q = block.params() + scale * config.eps0 * u
    clipped = int(np.count_nonzero((q < lo) | (q > hi)))
    return block.with_params(np.clip(q, lo, hi)), clipped


def save_pulses(blocks: dict, config: DeviceConfig, path) -> None:
    data = {
        "schema_version": 1,
        "kind": "pulse_program",
        "units": "mV",
        "config_digest": config.digest(),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "gates": {name: {"samples": b.samples.tolist(), "mode": list(b.mode)} for name, b in blocks.items()},
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_pulses(path) -> tuple[dict, DeviceConfig]:
    data = json.loads(Path(path).read_text())
    if data.get("kind") != "pulse_program" or data.get("schema_version") != 1:
        raise ValueError("not a pulse file")
    cfg = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data["config"].items()}
    config = DeviceConfig(**cfg)
    blocks = {name: PulseBlock(g["samples"], tuple(g["mode"])) for name, g in data["gates"].items()}
    return blocks, config


def save_kernel(kernel, rate: float, path) -> None:
    """Plain text: a ``# rate=<samples per ns>`` header, then one sample per line."""
    lines = [f"# rate={rate!r}"] + [repr(float(x)) for x in kernel]
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path) -> tuple[np.ndarray, float]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# rate="):
        raise ValueError("kernel file needs a '# rate=' header")
    rate = float(lines[0].split("=", 1)[1])
    k = np.array([float(x) for x in lines[1:] if x.strip()])
    if k.size == 0:
        raise ValueError("empty kernel")
    return k / k.sum(), rate


class STQubitBackend:
    """Calibration backend whose parameters are the samples of one gate.

    The calibrated gate (default ``g1``, the CNOT) is simulated; all other
    gates of the two-qubit gate set are applied ideally on the
    computational block.  Responses are noiseless.
    """

    def __init__(self, block: PulseBlock, config: DeviceConfig | None = None, gate: int = 0, target: np.ndarray = CNOT):
        from .errors import Experiment

        self.config = config or DeviceConfig()
        self.block = block
        self.gate = gate
        self.target = np.asarray(target, dtype=complex)
        gs = two_qubit_gate_set()
        self.ideal_gates = np.array([embed(G) for G in gs.gates])
        self.q_ideal = block.params()
        lo, hi = self.config.eps_bounds
        self.lower = np.full(block.n_params, lo)
        self.upper = np.full(block.n_params, hi)
        M1, M2 = measurement_operators()
        self.rho = initial_state()
        self.measurements = (M1, M2)
        # four-level description used for depolarizing probe models
        rho4 = np.zeros((4, 4), dtype=complex)
        rho4[0, 0] = 1
        Z, I2 = np.diag([1.0, -1.0]), np.eye(2)
        self.exp = Experiment(gs, (rho4,), (np.kron(Z, I2), np.kron(I2, Z)))
        self._cache = (None, None)

    @property
    def n_params(self) -> int:
        return self.block.n_params

    def gate_unitary(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        key = q.tobytes()
        if self._cache[0] != key:
            self._cache = (key, effective_gate(self.block.with_params(q), self.config))
        return self._cache[1]

    def responses(self, q, rows) -> np.ndarray:
        ops = self.ideal_gates.copy()
        ops[self.gate] = self.gate_unitary(q)
        out = np.empty(len(rows))
        for n, r in enumerate(rows):
            U = np.eye(6, dtype=complex)
            for g in r.sequence:
                U = ops[g] @ U
            rho = U @ self.rho @ U.conj().T
            out[n] = np.real(np.trace(rho @ self.measurements[r.measurement]))
        return out

    def metrics(self, q) -> dict:
        inf, leak = _metrics(self.gate_unitary(q), self.target)
        return {"infidelity": inf, "coherent_infidelity": inf, "leakage": leak}

    def noisy_metrics(self, q, draws: int = 100, seed: int = 0) -> dict:
        inf, leak, err = gate_metrics(self.block.with_params(q), self.target, draws, self.config, seed)
        return {"infidelity": inf, "leakage": leak, "stderr": err}

    def perturbed(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        u = rng.uniform(-1, 1, self.n_params)
        block, _ = perturb_pulses(self.block, scale, self.config, direction=u)
        return block.params()

    def sample_start(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        """Start with initial infidelity drawn uniformly from ``[0, scale]``.

        The perturbation direction is uniform per sample; its amplitude is
        found by bisection.
        """
        target = rng.uniform(0, scale)
        u = rng.uniform(-1, 1, self.n_params)
        base = self.metrics(self.q_ideal)["infidelity"]

        def at(a):
            block, _ = perturb_pulses(self.block, a, self.config, direction=u)
            return block.params()

        if target <= base:
            return self.q_ideal.copy()
        lo_a, hi_a = 0.0, 0.05
        while self.metrics(at(hi_a))["infidelity"] < target and hi_a < 10:
            hi_a *= 2
        for _ in range(40):
            mid = 0.5 * (lo_a + hi_a)
            lo_a, hi_a = (mid, hi_a) if self.metrics(at(mid))["infidelity"] < target else (lo_a, mid)
        return at(0.5 * (lo_a + hi_a))
