"""Random time-varying truth systems, band-limited excitation, noisy data.

A scenario is 3000 input/output samples: the first 1000 outputs come from a
random stable 30th-order SISO system, the rest from a perturbed version of
it (an extra conjugate pole pair and zero pair), so the data-generating
system switches order mid-stream.  The input is unit-variance band-limited
Gaussian noise and white Gaussian noise is added to the output at SNR 1.

Truth impulse responses are truncated to ``N_TRUTH`` taps, normalized to
unit 2-norm, and rejection-sampled so that at most 1% of their energy lies
beyond tap 100 (the model order used by the estimators).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

#: Taps kept for truth impulse responses (poles bounded by 0.95 decay far
#: below double precision at this depth).
N_TRUTH = 500
#: Tail-energy acceptance threshold: fraction of impulse-response 2-norm
#: allowed beyond this tap.
TAIL_CHECK_TAP = 100
TAIL_ENERGY_MAX = 0.01

_POLE_MAG_RANGE = (0.4, 0.95)
#: Resonance angles stay comfortably inside the excited band (the input is
#: low-passed at 0.8 Nyquist); a dominant resonance at or above the band
#: edge would be nearly invisible to the data and no estimator could score
#: on it.  The margin keeps high-Q peaks fully excited.
_ANGLE_MAX = 0.75 * np.pi
#: Accepted systems must also concentrate their response energy inside the
#: excited band, otherwise the benchmark would score estimators on
#: frequencies the input never reaches.
_EXCITED_BAND_EDGE = 0.8
EXCITED_ENERGY_MIN = 0.995
_INPUT_FIR_TAPS = 65
_MAX_DRAWS = 1000


@dataclass(frozen=True)
class LtiSystem:
    """Pole/zero/gain truth system with its truncated impulse response."""

    poles: np.ndarray
    zeros: np.ndarray
    gain: float
    impulse: np.ndarray

    @property
    def order(self) -> int:
        return len(self.poles)


@dataclass(frozen=True)
class ScenarioData:
    """One Monte-Carlo dataset plus everything needed to score it."""

    u: np.ndarray
    y: np.ndarray
    h_before: np.ndarray
    h_after: np.ndarray
    switch_time: int
    noise_sigma2: float
    seed: int
    sys_before: LtiSystem
    sys_after: LtiSystem


def _impulse_response(poles, zeros, gain: float, n_taps: int) -> np.ndarray:
    """Impulse response of gain * prod(z - zeros) / prod(z - poles)."""
    den = np.real(np.poly(poles))
    num = gain * np.real(np.poly(zeros))
    # pad the numerator to the denominator length: the degree gap becomes
    # a pure delay in the z^-1 recursion
    num_padded = np.concatenate([np.zeros(len(den) - len(num)), num])
    pulse = np.zeros(n_taps)
    pulse[0] = 1.0
    return scipy.signal.lfilter(num_padded, den, pulse)


def _tail_fraction(h: np.ndarray) -> float:
    total = np.linalg.norm(h)
    if total == 0.0:
        return 1.0
    return float(np.linalg.norm(h[TAIL_CHECK_TAP:]) / total)


def _conjugate_set(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    """``count`` roots closed under conjugation, magnitudes in the pole band."""
    vals = []
    n_pairs, n_real = divmod(count, 2)
    for _ in range(n_pairs):
        mag = rng.uniform(*_POLE_MAG_RANGE)
        ang = rng.uniform(0.0, _ANGLE_MAX)
        root = mag * np.exp(1j * ang)
        vals.extend([root, np.conj(root)])
    for _ in range(n_real):
        mag = rng.uniform(*_POLE_MAG_RANGE)
        vals.append(complex(mag * rng.choice([-1.0, 1.0])))
    assert all(abs(v) <= radius for v in vals)
    return np.array(vals)


def _excited_fraction(h: np.ndarray) -> float:
    power = np.abs(np.fft.rfft(h, 2048)) ** 2
    freqs = np.linspace(0.0, 1.0, power.size)
    return float(power[freqs <= _EXCITED_BAND_EDGE].sum() / power.sum())


def _normalized_system(poles, zeros) -> LtiSystem | None:
    """Unit-gain expansion, or None where truncation or excitation checks fail."""
    h_raw = _impulse_response(poles, zeros, 1.0, N_TRUTH)
    norm = np.linalg.norm(h_raw)
    if norm == 0.0 or not np.isfinite(norm):
        return None
    h = h_raw / norm
    if _tail_fraction(h) > TAIL_ENERGY_MAX:
        return None
    if _excited_fraction(h) < EXCITED_ENERGY_MIN:
        return None
    return LtiSystem(poles=np.asarray(poles), zeros=np.asarray(zeros), gain=1.0 / norm, impulse=h)


def random_system(seed, order: int = 30, radius: float = 0.95) -> LtiSystem:
    """Draw a stable random system; rejection-sample for tail adequacy.

    Poles come in conjugate pairs with magnitude in [0.4, 0.95] and uniform
    angle (plus a real pole when the order is odd); there are ``order - 2``
    zeros drawn the same way, and the gain normalizes the truncated impulse
    response to unit 2-norm.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(_MAX_DRAWS):
        poles = _conjugate_set(rng, order, radius)
        zeros = _conjugate_set(rng, max(order - 2, 0), radius)
        sys = _normalized_system(poles, zeros)
        if sys is not None:
            return sys
    raise RuntimeError("could not draw a tail-adequate system")


def perturb_system(sys: LtiSystem, seed) -> LtiSystem:
    """Add one conjugate pole pair and one conjugate zero pair, renormalize."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(_MAX_DRAWS):
        new_poles = np.concatenate([sys.poles, _conjugate_set(rng, 2, 0.95)])
        new_zeros = np.concatenate([sys.zeros, _conjugate_set(rng, 2, 0.95)])
        out = _normalized_system(new_poles, new_zeros)
        if out is not None:
            return out
    raise RuntimeError("could not draw a tail-adequate perturbation")


def bandlimited_input(seed, length: int, band=(0.0, 0.8)) -> np.ndarray:
    """Unit-variance Gaussian noise low-passed to the normalized band.

    The filter is a 65-tap windowed-sinc FIR with cutoff at ``band[1]``
    times Nyquist; the output is rescaled to exactly unit empirical
    variance.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    white = rng.standard_normal(length)
    taps = scipy.signal.firwin(_INPUT_FIR_TAPS, band[1])
    filtered = scipy.signal.lfilter(taps, [1.0], white)
    return filtered / np.std(filtered)


def make_scenario(
    seed: int,
    total_samples: int = 3000,
    switch_time: int = 1001,
    order: int = 30,
    noise_scale: float = 1.0,
) -> ScenarioData:
    """Generate one dataset of the tracking experiment.

    The full input is convolved with both truth systems and the outputs are
    spliced at ``switch_time``; the noise variance equals the empirical
    variance of the spliced noiseless output (SNR 1), optionally scaled by
    ``noise_scale`` (0 gives noise-free data for diagnostics).
    """
    children = np.random.SeedSequence(seed).spawn(4)
    sys_before = random_system(np.random.default_rng(children[0]), order=order)
    sys_after = perturb_system(sys_before, np.random.default_rng(children[1]))
    u = bandlimited_input(np.random.default_rng(children[2]), total_samples)

    y_before = np.convolve(u, sys_before.impulse)[:total_samples]
    y_after = np.convolve(u, sys_after.impulse)[:total_samples]
    noiseless = np.where(np.arange(1, total_samples + 1) < switch_time, y_before, y_after)

    sigma2 = float(np.var(noiseless))
    noise_rng = np.random.default_rng(children[3])
    y = noiseless + noise_scale * np.sqrt(sigma2) * noise_rng.standard_normal(total_samples)

    return ScenarioData(
        u=u,
        y=y,
        h_before=sys_before.impulse,
        h_after=sys_after.impulse,
        switch_time=switch_time,
        noise_sigma2=sigma2 * noise_scale**2,
        seed=seed,
        sys_before=sys_before,
        sys_after=sys_after,
    )


def truth_at(scenario: ScenarioData, k: int, n_taps: int) -> np.ndarray:
    """True taps in force at sample ``k``, truncated to the model order."""
    h = scenario.h_before if k < scenario.switch_time else scenario.h_after
    return h[:n_taps]


# ---------------------------------------------------------------------------
# Text-format persistence: CSV data plus a JSON sidecar with the systems
# ---------------------------------------------------------------------------


def _system_to_dict(sys: LtiSystem) -> dict:
    return {
        "poles": [[z.real, z.imag] for z in sys.poles],
        "zeros": [[z.real, z.imag] for z in sys.zeros],
        "gain": sys.gain,
    }


def _system_from_dict(d: dict) -> LtiSystem:
    poles = np.array([complex(re, im) for re, im in d["poles"]])
    zeros = np.array([complex(re, im) for re, im in d["zeros"]])
    h = _impulse_response(poles, zeros, d["gain"], N_TRUTH)
    return LtiSystem(poles=poles, zeros=zeros, gain=d["gain"], impulse=h)


def save_scenario(scenario: ScenarioData, csv_path) -> None:
    """Write ``t, u, y`` rows plus a ``.json`` sidecar of the same stem."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "u", "y"])
        for t in range(scenario.u.size):
            writer.writerow([t + 1, repr(scenario.u[t]), repr(scenario.y[t])])
    sidecar = {
        "seed": scenario.seed,
        "switch_time": scenario.switch_time,
        "noise_sigma2": scenario.noise_sigma2,
        "system_before": _system_to_dict(scenario.sys_before),
        "system_after": _system_to_dict(scenario.sys_after),
    }
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_scenario(csv_path) -> ScenarioData:
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "u", "y"]:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [(float(u), float(y)) for _, u, y in reader]
    u = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    sidecar = json.loads(csv_path.with_suffix(".json").read_text())
    sys_before = _system_from_dict(sidecar["system_before"])
    sys_after = _system_from_dict(sidecar["system_after"])
    return ScenarioData(
        u=u,
        y=y,
        h_before=sys_before.impulse,
        h_after=sys_after.impulse,
        switch_time=sidecar["switch_time"],
        noise_sigma2=sidecar["noise_sigma2"],
        seed=sidecar["seed"],
        sys_before=sys_before,
        sys_after=sys_after,
    )
