import numpy as np
import pytest

from config.himat import himat_generator, himat_plant
from moments.systems import Compensator, Plant, SignalGenerator


def random_stable_plant(rng, n, m, p, q, with_d=False, margin=0.5) -> Plant:
    """Hurwitz plant whose eigenvalues sit left of -margin."""
    A = rng.normal(size=(n, n)) / np.sqrt(n)
    shift = max(np.max(np.linalg.eigvals(A).real), 0.0) + margin + rng.uniform(0.0, 1.0)
    A = A - shift * np.eye(n)
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p, n))
    P = rng.normal(size=(n, q))
    D = rng.normal(size=(p, m)) if with_d else np.zeros((p, m))
    Q = rng.normal(size=(p, q)) * 0.5
    return Plant(A, B, C, D, P, Q)


def oscillator_blocks(rng, nu):
    """Jordan-free generator spectrum on the imaginary axis: rotation blocks plus a zero when nu is odd."""
    blocks = []
    for _ in range(nu // 2):
        w = rng.uniform(0.5, 3.0)
        blocks.append(np.array([[0.0, w], [-w, 0.0]]))
    if nu % 2:
        blocks.append(np.zeros((1, 1)))
    S = np.zeros((nu, nu))
    start = 0
    for block in blocks:
        k = block.shape[0]
        S[start:start + k, start:start + k] = block
        start += k
    return S


def random_generator(rng, nu, q) -> SignalGenerator:
    S0 = oscillator_blocks(rng, nu)
    T = np.eye(nu) + 0.3 * rng.normal(size=(nu, nu))
    S = np.linalg.solve(T, S0 @ T)
    L = rng.normal(size=(q, nu))
    return SignalGenerator(S, L)


def random_compensator(rng, rho, m, p, gain=0.2) -> Compensator:
    F = rng.normal(size=(rho, rho)) / np.sqrt(rho) - 2.0 * np.eye(rho)
    G = gain * rng.normal(size=(rho, p))
    H = gain * rng.normal(size=(m, rho))
    return Compensator(F, G, H)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def scalar_plant():
    return Plant.from_matrices([[-1.0]], [[1.0]], [[1.0]], [[1.0]])


@pytest.fixture
def integrator_generator():
    return SignalGenerator([[0.0]], [[1.0]])


@pytest.fixture
def zero_plant():
    """W(s) = s / (s + 1): transmission zero at the origin."""
    return Plant.from_matrices([[-1.0]], [[1.0]], [[-1.0]], [[1.0]], D=[[1.0]])


@pytest.fixture
def himat():
    return himat_plant(), himat_generator()


@pytest.fixture
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("MOMENT_FORGE_OUTPUT_DIR", str(tmp_path / "outputs"))
    monkeypatch.delenv("MOMENT_FORGE_TOL_PROFILE", raising=False)
    return tmp_path
