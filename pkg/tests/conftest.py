import time
from pathlib import Path

import numpy as np
import pytest

from flowshadow import spectrum
from flowshadow.cocycle import build_chain
from flowshadow.config import load_config
from flowshadow.flow import integrate, tangent_integrate
from flowshadow.pipeline import run_pipeline
from flowshadow.systems import hopf, lorenz


class LorenzData:
    """Window-2000 Lorenz orbit after a 50-unit transient, built once per session."""

    def __init__(self, window=2000.0):
        self.system = lorenz()
        full = integrate(self.system, [1.0, 1.0, 1.0], 50.0 + window, tol=1e-10)
        self.segment = full.slice(5000, len(full) - 1)
        self.prop = tangent_integrate(self.system, self.segment)
        self.chain = build_chain(self.system, self.segment, scaled=True, propagation=self.prop)
        self.unscaled = build_chain(self.system, self.segment, scaled=False,
                                    propagation=self.prop)
        self.est = spectrum.qr_exponents(self.chain)
        self.split = spectrum.oseledec_splitting(self.chain, 1, exponents=self.est.exponents)


@pytest.fixture(scope="session")
def lorenz_data():
    return LorenzData()


@pytest.fixture(scope="session")
def hopf_circle():
    """Ten periods on the unit circle at the default stride."""
    H = hopf()
    seg = integrate(H, [1.0, 0.0, 0.0], 20 * np.pi, tol=1e-12)
    return H, seg, build_chain(H, seg, scaled=True)


ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def lorenz_run(tmp_path_factory):
    """Default Lorenz pipeline run (configs/lorenz.yaml); returns (exit code, out dir, seconds)."""
    out = tmp_path_factory.mktemp("lorenz_run")
    cfg = load_config(ROOT / "configs" / "lorenz.yaml", out=str(out))
    t = time.perf_counter()
    code = run_pipeline(cfg, out)
    return code, out, time.perf_counter() - t
