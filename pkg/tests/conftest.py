import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import make_covtype_like, write_covtype_like  # noqa: E402

from fogcost.cost import SystemConfig  # noqa: E402
from fogcost.data import LabeledDataset  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]

_ACCEPTANCE: list[tuple[str, str, str]] = []


def covtype_path() -> Path | None:
    """Real Covtype file: $FOGCOST_COVTYPE, else data/covtype.data[.gz] in the repo."""
    env = os.environ.get("FOGCOST_COVTYPE")
    candidates = [Path(env)] if env else []
    candidates += [ROOT / "data" / "covtype.data.gz", ROOT / "data" / "covtype.data"]
    for p in candidates:
        if p.exists():
            return p
    return None


@pytest.fixture
def ref_cfg():
    return SystemConfig(m0=400, n0=112, d=54, omega=54, kappa=518, epsilon=1e-5, theta=1.0, mu=1e-4, alpha=1.0, tau=54)


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "covtype_like.csv"
    return write_covtype_like(path, 12000, seed=7, class_weights=[0, 0, 0.6, 0, 0, 0, 0.4])


@pytest.fixture(scope="session")
def binary_data():
    raw = make_covtype_like(4000, seed=11, class_weights=[0, 0, 0.6, 0, 0, 0, 0.4])
    y = np.where(raw[:, -1] == 3, 1, -1)
    X = raw[:, :-1]
    X = (X - X.mean(0)) / np.where(X.std(0) == 0, 1, X.std(0))
    return LabeledDataset(X, y, raw[:, -1].astype(int))


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion."""
    record = {"id": None, "detail": ""}

    def set_(cid: str, detail: str = ""):
        record["id"] = cid
        record["detail"] = detail

    yield set_
    if record["id"] is None:
        return
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    _ACCEPTANCE.append((record["id"], status, record["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"[{status}] criterion {cid}  {detail}")
