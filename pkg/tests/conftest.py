import hashlib
import json
import os
import time
from typing import NamedTuple
from pathlib import Path

import numpy as np
import pytest
import torch

from cmamba.checkpoint import load_checkpoint, save_checkpoint
from cmamba.config import ModelConfig
from cmamba.data import toy_corpus
from cmamba.model import CMamba
from cmamba.training import PRESETS, TrainConfig, train

ACCEPTANCE = pytest.StashKey[dict]()

SRC = Path(__file__).resolve().parents[1] / "src" / "cmamba"
TOY_LAMBDA = 0.013


def fd_rel_error(fn, tensors, eps=1e-6, directions=4, seed=0):
    """Worst relative error between autograd and central differences of ``fn``
    along random directions in the joint space of ``tensors`` (float64)."""
    gen = torch.Generator().manual_seed(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    grads = [t.grad.detach().clone() for t in tensors]
    worst = 0.0
    for _ in range(directions):
        vs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        norm = torch.sqrt(sum((v ** 2).sum() for v in vs))
        vs = [v / norm for v in vs]
        analytic = float(sum((g * v).sum() for g, v in zip(grads, vs)))
        with torch.no_grad():
            for t, v in zip(tensors, vs):
                t.add_(eps * v)
            f_plus = float(fn())
            for t, v in zip(tensors, vs):
                t.sub_(2 * eps * v)
            f_minus = float(fn())
            for t, v in zip(tensors, vs):
                t.add_(eps * v)
        numeric = (f_plus - f_minus) / (2 * eps)
        scale = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return CMamba(ModelConfig.tiny()).eval()


def _source_digest():
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


class ToyRun(NamedTuple):
    model: CMamba
    losses: np.ndarray
    seconds: float
    images: list


def _train_toy(backbone, cache_dir):
    """Toy preset, 32-image corpus, lambda 0.013. Cached per source revision;
    the recorded wall time is that of the run that produced the cache entry."""
    images = toy_corpus(32, seed=0)
    path = cache_dir / f"toy_{backbone}_{_source_digest()}.npz"
    log_path = path.with_suffix(".csv")
    meta_path = path.with_suffix(".json")
    if path.exists() and log_path.exists() and meta_path.exists():
        model, _ = load_checkpoint(path)
        losses = np.loadtxt(log_path, delimiter=",", skiprows=1, usecols=3, ndmin=1)
        return ToyRun(model, losses, json.loads(meta_path.read_text())["seconds"], images)
    torch.manual_seed(0)
    model = CMamba(ModelConfig.tiny(backbone=backbone, lmbda=TOY_LAMBDA))
    config = TrainConfig(lmbda=TOY_LAMBDA, seed=0, log_path=str(log_path), **PRESETS["toy"])
    start = time.perf_counter()
    model, log = train(model, config, images=images)
    seconds = time.perf_counter() - start
    save_checkpoint(path, model, config.to_dict())
    meta_path.write_text(json.dumps({"seconds": seconds}))
    return ToyRun(model, np.array([e.loss for e in log]), seconds, images)


@pytest.fixture(scope="session")
def toy_cache(request):
    d = Path(request.config.cache.mkdir("toy_models"))
    if os.environ.get("CMAMBA_RETRAIN"):
        for p in d.glob("toy_*"):
            p.unlink()
    return d


@pytest.fixture(scope="session")
def toy_hybrid(toy_cache):
    return _train_toy("hybrid", toy_cache)


@pytest.fixture(scope="session")
def toy_ssm(toy_cache):
    return _train_toy("ssm", toy_cache)


@pytest.fixture(scope="session")
def toy_cnn(toy_cache):
    return _train_toy("cnn", toy_cache)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    item.config.stash.setdefault(ACCEPTANCE, {})[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
