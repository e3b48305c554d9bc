import numpy as np
import pytest

from gcnbert import tensor as T


@pytest.fixture(autouse=True)
def float64_default():
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def tiny_config(**changes):
    """A model small enough to train for a few epochs in a test."""
    from gcnbert.config import RunConfig
    base = dict(gcn_width=2, gcn_layers=1, gcn_blocks=1, bert_pos_dim=2, bert_layers=1,
                bert_heads=1, bert_head_dim=4, bert_ff_dim=8, window=8, batch_size=4,
                epochs=2, dtype="float64")
    base.update(changes)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Three classes, seven clips each (5 train / 1 validation / 1 test)."""
    from gcnbert.synth import SynthSpec, generate
    out = tmp_path_factory.mktemp("toy")
    generate(SynthSpec(class_count=3, samples_per_class=7, frame_count=12, seed=5), out)
    return out


ACCEPTANCE_LINES: dict[int, str] = {}


class criterion:
    """Record one acceptance criterion's outcome as a pass/fail/skip line."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.details = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.details = self.details or str(exc)
        else:
            status = "FAIL"
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            self.details = f"{self.details}; {msg}" if self.details else msg
        line = f"criterion {self.number} {status}: {self.title}" + (f" ({self.details})" if self.details else "")
        ACCEPTANCE_LINES[self.number] = line
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
