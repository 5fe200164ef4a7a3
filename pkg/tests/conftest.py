import numpy as np
import pytest
import torch

from text2pressure.codec import CodecConfig, train_codec
from text2pressure.data import SynthConfig, normalize, synth_sequences

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_seqs():
    """Normalized 8x6 sequences, 3 per class, 48 frames each."""
    cfg = SynthConfig(sequences_per_class=3, frames_per_sequence=48, height=8, width=6, seed=11)
    return [normalize(s) for s in synth_sequences(cfg)]


@pytest.fixture(scope="session")
def tiny_codec(tiny_seqs):
    cfg = CodecConfig(height=8, width=6, codebook_size=128, latent_dim=8, hidden=24, res_blocks=1,
                      steps=80, eval_every=40, batch_size=6, seed=0)
    return train_codec(tiny_seqs, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion in the terminal report

_ACCEPTANCE: list[tuple[str, str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__.endswith("test_acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE.append((item.name, "PASS" if rep.passed else "FAIL", doc, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, doc, detail in sorted(_ACCEPTANCE):
        line = f"{status}  {doc}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
