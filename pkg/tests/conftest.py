import sys

import pytest

from dualnlg.corpus import Example, Vocabulary
from dualnlg.training import TrainConfig

TINY = dict(
    emb_dim=6,
    hidden=5,
    d_z=4,
    d_e=3,
    frame_len=12,
    filters=(4, 3),
    widths=(4, 5),
    strides=(2, 1),
    keep_prob=1.0,
    batch_size=2,
    beam_width=3,
    max_len=12,
)

TINY_ROWS = [
    {"da": "inform(name='abc'; area='north')", "refs": ["abc is in the north ."]},
    {"da": "inform(name='xyz'; food='thai')", "refs": ["xyz serves thai food ."]},
    {"da": "request(area)", "refs": ["which area ?"]},
    {"da": "inform(name='abc'; food='thai'; area='south')", "refs": ["abc serves thai food in the south ."]},
]


def tiny_config(model="crossvae", **kw):
    return TrainConfig(model=model, **(TINY | kw))


@pytest.fixture
def tiny_examples():
    return [Example.from_json(r, i) for i, r in enumerate(TINY_ROWS)]


@pytest.fixture
def tiny_vocab(tiny_examples):
    return Vocabulary.build(tiny_examples)


def randomize(model, rng, scale=0.5):
    """Non-zero values everywhere, biases included, so no path is trivially dead."""
    for p in model.parameters():
        p.data = rng.normal(scale=scale, size=p.data.shape)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, when the acceptance module ran."""
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in module.RESULTS:
            ok, detail = module.RESULTS[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
