import pytest

from prosodykit.harness.config import RunConfig

# criterion number -> (description, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}

TINY = dict(
    n_speakers=6, n_heldout_speakers=2, n_utterances=64, min_tokens=4, max_tokens=6,
    content_dim=16, speaker_dim=8, hidden=16, step_dim=8, adaptor_dim=16, pos_dim=8,
    pitch_steps=40, batch_size=8, log_every=10, eval_every=20,
    adaptor_steps=10, adaptor_batch=4, adaptor_eval_every=5, duration_steps=30,
    ablation_runs=1, ablation_pitch_steps=20, figures=False,
)


def tiny_text(**overrides) -> str:
    values = {**TINY, **overrides}
    return "\n".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}"
                     for k, v in values.items()) + "\n"


TINY_TEXT = tiny_text()


@pytest.fixture(scope="session")
def tiny_cfg():
    return RunConfig(**TINY).validate()


@pytest.fixture(scope="session")
def tiny_corpus(tiny_cfg):
    from prosodykit.harness.corpus import generate_corpus
    return generate_corpus(tiny_cfg, 0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        desc, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {desc}: {detail}")
