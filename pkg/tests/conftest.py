import pytest
from hypothesis import settings

from tdaccess.config import RunConfig, apply

# wall-clock deadlines only add noise on a loaded single-core box
settings.register_profile("tdaccess", deadline=None)
settings.load_profile("tdaccess")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def small_config(out_dir, **extra):
    """Config for a quick synthetic run (8 x 8 km city, 4 slots)."""
    values = {
        "output_dir": str(out_dir),
        "synthetic": "true",
        "slot_count": "4",
        "seed": "3",
        "synth_width_m": "8000",
        "synth_height_m": "8000",
        "synth_study_radius_share": "0.45",
        "cartogram_slots": "0,2",
        "canvas_px": "300",
    }
    values.update({k: str(v) for k, v in extra.items()})
    return apply(RunConfig(), values).validate()


@pytest.fixture
def small_cfg(tmp_path):
    return small_config(tmp_path / "run")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
