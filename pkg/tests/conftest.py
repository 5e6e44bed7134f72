import sys

import pytest

from fluorodx.manifest import DatasetManifest, ImageRecord, Label, Variant
from fluorodx.synthetic import generate_corpus


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the one-line acceptance criterion verdicts after the test run."""
    for name, module in sys.modules.items():
        if name.endswith("test_acceptance"):
            lines = getattr(module, "REPORT_LINES", [])
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)
            return


def make_reference_manifest(n_pos=123, n_neg=32, seed=0) -> DatasetManifest:
    """155-record manifest shaped like the real corpus (paths are dummies;
    split and counting operations never open them)."""
    records = [
        ImageRecord(id=f"pos_{i:03d}", path=f"/data/pos_{i:03d}.png", label=Label.POSITIVE)
        for i in range(n_pos)
    ] + [
        ImageRecord(id=f"neg_{i:03d}", path=f"/data/neg_{i:03d}.png", label=Label.NEGATIVE)
        for i in range(n_neg)
    ]
    return DatasetManifest(tuple(records), variant=Variant.FFI, seed=seed)


@pytest.fixture
def reference_manifest():
    return make_reference_manifest()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small on-disk synthetic corpus for unit tests that touch image files."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return generate_corpus(root, n_positive=12, n_negative=6, image_size=96, seed=7)
