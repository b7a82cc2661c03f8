import os
from pathlib import Path

import pytest

MNIST_DIR = Path(os.environ.get("PGAN_MNIST_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() or (
        MNIST_DIR / "train-images-idx3-ubyte.gz"
    ).exists()


needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


@pytest.fixture(scope="session")
def mnist_train():
    from photonic_gan.data import Split, load_mnist_dir

    return load_mnist_dir(MNIST_DIR, Split.TRAIN)


@pytest.fixture(scope="session")
def mnist_test():
    from photonic_gan.data import Split, load_mnist_dir

    return load_mnist_dir(MNIST_DIR, Split.TEST)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def accept():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
