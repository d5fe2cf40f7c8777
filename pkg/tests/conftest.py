import pytest

from glitchvit.dataset import split_dataset
from glitchvit.synthetic import make_toy_dataset
from glitchvit.vit_model import ModelConfig, random_weight_set

# outcome per acceptance criterion, printed in the terminal summary
_ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(criterion): end-to-end acceptance criterion"
    )


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    criterion = getattr(report, "_acceptance_criterion", None)
    if criterion is not None:
        _ACCEPTANCE_RESULTS[criterion] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report._acceptance_criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for criterion, outcome in _ACCEPTANCE_RESULTS.items():
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{status}] {criterion}")


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig(
        image_size=64,
        patch_size=32,
        hidden_dim=64,
        layers=2,
        heads=4,
        mlp_dim=256,
        head_hidden=64,
        num_classes=4,
    )


@pytest.fixture(scope="session")
def toy_encoder(toy_cfg):
    return random_weight_set(toy_cfg, seed=42, include_head=False)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """12 images per toy class, split 7:1.5:1.5; cheap enough for unit tests."""
    root = tmp_path_factory.mktemp("toy-small")
    manifest = make_toy_dataset(str(root), per_class=12, seed=5, threads=1)
    return split_dataset(manifest, seed=11)


@pytest.fixture(scope="session")
def full_toy_manifest(tmp_path_factory):
    """The 200-per-class dataset the end-to-end acceptance run trains on."""
    root = tmp_path_factory.mktemp("toy-full")
    manifest = make_toy_dataset(str(root), per_class=200, seed=1, threads=1)
    return split_dataset(manifest, seed=2)
