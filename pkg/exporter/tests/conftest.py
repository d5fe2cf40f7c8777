import pytest

from vit_export.export import run_export


@pytest.fixture(scope="session")
def export_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    run_export(str(out), source="random", seed=3, head_seed=4)
    return str(out)
