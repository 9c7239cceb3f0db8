import os

import pytest
import torch
from hypothesis import settings

from skelgen.synthdata import build_dataset

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """10 identities x 3 actions x 8 frames at 64x64."""
    return build_dataset(10, ["walking", "running", "handwaving"], 8, 64, 7, tmp_path_factory.mktemp("data"))
