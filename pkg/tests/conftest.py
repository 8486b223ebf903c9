import sys
from pathlib import Path

import pytest

from locgen import kernels

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=sorted(kernels.available_backends()))
def kernel_backend(request):
    """Run a test under every available kernel backend, restoring the default."""
    prev = kernels.active_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)
