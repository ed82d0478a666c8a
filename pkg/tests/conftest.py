import pytest

import shapeopt as so


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: long-running acceptance criteria (deselect with -m 'not acceptance')"
    )


@pytest.fixture(scope="session")
def qam16sq():
    return so.build_product_qam(16)


@pytest.fixture(scope="session")
def qam64sq():
    return so.build_product_qam(64)


@pytest.fixture(scope="session")
def qpsk_sq():
    return so.build_product_qam(4)


@pytest.fixture(scope="session")
def pam16_4d():
    return so.build_product_pam16_4d()
