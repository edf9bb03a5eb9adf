from fractions import Fraction

import pytest

from robustsched.capacity import enumerate_maximal_configs
from robustsched.domain import EC2_CAPACITY, EC2_VM_TYPES, ec2_spec


@pytest.fixture(scope="session")
def ec2_fs():
    return enumerate_maximal_configs(EC2_CAPACITY, EC2_VM_TYPES)


@pytest.fixture(scope="session")
def ec2():
    return ec2_spec(100)


def F(x) -> Fraction:
    return Fraction(x)
