import numpy as np
import pytest

from manetbuf import ParameterError, stationary_oracle
from manetbuf.oracle import DegenerateChainWarning, birth_death_matrix, source_chain_matrix


def test_single_state():
    np.testing.assert_array_equal(stationary_oracle([[1.0]]), [1.0])


def test_two_state_closed_form():
    a, b = 0.3, 0.1
    pi = stationary_oracle([[1 - a, a], [b, 1 - b]])
    np.testing.assert_allclose(pi, [b / (a + b), a / (a + b)], atol=1e-14)


def test_rejects_bad_matrices():
    with pytest.raises(ParameterError):
        stationary_oracle([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ParameterError):
        stationary_oracle(np.ones((2, 3)) / 3)
    with pytest.raises(ParameterError):
        stationary_oracle(np.eye(3))  # three absorbing states


def test_periodic_chain_warns_but_solves():
    with pytest.warns(DegenerateChainWarning):
        pi = stationary_oracle([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(pi, [0.5, 0.5])


def test_transient_states_are_allowed():
    # state 0 leaks into the closed class {1, 2}
    P = [[0.5, 0.5, 0.0], [0.0, 0.2, 0.8], [0.0, 0.6, 0.4]]
    np.testing.assert_allclose(stationary_oracle(P), [0, 6 / 14, 8 / 14], atol=1e-14)


def test_builders_are_stochastic():
    P = source_chain_matrix(0.3, 0.6, 4)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    B = birth_death_matrix([0.2, 0.2, 0.0], [0.0, 0.1, 0.3])
    np.testing.assert_allclose(B.sum(axis=1), 1.0)
    assert B[0, 1] == 0.2 and B[2, 1] == 0.3
