import pytest

from manetbuf import Mac, Mobility, NetworkParams, ParameterError, SchedProbs


def test_defaults_follow_simulation_settings():
    p = NetworkParams()
    assert (p.n, p.m, p.Bs, p.Br, p.nu, p.delta) == (72, 6, 5, 5, 1, 1.0)
    assert p.mac is Mac.LS and p.mobility is Mobility.IID and not p.feedback


@pytest.mark.parametrize("kw", [
    {"n": 3}, {"m": 0}, {"Bs": 0}, {"Br": -1}, {"lambda_s": 0.0}, {"lambda_s": 1.5},
    {"nu": 0}, {"delta": -0.1}, {"n": 4.5}, {"Bs": True}, {"mac": "ALOHA"},
    {"mobility": "levy"}, {"mac": "EC", "m": 2, "nu": 2},
])
def test_invalid_params_rejected(kw):
    with pytest.raises((ParameterError, ValueError)):
        NetworkParams(**kw)


def test_strings_become_enums_and_round_trip():
    p = NetworkParams(mac="EC", mobility="RW", n=20.0)
    assert p.mac is Mac.EC and p.mobility is Mobility.RW and p.n == 20
    assert NetworkParams(**p.to_dict()) == p
    assert p.replace(Br=0).Br == 0


def test_sched_probs_invariants():
    SchedProbs(0.2, 0.3, 0.3)
    with pytest.raises(ParameterError):
        SchedProbs(0.2, 0.3, 0.2)
    with pytest.raises(ParameterError):
        SchedProbs(0.5, 0.3, 0.3)
    with pytest.raises(ParameterError):
        SchedProbs(-0.1, 0.0, 0.0)
