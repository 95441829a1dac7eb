import pytest

from qsvrg.netsim import (
    BitMeter,
    Direction,
    Kind,
    Message,
    Network,
    metered_formula_bits,
    nominal_bits,
)


def test_full_precision_message_costs_64_per_coordinate():
    net = Network()
    net.upload_full(9)
    assert net.meter.uplink_total == 576


def test_quantized_message_costs_grid_bits():
    net = Network()
    net.download_quantized(27)
    assert net.meter.downlink_total == 27


def test_additivity_and_ledger():
    net = Network()
    net.epoch = 3
    net.upload_full(2, copies=4)
    net.upload_quantized(5)
    net.announce_scalar()
    m = net.meter
    assert m.total == 4 * 128 + 5 + 64
    assert m.bits(3, "uplink") == 517
    assert m.data_bits(3) == 517
    assert m.control_bits(3) == 64
    assert m.epochs() == [3]
    csv = m.to_csv().splitlines()
    assert csv[0] == "epoch,direction,kind,bits"
    assert len(csv) == 4


def test_message_validation():
    with pytest.raises(ValueError):
        Message(Direction.UPLINK, Kind.FULL, -1)
    meter = BitMeter()
    with pytest.raises(ValueError):
        meter.record(Message(Direction.UPLINK, Kind.FULL, 8), copies=-1)


@pytest.mark.parametrize(
    "alg, args, expected",
    [
        ("svrg", (9, 10, 8, 0, 0), 19584),
        ("q-sgd", (9, 10, 8, 27, 27), 54),
        ("q-sag", (9, 10, 8, 27, 27), 54),
        ("gd", (9, 1, 0, 0, 0), 128 * 9),
        ("sgd", (9, 5, 0, 0, 0), 128 * 9),
        ("q-gd", (9, 4, 0, 27, 18), 27 + 4 * 18),
        ("qm-svrg-a", (9, 10, 8, 27, 27), 5760 + 64 * 9 * 8 + 54 * 8),
        ("qm-svrg-f+", (9, 10, 8, 27, 27), 5760 + 54 * 8),
    ],
)
def test_nominal_formulas(alg, args, expected):
    assert nominal_bits(alg, *args) == expected


def test_plus_variants_meter_two_gradients():
    assert metered_formula_bits("qm-svrg-a+", 9, 10, 8, 27, 18) == 5760 + (27 + 36) * 8
    assert metered_formula_bits("svrg", 9, 10, 8) == nominal_bits("svrg", 9, 10, 8)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        nominal_bits("adam", 1, 1)
