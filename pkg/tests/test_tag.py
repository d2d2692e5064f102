import numpy as np
import pytest
from hypothesis import given, strategies as st

from retrovlc.errors import NeverCharges, UnclassifiablePeriod
from retrovlc.tag import (
    DEFAULT_HARVEST,
    OFFICE_LUX,
    EnergyLedger,
    LcdEnergyModel,
    McuDutyModel,
    activation_threshold_uj,
    calibrate_harvest,
    charging_time_ms,
    lcd_current_ua,
    link_feasible,
    phase_power_uw,
    receive_busy_us,
    storage_capacitance_uf,
    tag_receive,
)


def test_lcd_current_anchors():
    assert lcd_current_ua(LcdEnergyModel()) == pytest.approx(84.0, abs=0.1)
    assert lcd_current_ua(LcdEnergyModel(reuse_enabled=True)) == pytest.approx(46.0, abs=0.1)


@pytest.mark.parametrize("field", ["capacitance_nf", "v_drive", "toggle_rate_hz"])
@pytest.mark.parametrize("reuse", [False, True])
def test_lcd_current_linear(field, reuse):
    base = LcdEnergyModel(reuse_enabled=reuse)
    i0 = lcd_current_ua(base)
    for s in (0.5, 2.0, 3.0):
        m = LcdEnergyModel(**{**base.__dict__, field: getattr(base, field) * s})
        assert lcd_current_ua(m) == pytest.approx(s * i0, rel=1e-12)


def test_lcd_model_validation():
    with pytest.raises(ValueError):
        LcdEnergyModel(reuse_efficiency=1.0)
    with pytest.raises(ValueError):
        LcdEnergyModel(capacitance_nf=0.0)


def test_mcu_duty():
    assert McuDutyModel().duty == pytest.approx(0.08)
    assert receive_busy_us(10) == 160.0
    with pytest.raises(ValueError):
        McuDutyModel(wake_us=200.0)


def test_tag_receive_example():
    assert list(tag_receive([0, 185, 390])) == [0, 0, 1, 0]


@given(st.lists(st.integers(0, 3), max_size=50), st.integers(0, 2**32 - 1))
def test_tag_receive_tolerates_jitter(symbols, seed):
    periods = np.array([185.0, 195.0, 205.0, 215.0])[symbols]
    periods = periods + np.random.default_rng(seed).uniform(-3.0, 3.0, len(periods))
    edges = np.concatenate([[0.0], np.cumsum(periods)])
    bits = tag_receive(edges)
    assert list(bits[0::2] * 2 + bits[1::2]) == symbols


def test_tag_receive_errors():
    with pytest.raises(UnclassifiablePeriod):
        tag_receive([0, 200])
    with pytest.raises(ValueError):
        tag_receive([0, 185, 100])


def test_phase_power_table():
    assert phase_power_uw("rx", 2.0) == 87.6
    assert phase_power_uw("tx", 2.6) == 95.4
    with pytest.raises(ValueError):
        phase_power_uw("rx", 3.3)


def test_harvest_calibration_anchors():
    hm = DEFAULT_HARVEST
    assert hm.harvest_uw(1.7) == pytest.approx(phase_power_uw("tx", 2.0))
    assert hm.charging_time_ms(0.1) == pytest.approx(50.0)
    assert hm.charging_time_ms(0.2) == pytest.approx(100.0)
    cap = storage_capacitance_uf(hm.threshold_uj)
    assert activation_threshold_uj(cap) == pytest.approx(hm.threshold_uj)
    assert hm.harvest_uw(0.0, 0.0, OFFICE_LUX) - hm.harvest_uw(0.0) == pytest.approx(0.13 * hm.a_uw_m2)


def test_charging_time_monotone():
    d = np.linspace(0.05, 2.5, 100)
    t = DEFAULT_HARVEST.charging_time_ms(d)
    assert np.all(np.diff(t) > 0)
    office = DEFAULT_HARVEST.charging_time_ms(d, 0.0, OFFICE_LUX)
    assert np.all(office < t)


def test_never_charges():
    with pytest.raises(NeverCharges):
        charging_time_ms(0.4, 10.0, leakage_uw=0.5)
    with pytest.raises(NeverCharges):
        DEFAULT_HARVEST.charging_time_ms(1.0, 90.0)


def test_calibration_other_break_even():
    hm = calibrate_harvest(break_even_m=1.5)
    assert hm.harvest_uw(1.5) == pytest.approx(phase_power_uw("tx", 2.0))


def test_ledger_never_negative():
    led = EnergyLedger(10.0, stored_uj=1.0)
    assert led.step(1000.0, "tx") == 0.0
    assert led.step(100.0, "idle") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        EnergyLedger(-1.0)
    with pytest.raises(ValueError):
        led.phase_power("sleep")


def test_link_feasible():
    near = EnergyLedger.at_voltage(DEFAULT_HARVEST.harvest_uw(1.0))
    far = EnergyLedger.at_voltage(DEFAULT_HARVEST.harvest_uw(2.0))
    assert link_feasible(near, "tx") and link_feasible(near, "rx")
    assert not link_feasible(far, "tx")
    assert EnergyLedger.at_voltage(100.0, 2.6).rx_power_uw == 125.8
