"""A2G channel tests: geometry, LoS mixing, path loss and RSSI.

The numeric anchors below were computed by hand from the closed-form
pieces (free-space reference, sigmoid LoS probability, log-distance
components) so regressions in any one stage are caught independently.
"""

import math

import pytest

from flyora import channel as ch
from flyora import phy


def test_position_distance():
    a = ch.Position3D(0.0, 0.0, 0.0)
    b = ch.Position3D(3.0, 4.0, 12.0)
    assert a.distance_to(b) == pytest.approx(13.0)
    assert b.distance_to(a) == pytest.approx(13.0)


def test_free_space_reference_loss():
    # 20 log10(4 pi d0 f / c) at d0 = 1 m, f = 868 MHz
    expected = 20.0 * math.log10(4.0 * math.pi * 868e6 / ch.LIGHT_SPEED_M_S)
    assert ch.free_space_path_loss() == pytest.approx(expected, abs=1e-12)
    assert ch.free_space_path_loss() == pytest.approx(31.218177725413213,
                                                      abs=1e-12)
    # doubling the reference distance adds ~6.02 dB
    far = ch.ChannelConfig(reference_distance_m=2.0)
    assert ch.free_space_path_loss(far) - ch.free_space_path_loss() == \
        pytest.approx(20.0 * math.log10(2.0), abs=1e-12)


def test_elevation_angle_cases():
    gw = ch.Position3D(0.0, 0.0, 300.0)
    assert ch.elevation_angle(ch.Position3D(0.0, 0.0, 0.0), gw) == \
        pytest.approx(90.0)
    # ground offset chosen so the slant is exactly twice the altitude
    ground = math.sqrt(600.0 ** 2 - 300.0 ** 2)
    assert ch.elevation_angle(ch.Position3D(ground, 0.0, 0.0), gw) == \
        pytest.approx(30.0)
    assert ch.elevation_angle(ch.Position3D(300.0, 0.0, 0.0), gw) == \
        pytest.approx(45.0)
    with pytest.raises(ch.ZeroDistanceError):
        ch.elevation_angle(gw, gw)
    with pytest.raises(ValueError):
        ch.elevation_angle(ch.Position3D(0.0, 0.0, 400.0), gw)


def test_los_probability_sigmoid():
    # at theta == alpha the sigmoid gives 1 / (1 + alpha)
    assert ch.los_probability(9.61) == pytest.approx(1.0 / 10.61, abs=1e-12)
    assert ch.los_probability(30.0) == pytest.approx(0.7309790961454965,
                                                     abs=1e-12)
    assert ch.los_probability(90.0) == pytest.approx(0.999975074537903,
                                                     abs=1e-12)
    thetas = [5.0, 15.0, 30.0, 60.0, 89.0]
    probs = [ch.los_probability(t) for t in thetas]
    assert all(a < b for a, b in zip(probs, probs[1:]))
    assert all(0.0 < p < 1.0 for p in probs)


def test_a2g_path_loss_mixture():
    gw = ch.Position3D(0.0, 0.0, 300.0)
    ed = ch.Position3D(math.sqrt(600.0 ** 2 - 300.0 ** 2), 0.0, 0.0)
    # hand-assembled: p_los * (l_fs + 20 log10 d) + (1 - p_los) * (l_fs + 25 log10 d)
    assert ch.a2g_path_loss(ed, gw) == pytest.approx(90.5181065351997,
                                                     abs=1e-10)
    # shadowing shifts each component by its own draw
    shadow = ch.ShadowingSample(los_db=2.0, nlos_db=-3.0)
    p = ch.los_probability(30.000000000000004)
    expected = 90.5181065351997 + p * 2.0 + (1.0 - p) * (-3.0)
    assert ch.a2g_path_loss(ed, gw, shadow=shadow) == pytest.approx(expected,
                                                                    abs=1e-9)


def test_a2g_loss_grows_with_distance():
    gw = ch.Position3D(0.0, 0.0, 300.0)
    grounds = [50.0, 200.0, 600.0, 1500.0, 2500.0]
    losses = [ch.a2g_path_loss(ch.Position3D(g, 0.0, 0.0), gw)
              for g in grounds]
    assert all(a < b for a, b in zip(losses, losses[1:]))


def test_a2g_nadir_and_errors():
    gw = ch.Position3D(0.0, 0.0, 300.0)
    nadir = ch.a2g_path_loss(ch.Position3D(0.0, 0.0, 0.0), gw)
    assert nadir == pytest.approx(80.76091153676619, abs=1e-10)
    with pytest.raises(ch.ZeroDistanceError):
        ch.a2g_path_loss(gw, gw)


def test_equal_exponents_collapse_the_mixture():
    # with beta_los == beta_nlos and no shadowing the LoS split cannot matter
    cfg = ch.ChannelConfig(beta_los=2.0, beta_nlos=2.0)
    gw = ch.Position3D(0.0, 0.0, 300.0)
    ed = ch.Position3D(400.0, 0.0, 0.0)
    expected = ch.free_space_path_loss(cfg) + 20.0 * math.log10(500.0)
    assert ch.a2g_path_loss(ed, gw, cfg) == pytest.approx(expected, abs=1e-12)


def test_rssi_and_noise_power():
    assert ch.rssi(14.0, 100.0) == -86.0
    assert ch.rssi(2.0, 127.53) == pytest.approx(-125.53)
    # sensitivity boundary: an SF7 uplink at exactly zeta is still decodable
    assert phy.is_decodable(ch.rssi(2.0, 2.0 - phy.sensitivity(7)), 7)
    assert ch.noise_power_dbm() == pytest.approx(-118.03089986991944,
                                                 abs=1e-10)


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ch.ChannelConfig(beta_los=0.0)
    with pytest.raises(ValueError):
        ch.ChannelConfig(sigma_los_db=-1.0)
    with pytest.raises(ValueError):
        ch.ChannelConfig(reference_distance_m=0.0)
    cfg = ch.ChannelConfig(sigma_los_db=0.0, sigma_nlos_db=0.0)
    assert cfg.sigma_los_db == 0.0
