"""Shared builders for the test suite."""

import numpy as np

from damsec.channel import (SPEED_OF_LIGHT, ArrayConfig, ChannelSet,
                            MultipathChannel, PathComponent, ScenarioConfig,
                            generate_channels)

CARRIER_WAVELENGTH = SPEED_OF_LIGHT / 28e9
BANDWIDTH = 128e6
NOISE_VAR = 4.0468e-12  # -174 dBm/Hz + 9 dB NF over 128 MHz, in watts


def make_array(n_ant=16, bandwidth=BANDWIDTH):
    return ArrayConfig(num_antennas=n_ant, carrier_wavelength=CARRIER_WAVELENGTH,
                       bandwidth=bandwidth)


def make_scenario(n_ant=16, num_ues=2, num_sensing_paths=2, num_ue_paths=3,
                  num_eve_paths=3, total_power=1.0, noise_var=NOISE_VAR,
                  seed=0, ue_positions=None, target=(14.0, 4.0),
                  eve=(32.0, 3.0)):
    if ue_positions is None:
        ue_positions = [(18.0, 12.0), (26.0, -5.0), (22.0, 2.0)][:num_ues]
    return ScenarioConfig(
        array=make_array(n_ant),
        num_ues=num_ues,
        target_position=target,
        ue_positions=list(ue_positions),
        eve_position=eve,
        num_sensing_paths=num_sensing_paths,
        num_ue_paths=num_ue_paths,
        num_eve_paths=num_eve_paths,
        noise_var_probing=noise_var,
        noise_var_sensing=noise_var,
        noise_var_ue=noise_var,
        noise_var_eve=noise_var,
        total_power=total_power,
        seed=seed,
    )


def make_channels(seed=0, **kwargs):
    scen = make_scenario(seed=seed, **kwargs)
    return generate_channels(scen, np.random.default_rng(seed)), scen


def manual_channel(cfg, entries, role="ue0", eta=0.0):
    """Channel from explicit (gain, angle_rad, tap) triples; LoS first."""
    paths = [PathComponent(gain=g, angle=a, delay=eta + n / cfg.bandwidth,
                           discrete_delay=n, is_los=(i == 0))
             for i, (g, a, n) in enumerate(entries)]
    return MultipathChannel(paths=paths, timing_reference=eta, role=role)


def manual_channel_set(cfg, sensing, ues, eve):
    return ChannelSet(sensing=sensing, ues=ues, eve=eve)
