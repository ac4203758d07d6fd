import json
import os

import pytest

from pyMBTTBF import MBTTBF as net
from pyMBTTBF import scale_mrf
from pyMBTTBF import training
from pyMBTTBF.MBTTBFConfigFileInterface import MBTTBFConfigFileInterface, ParserError
from pyMBTTBF.PyMBTTBF import PyMBTTBF
from pyMBTTBF.exceptions import ConfigError


TEST_CONFIG = os.path.join(os.path.dirname(__file__), 'Config_Test.txt')


def test_defaults():
    params = MBTTBFConfigFileInterface.get_data({})
    assert list(params) == list(MBTTBFConfigFileInterface.DEFAULTS)
    assert params['topology'] == net.MBTTBF
    assert params['sigma_method'] == 'mrf'
    assert params['learning_rate'] == training.LEARNING_RATE
    assert params['out_dir'] == 'output'
    assert params['train_manifest'] is None
    assert params['ablation_configs'] == list(training.ABLATION_LADDER)
    # defaults are not shared between runs
    params['ablation_seeds'].append(7)
    assert MBTTBFConfigFileInterface.get_data({})['ablation_seeds'] == [0, 1, 2]


def test_key_value_file():
    setup = MBTTBFConfigFileInterface()
    params = setup.load(TEST_CONFIG)
    assert setup.ready
    assert params['topology'] == net.BT
    assert params['dr_channels'] == 8
    assert params['epochs'] == 1
    assert params['optim_seed'] == 2
    assert params['sigma_method'] == 'knn'
    assert params['train_manifest'] is None
    assert params['ablation_configs'] == ['NONE']
    assert params['ablation_seeds'] == [0]


def test_json_file(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'topology': 'TB', 'use_scfb': False, 'ablation_seeds': [3, 4],
                                'mrf_background_cost': 0.5}))
    params = MBTTBFConfigFileInterface().load(str(path))
    assert params['topology'] == net.TB
    assert params['use_scfb'] is False
    assert params['ablation_seeds'] == [3, 4]
    assert params['mrf_background_cost'] == 0.5


def test_bad_json_file(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        MBTTBFConfigFileInterface().load(str(path))


def test_overrides_take_precedence():
    params = MBTTBFConfigFileInterface().load(TEST_CONFIG, {'epochs': '5', 'topology': None})
    assert params['epochs'] == 5
    assert params['topology'] == net.BT


def test_unknown_key():
    with pytest.raises(ConfigError) as info:
        MBTTBFConfigFileInterface.get_data({'learning_rat': '1e-3'})
    assert 'learning_rat' in str(info.value)


@pytest.mark.parametrize('key, value, type_name', [
    ('epochs', 'many', 'int'),
    ('epochs', 2.5, 'int'),
    ('use_scfb', 'maybe', 'bool'),
    ('learning_rate', 'fast', 'float'),
    ('ablation_seeds', 'a,b', 'list of int'),
    ('mrf_n_segments', 'x', 'optional int'),
])
def test_parser_error(key, value, type_name):
    with pytest.raises(ParserError) as info:
        MBTTBFConfigFileInterface.get_data({key: value})
    assert info.value.param == key
    assert info.value.type == type_name


def test_boolean_spellings():
    for value, expected in (('yes', True), ('0', False), ('On', True), (False, False)):
        assert MBTTBFConfigFileInterface.get_data({'use_scfb': value})['use_scfb'] is expected


def test_run_without_configuration(capsys):
    assert MBTTBFConfigFileInterface().run('train') is None
    assert 'will not be run' in capsys.readouterr().out


def test_driver_configuration_objects():
    params = MBTTBFConfigFileInterface().load(TEST_CONFIG, {'mrf_background_cost': '0.5'})
    driver = PyMBTTBF(params)
    network = driver.network_config()
    assert (network.topology, network.dr_channels, network.rng_seed) == (net.BT, 8, 1)
    optim = driver.optim_config()
    assert (optim.learning_rate, optim.epochs, optim.rng_seed) == (1e-3, 1, 2)
    assert driver.loss_config().lambda_side == training.LAMBDA_SIDE
    assert driver.mrf_config().background_cost == 0.5
    assert driver.mrf_config().uses_color


def test_invalid_values_surface_as_config_errors():
    driver = PyMBTTBF(MBTTBFConfigFileInterface.get_data({'topology': 'FPN'}))
    with pytest.raises(ConfigError):
        driver.network_config()
    driver = PyMBTTBF(MBTTBFConfigFileInterface.get_data({'batch_size': '0'}))
    with pytest.raises(ConfigError):
        driver.optim_config()


def test_mrf_defaults_to_color_aware_preset():
    cfg = PyMBTTBF(MBTTBFConfigFileInterface.get_data({})).mrf_config()
    assert cfg.color_weight == scale_mrf.COLOR_WEIGHT
    assert cfg.background_cost == scale_mrf.BACKGROUND_COST
    assert (cfg.gamma, cfg.color_tau, cfg.max_sweeps) == (scale_mrf.MRF_GAMMA,
                                                          scale_mrf.COLOR_TAU,
                                                          scale_mrf.MAX_SWEEPS)
    cfg = PyMBTTBF(MBTTBFConfigFileInterface.get_data(
        {'mrf_color_aware': 'yes', 'mrf_color_weight': '2.5'})).mrf_config()
    assert (cfg.color_weight, cfg.background_cost) == (2.5, scale_mrf.BACKGROUND_COST)


def test_plain_mrf():
    cfg = PyMBTTBF(MBTTBFConfigFileInterface.get_data({'mrf_color_aware': '0'})).mrf_config()
    assert not cfg.uses_color
    assert cfg.background_cost is None
