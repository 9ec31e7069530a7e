import pytest

from config import Config, ConfigError, DetectionConfig, TestingConfig, config, parse_scales


def test_defaults():
    cfg = DetectionConfig()
    assert cfg.delta_m == 300.0
    assert cfg.eta == 12
    assert cfg.beta == 0.90
    assert cfg.grid_step_s == 600
    assert cfg.active_predicates == {'hasStrongCorrelation', 'hasMediumCorrelation'}
    assert cfg.scale_for('air_temperature') == 1.0


@pytest.mark.parametrize('changes', [
    {'delta_m': 0.0},
    {'delta_m': -5.0},
    {'eta': 11},
    {'eta': 0},
    {'beta': 0.0},
    {'beta': 1.01},
    {'grid_step_s': 0},
    {'value_scales': {'air_temperature': 0.0}},
    {'active_predicates': frozenset()},
    {'workers': 0},
])
def test_invalid_values_raise(changes):
    with pytest.raises(ConfigError):
        DetectionConfig(**changes)


def test_replace_ignores_none():
    cfg = DetectionConfig().replace(beta=0.8, eta=None, delta_m=None)
    assert cfg.beta == 0.8
    assert cfg.eta == 12


def test_replace_validates():
    with pytest.raises(ConfigError):
        DetectionConfig().replace(beta=2.0)


def test_parse_scales():
    assert parse_scales('') == {}
    assert parse_scales('air_temperature=2, relative_humidity=0.5') == {
        'air_temperature': 2.0, 'relative_humidity': 0.5}
    with pytest.raises(ConfigError):
        parse_scales('air_temperature')
    with pytest.raises(ConfigError):
        parse_scales('air_temperature=warm')


def test_from_object_reads_detection_settings():
    class Custom(Config):
        DETECTION_BETA = 0.75
        DETECTION_ETA = 8
        DETECTION_PREDICATES = 'strength'
        DETECTION_VALUE_SCALES = 'air_pressure=0.1'

    cfg = DetectionConfig.from_object(Custom)
    assert cfg.beta == 0.75
    assert cfg.eta == 8
    assert len(cfg.active_predicates) == 5
    assert cfg.scale_for('air_pressure') == 0.1


def test_config_mapping():
    assert config['testing'] is TestingConfig
    assert TestingConfig.RATELIMIT_ENABLED is False
    assert config['default'] is config['development']


def test_to_dict_is_sorted_and_plain():
    cfg = DetectionConfig(value_scales={'b_prop': 2.0, 'a_prop': 1.0})
    data = cfg.to_dict()
    assert list(data['value_scales']) == ['a_prop', 'b_prop']
    assert data['active_predicates'] == ['hasMediumCorrelation', 'hasStrongCorrelation']
