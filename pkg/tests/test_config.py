import pytest

from fedlesam.config import DEFAULT_RHO, config_hash, env_seed, load_config, parse_config
from fedlesam.models import ContractError

MINIMAL = 'algorithm = "fedlesam"\n[data]\nkind = "blobs"\n'


def test_minimal_config_gets_defaults():
    rc = parse_config(MINIMAL)
    cfg = rc.experiment
    assert cfg.eta_g == 1.0 and cfg.lr_decay == 0.998
    assert cfg.algorithm.name == "fedlesam" and cfg.algorithm.perturbation.rho == 0.01
    assert cfg.model.kind == "mlp" and cfg.model.in_dim == 2 and cfg.model.n_classes == 10


@pytest.mark.parametrize("name,rho", [("fedsam", 0.01), ("fedlesam", 0.01), ("fedlesam-s", 0.1),
                                      ("fedlesam-d", 0.1), ("fedgamma", 0.1)])
def test_rho_defaults(name, rho):
    assert parse_config(f'algorithm = "{name}"').experiment.algorithm.perturbation.rho == rho == DEFAULT_RHO[name]


def test_quadratic_infers_model():
    cfg = parse_config('algorithm = "fedavg"\n[data]\nkind = "quadratic"\ndim = 3\n').experiment
    assert cfg.model.kind == "quadratic" and cfg.model.n_params == 3


@pytest.mark.parametrize("text,key", [
    ('algorithm = "fedavg"\nactive_ratio = 0', "active_ratio"),
    ('algorithm = "fedavg"\nbogus = 1', "bogus"),
    ('algorithm = "fedavg"\n[data]\nbogus = 1', "data.bogus"),
    ('algorithm = "fedavg"\n[model]\nlayers = 3', "model.layers"),
    ('algorithm = "fedavg"\nrounds = "ten"', "rounds"),
    ('algorithm = "fedavg"\nrounds = true', "rounds"),
    ('algorithm = "fedavg"\nlr_decay = 1.5', "lr_decay"),
    ('algorithm = "fedavg"\nrho = 0.1', "rho"),
    ('algorithm = "fedlesam"\nbeta = 1.0', "beta"),
    ('algorithm = "fedlesam"\nrho = -1.0', "rho"),
    ('algorithm = "feddyn"\nbeta = 0.0', "beta"),
    ('algorithm = "fedavg"\n[data]\ndirichlet_beta = 0.0', "data.dirichlet_beta"),
    ('algorithm = "fedavg"\n[data]\nkind = "cifar"', "data.kind"),
    ('algorithm = "fedavg"\n[model]\nkind = "quadratic"', "model.kind"),
    ('algorithm = "fedavg"\n[output]\nsurface_resolution = 4', "output.surface_resolution"),
    ('rounds = 3', "algorithm"),
])
def test_rejections_name_the_key(text, key):
    with pytest.raises(ContractError) as info:
        parse_config(text)
    assert str(info.value).startswith(f"{key}:")


def test_fedsmoo_unsupported():
    with pytest.raises(ContractError, match="unsupported.*README"):
        parse_config('algorithm = "fedsmoo"')


def test_invalid_toml():
    with pytest.raises(ContractError, match="TOML"):
        parse_config("algorithm = ")


def test_hash_is_canonical():
    a = parse_config('algorithm = "fedavg"\nrounds = 5\n[data]\nkind = "blobs"\n')
    b = parse_config('rounds=5\nalgorithm="fedavg"\n\n[data]\n  kind = "blobs"  # comment\n')
    assert a.hash == b.hash
    assert a.hash != parse_config('algorithm = "fedavg"\nrounds = 6\n[data]\nkind = "blobs"\n').hash
    assert len(a.hash) == 64
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})


def test_seed_override(monkeypatch, tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('algorithm = "fedavg"\nseed = 3\n')
    assert load_config(path).experiment.seed == 3
    monkeypatch.setenv("FEDLESAM_SEED", "42")
    assert env_seed() == 42
    rc = load_config(path)
    assert rc.experiment.seed == 42
    assert rc.hash == parse_config('algorithm = "fedavg"\nseed = 42\n').hash
    monkeypatch.setenv("FEDLESAM_SEED", "x")
    with pytest.raises(ContractError, match="FEDLESAM_SEED"):
        load_config(path)
