import pytest
from yaml import dump

from bucketmirror.config import MirrorConfig, load_config, parse_bool, with_overrides
from bucketmirror.durable import RetryPolicy
from bucketmirror.errors import ConfigError
from bucketmirror.objects import MiB


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "mirror.yml"
    path.write_text(
        dump(
            {
                "db": "sqlite:///from-file.db",
                "listen": "127.0.0.1:7000",
                "part_size": "32MiB",
                "concurrency": 8,
                "worker_concurrency": 4,
                "retry": {"max_attempts": 5, "base_delay": 0.1},
                "faults": {"denied_keys": ["reads/b.fastq.gz"], "latency": 0.01},
            }
        )
    )
    return str(path)


class TestLoading:
    def test_defaults(self):
        config = load_config(environ={})
        assert config.part_size == 16 * MiB
        assert config.global_max_inflight == 3500
        assert config.throttle_config().per_worker_share == 3500
        assert not config.test_mode

    def test_file(self, config_file):
        config = load_config(config_file, environ={})
        assert config.db_path == "from-file.db"
        assert config.port == 7000
        assert config.part_size == 32 * MiB
        assert config.retry == RetryPolicy(max_attempts=5, base_delay=0.1)
        assert config.faults.denied_keys == {"reads/b.fastq.gz"}
        assert config.queue_config().worker_concurrency == 4

    def test_precedence(self, config_file):
        environ = {"MIRROR_LISTEN": "0.0.0.0:7001", "MIRROR_DB": "env.db", "MIRROR_TEST_MODE": "1"}
        config = load_config(config_file, {"db": "flag.db", "listen": None}, environ)
        assert config.db == "flag.db"
        assert config.listen == "0.0.0.0:7001"
        assert config.test_mode

    def test_file_from_environment(self, config_file):
        assert load_config(environ={"MIRROR_CONFIG": config_file}).port == 7000

    def test_save_and_reload(self, tmp_path, config_file):
        config = load_config(config_file, environ={})
        path = tmp_path / "saved.yml"
        config.save(str(path))
        assert load_config(str(path), environ={}) == config


class TestValidation:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"worker_concurrency": 100, "concurrency": 10},
            {"part_size": 4 * MiB},
            {"part_size": 256 * MiB},
            {"per_worker_share": 2000, "max_workers": 2},
            {"backend": "ftp"},
            {"listen": "nohost"},
            {"staleness": 1, "heartbeat_interval": 2},
            {"verify": "md5"},
            {"test_mode": "maybe"},
            {"concurrency": "many"},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            load_config(overrides=overrides, environ={})

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.yml"
        path.write_text("part_sise: 16MiB\n")
        with pytest.raises(ConfigError, match="part_sise"):
            load_config(str(path), environ={})

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.yml"), environ={})

    def test_with_overrides(self):
        config = with_overrides(MirrorConfig(), concurrency=4, worker_concurrency=2)
        assert config.queue_config().concurrency == 4
        with pytest.raises(ConfigError):
            with_overrides(config, worker_concurrency=8)

    @pytest.mark.parametrize("text,value", [("1", True), ("yes", True), ("off", False), ("", False)])
    def test_parse_bool(self, text, value):
        assert parse_bool(text) is value
