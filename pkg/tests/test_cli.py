import json
import subprocess
import sys
import threading
import time

import pytest

from energymon.cli import main
from energymon.mqtt.broker import MqttBroker

from test_config import write_cluster_files


@pytest.fixture
def cluster_cfg(tmp_path):
    return write_cluster_files(tmp_path)


def run_cli(*argv):
    return main(list(argv))


class TestDispatch:
    def test_no_verb_is_usage_error(self, capsys):
        assert run_cli() == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_verb(self, capsys):
        assert run_cli("explode") == 1

    def test_unknown_flag_rejected(self, capsys, cluster_cfg):
        assert run_cli("simulate", "--config", str(cluster_cfg), "--t-end", "1ms",
                       "--frobnicate") == 1

    @pytest.mark.parametrize(
        "verb", ["broker", "hub", "node", "simulate", "gen-profile", "query", "export"]
    )
    def test_every_verb_has_help(self, verb, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(verb, "--help")
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert verb in out or "usage" in out

    def test_bad_duration_is_usage_error(self, capsys, cluster_cfg):
        assert run_cli("simulate", "--config", str(cluster_cfg), "--t-end", "5parsecs") == 1
        assert "error" in capsys.readouterr().err


class TestSimulate:
    def test_happy_path(self, capsys, cluster_cfg, tmp_path):
        store = tmp_path / "store.jsonl"
        code = run_cli("simulate", "--config", str(cluster_cfg),
                       "--t-end", "2ms", "--seed", "42", "--store", str(store))
        captured = capsys.readouterr()
        assert code == 0
        lines = captured.out.splitlines()
        assert len(lines) == 1  # one (node, rail) summary object
        row = json.loads(lines[0])
        assert row["node"] == "n1" and row["rail"] == "vdd_core"
        assert row["records"] > 0
        assert store.exists()

    def test_deterministic_rerun(self, capsys, cluster_cfg, tmp_path):
        outputs, blobs = [], []
        for name in ("a", "b"):
            store = tmp_path / f"{name}.jsonl"
            assert run_cli("simulate", "--config", str(cluster_cfg),
                           "--t-end", "2ms", "--seed", "7", "--store", str(store)) == 0
            outputs.append(capsys.readouterr().out)
            blobs.append(store.read_bytes())
        assert outputs[0] == outputs[1]
        assert blobs[0] == blobs[1]

    def test_missing_config_is_runtime_error(self, capsys, tmp_path):
        assert run_cli("simulate", "--config", str(tmp_path / "nope.cfg"),
                       "--t-end", "1ms") == 2
        assert "energymon:" in capsys.readouterr().err

    def test_plot_dir(self, capsys, cluster_cfg, tmp_path):
        plots = tmp_path / "figs"
        assert run_cli("simulate", "--config", str(cluster_cfg), "--t-end", "2ms",
                       "--plot-dir", str(plots)) == 0
        pngs = sorted(p.name for p in plots.glob("*.png"))
        assert pngs == ["energy_summary.png", "power_series.png"]
        for p in plots.glob("*.png"):
            assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestGenProfile:
    def test_step_profile_written(self, capsys, tmp_path):
        out = tmp_path / "p.cfg"
        code = run_cli("gen-profile", "--kind", "step", "--low", "0.5", "--high", "2.0",
                       "--period", "20ms", "--count", "5", "-o", str(out))
        assert code == 0
        from energymon.config import load_profile

        profile = load_profile(out)
        assert len(profile.phases) == 10

    def test_constant_requires_flags(self, capsys, tmp_path):
        assert run_cli("gen-profile", "--kind", "constant",
                       "-o", str(tmp_path / "p.cfg")) == 1
        assert "--current" in capsys.readouterr().err

    def test_ann_epoch_defaults(self, capsys, tmp_path):
        out = tmp_path / "ann.cfg"
        assert run_cli("gen-profile", "--kind", "ann-epoch", "-o", str(out)) == 0
        from energymon.config import load_profile

        profile = load_profile(out)
        assert len(profile.phases) == 4
        assert profile.repeat == 10


class TestQueryExport:
    @pytest.fixture
    def populated_store(self, cluster_cfg, tmp_path, capsys):
        store = tmp_path / "store.jsonl"
        assert run_cli("simulate", "--config", str(cluster_cfg),
                       "--t-end", "2ms", "--store", str(store)) == 0
        capsys.readouterr()
        return store

    def test_query_happy_path(self, capsys, populated_store):
        code = run_cli("query", "--store", str(populated_store), "--node", "n1",
                       "--rail", "vdd_core", "--from", "0", "--to", "2ms")
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["found"] is True
        assert result["e_j"] > 0
        assert result["p_w"] == pytest.approx(result["e_j"] / 0.002)

    def test_query_unknown_series(self, capsys, populated_store):
        assert run_cli("query", "--store", str(populated_store), "--node", "ghost",
                       "--rail", "vdd_core", "--from", "0", "--to", "1ms") == 0
        result = json.loads(capsys.readouterr().out)
        assert result == {"node": "ghost", "rail": "vdd_core", "t0_ns": 0,
                          "t1_ns": 1_000_000, "e_j": 0.0, "p_w": 0.0, "found": False}

    def test_query_without_store_flag_is_usage_error(self, capsys):
        assert run_cli("query", "--node", "n1", "--rail", "vdd_core",
                       "--from", "0", "--to", "1s") == 1
        err = capsys.readouterr().err
        assert "usage" in err and "--store" in err

    def test_query_missing_store_file(self, capsys, tmp_path):
        assert run_cli("query", "--store", str(tmp_path / "gone.jsonl"), "--node", "n1",
                       "--rail", "vdd_core", "--from", "0", "--to", "1s") == 2

    def test_export_csv(self, capsys, populated_store, tmp_path):
        out = tmp_path / "out.csv"
        assert run_cli("export", "--store", str(populated_store), "-o", str(out)) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "node,rail,ts_ns,i_a,v_v,e_j,window_ns,seq"
        assert len(lines) > 1

    def test_export_filters_and_plot(self, capsys, populated_store, tmp_path):
        out = tmp_path / "sub"
        out.mkdir()
        csv_path = out / "out.csv"
        assert run_cli("export", "--store", str(populated_store), "-o", str(csv_path),
                       "--node", "n1", "--rail", "vdd_core", "--plot") == 0
        assert csv_path.exists()
        png = out / "power_series.png"
        assert png.exists() and png.read_bytes()[:4] == b"\x89PNG"

    def test_export_empty_filter(self, capsys, populated_store, tmp_path):
        out = tmp_path / "empty.csv"
        assert run_cli("export", "--store", str(populated_store), "-o", str(out),
                       "--node", "ghost") == 0
        assert out.read_text().splitlines() == ["node,rail,ts_ns,i_a,v_v,e_j,window_ns,seq"]


class TestDistributedMode:
    def test_broker_verb_subprocess(self):
        proc = subprocess.run(
            [sys.executable, "-m", "energymon.cli", "broker", "--port", "0",
             "--run-for", "0.3"],
            capture_output=True, text=True, timeout=30,
        )
        assert proc.returncode == 0
        assert "listening" in proc.stderr

    def test_node_hub_over_tcp(self, cluster_cfg, tmp_path, capsys):
        broker = MqttBroker(port=0)
        broker.start()
        store = tmp_path / "hub-store.jsonl"
        hub_rc = []
        hub_thread = threading.Thread(
            target=lambda: hub_rc.append(
                main(["hub", "--store", str(store),
                      "--broker", f"127.0.0.1:{broker.port}", "--run-for", "3"])
            )
        )
        hub_thread.start()
        time.sleep(0.5)  # let the hub subscribe
        try:
            code = main(["node", "--config", str(cluster_cfg),
                         "--broker", f"127.0.0.1:{broker.port}", "--t-end", "2ms"])
            summary = json.loads(capsys.readouterr().out)
            assert code == 0
            assert summary["published"] > 0
            assert summary["publish_failures"] == 0
        finally:
            hub_thread.join(timeout=15)
            broker.stop()
        assert hub_rc == [0]
        assert run_cli("query", "--store", str(store), "--node", "n1",
                       "--rail", "vdd_core", "--from", "0", "--to", "2ms") == 0
        result = json.loads(capsys.readouterr().out)
        assert result["found"] is True and result["e_j"] > 0

    def test_simulate_external_broker(self, cluster_cfg, capsys):
        broker = MqttBroker(port=0)
        broker.start()
        try:
            code = main(["simulate", "--config", str(cluster_cfg), "--t-end", "2ms",
                         "--broker", f"127.0.0.1:{broker.port}"])
            out = capsys.readouterr().out
        finally:
            broker.stop()
        assert code == 0
        row = json.loads(out.splitlines()[0])
        assert row["records"] > 0
        assert row["seq_losses"] == 0
