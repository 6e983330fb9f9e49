import csv
import json

import pytest
from pydantic import ValidationError

from app.api.commands import router
from app.core.exceptions import DomainError, InputValidationError
from app.main import EXIT_CONFIG, EXIT_OK, main, run
from app.models.schemas import CommandName, ExperimentConfig
from app.utils.file_handler import FileHandler


def _read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_qfi_command(tmp_path):
    """Команда qfi пишет CSV и файл описания запуска"""
    out = tmp_path / "qfi.csv"
    code = main(["qfi", "--family", "noon", "--N", "6", "--out", str(out)])
    assert code == EXIT_OK
    rows = _read_csv(out)
    assert len(rows) == 1
    assert float(rows[0]["qfi"]) == pytest.approx(36.0)
    assert rows[0]["converged"] == "1"

    sidecar = json.loads((tmp_path / "qfi.csv.json").read_text())
    assert sidecar["command"] == "qfi"
    assert sidecar["version"] == "1.0.0"
    assert sidecar["seed"] == 20140101
    assert list(sidecar) == sorted(sidecar)


def test_rerun_is_byte_identical(tmp_path):
    out = tmp_path / "curve.csv"
    argv = ["qfi", "--family", "cosine", "--N", "8", "--grid", "0.001,0.01", "--out", str(out)]
    assert main(argv) == EXIT_OK
    first = out.read_bytes()
    assert main(argv) == EXIT_OK
    assert out.read_bytes() == first
    assert b"\r\n" not in first
    assert len(_read_csv(out)) == 2


def test_flags_override_config_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"family": "noon", "n_qubits": 4, "noise": {"Gamma0": 0.5}}))
    out = tmp_path / "override.csv"
    assert main(["qfi", "--config", str(config), "--N", "6", "--gamma0", "0", "--out", str(out)]) == EXIT_OK
    row = _read_csv(out)[0]
    assert row["N"] == "6"
    assert row["family"] == "noon"
    assert float(row["qfi"]) == pytest.approx(36.0)


def test_invalid_family_exits_with_config_error(tmp_path):
    assert main(["qfi", "--family", "squeezed", "--N", "4", "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_unsorted_grid_rejected(tmp_path):
    argv = ["qfi", "--N", "4", "--grid", "0.1,0.01", "--out", str(tmp_path / "x.csv")]
    assert main(argv) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["qfi", "--config", str(tmp_path / "absent.json"), "--N", "4"]) == EXIT_CONFIG


def test_unknown_command():
    with pytest.raises(SystemExit) as excinfo:
        main(["teleport"])
    assert excinfo.value.code == 2


def test_thresholds_command(tmp_path):
    out = tmp_path / "thresholds.csv"
    assert main(["thresholds", "--ks", "2", "--restarts", "2", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out)
    assert rows[0]["k"] == "2"
    assert float(rows[0]["Gamma0_c"]) == pytest.approx(0.251, abs=0.002)


def test_semiclassical_writes_profile_table(tmp_path):
    out = tmp_path / "semi.csv"
    assert main(["semiclassical", "--gamma0", "0.01", "--N", "100", "--out", str(out)]) == EXIT_OK
    row = _read_csv(out)[0]
    assert row["potential"] == "box"
    profile = _read_csv(tmp_path / "semi.profile.csv")
    assert len(profile) == 1001
    sidecar = json.loads((tmp_path / "semi.csv.json").read_text())
    assert sidecar["tables"] == {"profile": "semi.profile.csv"}


def test_cluster_with_chart(tmp_path):
    out = tmp_path / "cluster.csv"
    argv = ["cluster", "--gamma0", "0.01", "--alpha-source", "table", "--svg", "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert (tmp_path / "cluster.svg").exists()
    summary = json.loads((tmp_path / "cluster.csv.json").read_text())["summary"]
    assert summary["mu0_star"] == pytest.approx(9.8696, rel=0.01)


def test_cluster_rejects_individual_channel(tmp_path):
    argv = ["cluster", "--channel", "individual", "--igamma0", "0.01", "--gamma0", "0.01",
            "--alpha-source", "table", "--out", str(tmp_path / "c.csv")]
    assert main(argv) == EXIT_CONFIG


def test_format_value():
    assert FileHandler.format_value(0.1) == "0.10000000000000001"
    assert FileHandler.format_value(True) == "1"
    assert FileHandler.format_value(7) == "7"
    assert FileHandler.format_value(float("nan")) == "nan"


def test_loss_parameters_require_qubit_number():
    with pytest.raises(ValidationError):
        ExperimentConfig(command="loss", r1=10.0)
    config = ExperimentConfig(command="loss", r1=10.0, n_qubits=30)
    assert config.noise.gamma1 == pytest.approx(0.28768207245178085)


@pytest.mark.slow
def test_loss_command_overlap(tmp_path):
    out = tmp_path / "loss.csv"
    argv = ["loss", "--N", "30", "--r1", "100", "--gamma0", "0.25", "--restarts", "3", "--out", str(out)]
    assert main(argv) == EXIT_OK
    summary = json.loads((tmp_path / "loss.csv.json").read_text())["summary"]
    assert summary["N=30"]["overlap"] >= 0.98
    assert round(100 * summary["N=30"]["transmittivity1"]) == 23


def test_csv_fields_with_commas_are_quoted(tmp_path):
    path = FileHandler.write_csv(str(tmp_path / "t.csv"), ["name", "value"], [["a,b", 0.5], ["plain", 1]])
    rows = _read_csv(path)
    assert rows[0] == {"name": "a,b", "value": "0.5"}
    assert rows[1]["value"] == "1"
    with pytest.raises(InputValidationError):
        FileHandler.write_csv(str(tmp_path / "bad.csv"), ["a", "b"], [[1]])


def test_default_output_goes_to_results_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["qfi", "--family", "noon", "--N", "2"]) == EXIT_OK
    assert (tmp_path / "results" / "qfi.csv").exists()
    assert (tmp_path / "results" / "qfi.csv.json").exists()


def test_numerical_value_error_is_not_reported_as_config_error(tmp_path, monkeypatch):
    """Ошибка вычислений не маскируется под ошибку конфигурации"""
    config = ExperimentConfig(command="qfi", n_qubits=2, output=str(tmp_path / "x.csv"))

    def broken(_):
        raise ValueError("math domain error")

    monkeypatch.setitem(router._handlers, CommandName.QFI, broken)
    with pytest.raises(ValueError, match="math domain error"):
        run(config)

    def rejected(_):
        raise DomainError("N вне допустимого диапазона")

    monkeypatch.setitem(router._handlers, CommandName.QFI, rejected)
    assert run(config) == EXIT_CONFIG


def test_cluster_rows_describe_themselves(tmp_path):
    out = tmp_path / "cluster.csv"
    assert main(["cluster", "--gamma0", "0.01", "--alpha-source", "table", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out)
    summary = json.loads((tmp_path / "cluster.csv.json").read_text())["summary"]
    assert rows[0]["N"] == str(round(summary["n_c"]))
    assert float(rows[0]["Gamma0"]) == pytest.approx(0.01)
    assert {"n_c", "mu0", "alpha", "beta"} <= set(rows[0])
