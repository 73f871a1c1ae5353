import json

import pytest

from paqft.cli import DEFAULT_CONFIG, UsageError, load_config, main
from paqft.lattice import LatticePoint

SMALL = ["--set", "samples.count=2", "--set", "caps.lambda_order=2",
         "--set", "caps.locality_order=2", "--set", "caps.sd_order=1"]


def _read(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


# -- config handling -------------------------------------------------------


def test_load_config_overrides_and_defaults():
    cfg = load_config(None, ["lattice.nt=10", "tolerances.kernel=1e-9",
                             "output=elsewhere"])
    assert cfg["lattice"]["nt"] == 10
    assert cfg["lattice"]["nx"] == DEFAULT_CONFIG["lattice"]["nx"]
    assert cfg["tolerances"]["kernel"] == 1e-9
    assert cfg["output"] == "elsewhere"


@pytest.mark.parametrize("override, field", [
    ("lattice.nt=3", "lattice.nt"),
    ("lattice.mass=-1", "lattice.mass"),
    ("caps.degree=9", "caps.degree"),
    ("caps.hbar_window=0", "caps.hbar_window"),
    ("hadamard.mode=weird", "hadamard.mode"),
    ("extract.mode=weird", "extract.mode"),
    ("samples.count=0", "samples.count"),
    ("tolerances.series=0", "tolerances.series"),
])
def test_config_validation_names_field(override, field):
    with pytest.raises(UsageError, match=field.replace(".", r"\.")):
        load_config(None, [override])


def test_missing_config_file():
    with pytest.raises(UsageError, match="not found"):
        load_config("/no/such/config.json", [])


def test_usage_errors_exit_2(tmp_path, capsys):
    out = f"output={tmp_path}"
    assert main(["axioms", "--set", "lattice.nt=3", "--set", out]) == 2
    assert "lattice.nt" in capsys.readouterr().err
    assert main(["axioms", "--set", "suites=[]", "--set", out]) == 2
    assert "empty suite list" in capsys.readouterr().err
    assert main(["axioms", "--set", 'suites=["bogus"]', "--set", out]) == 2
    assert "unknown suite" in capsys.readouterr().err
    assert main(["axioms", "--set", "nonsense", "--set", out]) == 2
    assert "--set expects" in capsys.readouterr().err
    assert main(["no-such-command"]) == 2


def test_undersized_lattice_for_sampled_suites_exit_2(tmp_path, capsys):
    # nt=10 passes the global floor but cannot host a causal triple
    out = f"output={tmp_path}"
    assert main(["axioms", "--set", "lattice.nt=10", "--set", out]) == 2
    assert "nt >= 11" in capsys.readouterr().err
    assert main(["extract-z", "--set", "lattice.nt=10", "--set", out]) == 2
    assert "nt >= 11" in capsys.readouterr().err
    args = ["axioms", "--set", "lattice.nt=10", "--set", out,
            "--set", 'suites=["SD"]'] + SMALL
    assert main(args) == 0
    capsys.readouterr()


def test_invalid_thread_env_rejected(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PAQFT_THREADS", "many")
    code = main(["axioms", "--set", 'suites=["S"]', "--set",
                 f"output={tmp_path}"] + SMALL)
    assert code == 2
    assert "PAQFT_THREADS" in capsys.readouterr().err
    # rejected even by commands that never consult the worker pool
    code = main(["propagators", "--set", f"output={tmp_path}"])
    assert code == 2
    assert "PAQFT_THREADS" in capsys.readouterr().err


# -- propagators ------------------------------------------------------------


def test_propagators_report(tmp_path, capsys):
    code = main(["propagators", "--set", f"output={tmp_path}",
                 "--set", "lattice.nt=8", "--set", "lattice.nx=8"])
    assert code == 0
    rep = _read(tmp_path, "propagators")
    assert rep["pass"] is True
    assert len(rep["kernels"]) == 6
    assert set(rep["checks"]) == set(rep["residuals"])
    assert rep["warnings"] == []
    assert "report written to" in capsys.readouterr().out


def test_propagators_zero_mass_warns_and_fails_H3(tmp_path):
    # the massless zero mode is dropped from the Hadamard sum (warning)
    # but stays in the commutator, so no positive state exists: H3 must
    # genuinely fail and the command must say so
    code = main(["propagators", "--set", f"output={tmp_path}",
                 "--set", "lattice.nt=8", "--set", "lattice.nx=10",
                 "--set", "lattice.mass=0"])
    assert code == 1
    rep = _read(tmp_path, "propagators")
    assert any("zero mode" in w for w in rep["warnings"])
    assert rep["checks"]["H3_gram_min_eigenvalue"] is False
    others = {k: v for k, v in rep["checks"].items()
              if k != "H3_gram_min_eigenvalue"}
    assert all(others.values())


def test_propagators_strict_tolerance_exit_1(tmp_path):
    code = main(["propagators", "--set", f"output={tmp_path}",
                 "--set", "lattice.nt=6", "--set", "lattice.nx=6",
                 "--set", "tolerances.kernel=1e-30"])
    assert code == 1
    assert _read(tmp_path, "propagators")["pass"] is False


# -- axioms -----------------------------------------------------------------


def test_axioms_deterministic_across_runs_and_threads(tmp_path, monkeypatch,
                                                      capsys):
    args = ["axioms", "--set", f"output={tmp_path}",
            "--set", 'suites=["S"]'] + SMALL
    monkeypatch.setenv("PAQFT_THREADS", "1")
    assert main(args) == 0
    out1 = capsys.readouterr().out
    blob1 = (tmp_path / "axioms.json").read_bytes()
    assert main(args) == 0
    out2 = capsys.readouterr().out
    blob2 = (tmp_path / "axioms.json").read_bytes()
    monkeypatch.setenv("PAQFT_THREADS", "4")
    assert main(args) == 0
    out3 = capsys.readouterr().out
    blob3 = (tmp_path / "axioms.json").read_bytes()
    assert blob1 == blob2 == blob3
    assert out1 == out2 == out3


def test_axioms_all_suites_small(tmp_path, capsys):
    code = main(["axioms", "--set", f"output={tmp_path}"] + SMALL)
    assert code == 0
    rep = _read(tmp_path, "axioms")
    assert rep["pass"] is True
    suites = {r["suite"] for r in rep["rows"]}
    assert suites == {"S", "Z", "SD", "hammerstein"}
    for r in rep["rows"]:
        assert {"suite", "axiom", "order", "sample-id", "residual",
                "pass"} <= set(r)
    ham = [r for r in rep["rows"] if r["suite"] == "hammerstein"]
    assert ham and all("padd" in r and not r["rejected"] for r in ham)
    sd = [r for r in rep["rows"] if r["suite"] == "SD"]
    assert sd and all("bound" in r and not r["flagged"] for r in sd)
    out = capsys.readouterr().out
    assert out.count("PASS") >= 4


def test_axioms_perturbed_hadamard_flags_sd(tmp_path):
    code = main(["axioms", "--set", f"output={tmp_path}",
                 "--set", 'suites=["SD"]',
                 "--set", "hadamard.mode=perturbed"] + SMALL)
    assert code == 0
    rep = _read(tmp_path, "axioms")
    sd = [r for r in rep["rows"] if r["suite"] == "SD"]
    assert sd and all(r["flagged"] for r in sd)
    assert all(r["bound"] > 1e-8 for r in sd)


# -- extract-z ---------------------------------------------------------------


def test_extract_roundtrip(tmp_path):
    code = main(["extract-z", "--set", f"output={tmp_path}",
                 "--set", "extract.functionals=2"] + SMALL)
    assert code == 0
    rep = _read(tmp_path, "extract_z")
    assert rep["mode"] == "roundtrip" and rep["pass"] is True
    axioms = {r["axiom"] for r in rep["rows"]}
    assert {"roundtrip", "planted-match", "additivity"} <= axioms
    assert {"Z1", "Z2", "Z3", "Z4"} <= axioms
    assert set(rep["z_values"]) == {"f-00", "f-01"}


def test_extract_two_hadamard_zero_scale(tmp_path):
    code = main(["extract-z", "--set", f"output={tmp_path}",
                 "--set", "extract.mode=two-hadamard",
                 "--set", "hadamard.perturbation-scale=0.0",
                 "--set", "extract.functionals=2"] + SMALL)
    assert code == 0
    rep = _read(tmp_path, "extract_z")
    assert rep["pass"] is True
    for per_f in rep["z_values"].values():
        for coeffs in per_f.values():
            assert coeffs == {}


# -- correlate ----------------------------------------------------------------


def test_correlate_order_zero_is_free_two_point(tmp_path, lat, ctx):
    code = main(["correlate", "--set", f"output={tmp_path}"])
    assert code == 0
    rep = _read(tmp_path, "correlate")
    assert set(rep["orders"]) == {"0", "1", "2"}
    (exp, re, im), = rep["orders"]["0"]
    w = ctx.wightman.entry(LatticePoint(5, 3), LatticePoint(6, 9))
    assert exp == 1
    assert abs(complex(re, im) - w) < 1e-12


def test_correlate_rejects_nonlocal_interaction(tmp_path, capsys):
    spec = ('correlate.interaction={"2": [{"points": [[2, 2], [9, 9]], '
            '"coeff": [[0, 1.0, 0.0]]}]}')
    code = main(["correlate", "--set", f"output={tmp_path}", "--set", spec])
    assert code == 2
    assert "additivity pre-check" in capsys.readouterr().err


def test_correlate_rejects_bad_functional_spec(tmp_path, capsys):
    code = main(["correlate", "--set", f"output={tmp_path}",
                 "--set", 'correlate.observables=[{"x": 1}]'])
    assert code == 2
    assert "bad functional spec" in capsys.readouterr().err
