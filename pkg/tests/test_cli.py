import xml.etree.ElementTree as ET

import pytest

from stein_lab.cli import main
from stein_lab.config import ConfigError, parse_config


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    lines = path.read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    footer = [l for l in lines if l.startswith("#")]
    return body[0].split(","), [l.split(",") for l in body[1:]], footer


def test_uni_sweep_schema_and_plots(tmp_path):
    cfg = write(tmp_path, "uni.cfg", "lambda_grid = 25,50,100,200\n")
    out = tmp_path / "out"
    assert main(["uni", "--config", cfg, "--out", str(out)]) == 0
    header, rows, footer = read_csv(out / "uni_sweep.csv")
    assert header == ["lambda", "k", "p_k", "d_tv", "sup_dg", "rel_err", "leak"]
    assert [r[0] for r in rows] == ["25", "50", "100", "200"]
    assert footer[-1] == "# status: pass"
    assert any(l.startswith("# fit sup_dg:") and "q=0" in l for l in footer)
    for claim in ("sup_dg", "d_tv"):
        ET.parse(out / f"uni_{claim}.svg")


def test_lambda_grid_override_and_no_plots(tmp_path):
    cfg = write(tmp_path, "uni.cfg", "lambda_grid = 25,50\nseed = 3\n")
    out = tmp_path / "o"
    assert main(["uni", "--config", cfg, "--out", str(out), "--lambda-grid", "3,4,5,6",
                 "--no-plots"]) == 0
    _, rows, _ = read_csv(out / "uni_sweep.csv")
    assert [r[0] for r in rows] == ["3", "4", "5", "6"]
    assert not list(out.glob("*.svg"))


def test_determinism_across_workers(tmp_path):
    cfg = write(tmp_path, "multi.cfg", "d = 2\nlambda_grid = 4,6,8,10\nidentity_samples = 5\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["multi", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["multi", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    assert (a / "multi_sweep.csv").read_bytes() == (b / "multi_sweep.csv").read_bytes()
    assert (a / "multi_sup_d12.svg").read_bytes() == (b / "multi_sup_d12.svg").read_bytes()


def test_multi_inapplicable_rows_exit_zero(tmp_path):
    cfg = write(tmp_path, "m.cfg",
                "mu = 0.05,0.05,0.9\nn_max = 10,10,30\nlambda_grid = 4,8\nidentity_samples = 3\n")
    out = tmp_path / "out"
    assert main(["multi", "--config", cfg, "--out", str(out)]) == 0
    header, rows, footer = read_csv(out / "multi_sweep.csv")
    status = header.index("lb_status")
    assert [r[status] for r in rows] == ["inapplicable", "inapplicable"]
    assert footer[-1] == "# status: pass"


def test_failure_exit_one_with_report(tmp_path):
    # the third coordinate is truncated far too tightly, so the mean check fails
    cfg = write(tmp_path, "m.cfg",
                "mu = 0.05,0.05,0.9\nn_max = 10,10,18\nlambda_grid = 16\nidentity_samples = 2\n")
    out = tmp_path / "out"
    assert main(["multi", "--config", cfg, "--out", str(out)]) == 1
    _, _, footer = read_csv(out / "multi_sweep.csv")
    assert any("FAIL" in l and "mean" in l for l in footer)
    assert footer[-1] == "# status: fail"


def test_pp_sweep_fits(tmp_path):
    cfg = write(tmp_path, "pp.cfg",
                "lambda_grid = 16,32,64,128\nn_ab_max = 12\nidentity_samples = 2\n")
    out = tmp_path / "out"
    assert main(["pp", "--config", cfg, "--out", str(out)]) == 0
    _, _, footer = read_csv(out / "pp_sweep.csv")
    fit = next(l for l in footer if l.startswith("# fit v_star:"))
    assert "q=1" in fit
    p = float(fit.split(" p=")[1].split()[0])
    assert 0.8 <= p <= 1.2
    assert (out / "pp_v_star.svg").exists()


@pytest.mark.parametrize("text,extra", [
    ("lambda_grid = 5,3\n", []),
    ("lambda_grid = 1,2\nbogus = 1\n", []),
    ("seed = 1\n", []),
    ("section = pp\nlambda_grid = 1,2\n", []),
    ("lambda_grid = 1,2\n", ["--lambda-grid", "1,x"]),
    ("lambda_grid = -1,2\n", []),
    ("lambda_grid 1,2\n", []),
])
def test_invalid_config_exit_two(tmp_path, text, extra, capsys):
    cfg = write(tmp_path, "bad.cfg", text)
    assert main(["uni", "--config", cfg, "--out", str(tmp_path)] + extra) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["uni", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_parse_config_multi_defaults():
    cfg = parse_config("d = 3\nlambda_grid = 1, 2\n", "multi")
    assert cfg.mu == pytest.approx((1 / 3,) * 3)
    with pytest.raises(ConfigError):
        parse_config("lambda_grid = 1,2\n", "multi")
    with pytest.raises(ConfigError):
        parse_config("mu = 0.5,0.6\nlambda_grid = 1,2\n", "multi")
    cfg = parse_config("lambda_grid = 4\nn_ab_max = 9\nd2_exact = no\n", "pp",
                       {"seed": "11"})
    assert cfg.n_ab_max == 9 and cfg.d2_exact is False and cfg.seed == 11
