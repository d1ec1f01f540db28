import subprocess
import sys

import numpy as np
import pytest

from nonlocal_ext.cli import main
from nonlocal_ext.formats import read_grid, read_records, write_grid

SMALL = """\
seed: 3
domain: {name: ball, d: 1}
m_max: 9
budget: 20000
extend: {resolution: 41, rays: 2, ray_samples: 21}
function: {name: %s}
"""


def _run(tmp_path, cmd, text, *extra, name="out"):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(text)
    out = tmp_path / name
    return main([cmd, "--config", str(cfg), "--out", str(out), *extra]), out


def _files(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_decompose_smoke(tmp_path):
    code, out = _run(tmp_path, "decompose", SMALL % "const")
    assert code == 0
    names = set(_files(out))
    assert {"config.yaml", "cubes_omega.jsonl", "cubes_complement.jsonl", "reflection_exterior.jsonl",
            "reflection_interior.jsonl", "audit.jsonl"} <= names
    _, audit = read_records(out / "audit.jsonl")
    assert [r["audit"] for r in audit] == ["exterior", "interior", "plumpness"]
    assert all(r["pass"] for r in audit)
    assert all(r["M"] > 0 for r in audit[:2])


def test_extend_constant(tmp_path):
    code, out = _run(tmp_path, "extend", SMALL % "const")
    assert code == 0
    vals, _, _ = read_grid(out / "field.nlxgrid")
    covered = np.isfinite(vals)
    assert covered.any() and np.all(vals[covered] == 1.0)


def test_seminorm_smoke(tmp_path):
    text = SMALL % "indicator" + "seminorm: {kernel: cross, s: 0.25, p: 2}\n"
    code, out = _run(tmp_path, "seminorm", text)
    assert code == 0
    _, rows = read_records(out / "estimate.jsonl")
    assert rows[0]["verdict"] == "convergent"


def test_resolved_config_echo(tmp_path):
    code, out = _run(tmp_path, "decompose", "domain: {name: ball, d: 1}\nm_max: 8\n")
    assert code == 0
    echo = (out / "config.yaml").read_text()
    for key in ("window:", "m_max: 8", "lam:", "kappa:", "delta_eps:", "budget:", "seed: 0", "box:"):
        assert key in echo
    # only unused optional inputs and the per-side thickness M stay unset
    nulls = [ln.strip() for ln in echo.splitlines() if "null" in ln]
    assert all(ln.startswith(("grid_file", "function: {grid_file", "thickness: {M: null")) for ln in nulls), nulls


def test_malformed_config_leaves_nothing(tmp_path, capsys):
    code, out = _run(tmp_path, "decompose", "domain:\n  name: ball\n  radius: 3\n")
    assert code == 2
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["out.yaml"]
    assert "out.yaml:3: domain.radius: unknown key" in capsys.readouterr().err


def test_runtime_error_leaves_nothing(tmp_path, capsys):
    code, out = _run(tmp_path, "extend", SMALL % "no_such_function")
    assert code == 2 and not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["out.yaml"]


def test_grid_dimension_mismatch(tmp_path):
    grid = tmp_path / "f.nlxgrid"
    write_grid(grid, np.zeros((3, 3)), [0, 0], [1, 1])
    code, out = _run(tmp_path, "extend", SMALL.replace("function: {name: %s}", f"function: {{grid_file: {grid}}}"))
    assert code == 2 and not out.exists()


def test_int_int_s_one_rejected(tmp_path, capsys):
    text = "verify:\n  extension_bounds:\n    int_int_s: [1.0]\n"
    code, out = _run(tmp_path, "verify", text)
    assert code == 2 and not out.exists()
    assert "0<s<1" in capsys.readouterr().err


def test_refuses_foreign_directory(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "precious.txt").write_text("keep")
    code, _ = _run(tmp_path, "decompose", SMALL % "const")
    assert code == 2 and (out / "precious.txt").read_text() == "keep"


def test_bad_flags(tmp_path):
    assert _run(tmp_path, "decompose", SMALL % "const", "--threads", "0")[0] == 2
    assert _run(tmp_path, "decompose", SMALL % "const", "--budget-scale", "0.01")[0] == 2


@pytest.mark.parametrize("cmd", ["decompose", "extend", "seminorm"])
def test_byte_identical_reruns(tmp_path, cmd):
    text = SMALL % "sqrt_example"
    _, a = _run(tmp_path, cmd, text, name="a")
    _, b = _run(tmp_path, cmd, text, "--threads", "4", name="b")
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys()
    for key in fa:
        assert fa[key].replace(b"/a", b"/X") == fb[key].replace(b"/b", b"/X"), key


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nonlocal_ext", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
