import subprocess
import sys
from pathlib import Path

import pytest

from meta3_plots import APPENDICES, load_panels, render

HEADER = "M,K,n,delta,tau2,estimator,value,denominator\n"


def write_h_panel(dirpath: Path, k=5, m=5, delta=0.5, n=100):
    rows = []
    for tau2, cov in ((0.0, 0.97), (0.1, 0.95), (0.2, 0.94)):
        for est, off in (("reml_n", -0.03), ("reml_t", 0.01),
                         ("q_n", -0.02), ("q_t", 0.005)):
            rows.append(f"{m},{k},{n},{delta},{tau2},{est},{cov + off},1000\n")
    name = f"H__delta-{delta}_n-{n}__K-{k}_M-{m}.csv"
    (dirpath / name).write_text(HEADER + "".join(rows))
    return name


def test_render_h_figure(tmp_path):
    panels = tmp_path / "panels"
    panels.mkdir()
    write_h_panel(panels)
    out = tmp_path / "figs"
    written = render(panels, "H", out, "png")
    assert written == ["H__delta-0.5_n-100.png"]
    assert (out / written[0]).stat().st_size > 0


def test_render_is_byte_deterministic(tmp_path):
    panels = tmp_path / "panels"
    panels.mkdir()
    write_h_panel(panels)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    (name,) = render(panels, "H", out1, "png")
    render(panels, "H", out2, "png")
    assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    (svg,) = render(panels, "H", out1, "svg")
    render(panels, "H", out2, "svg")
    assert (out1 / svg).read_bytes() == (out2 / svg).read_bytes()


def test_figure_structure_four_series_and_guide(tmp_path):
    panels = tmp_path / "panels"
    panels.mkdir()
    write_h_panel(panels)
    from meta3_plots.render import build_figure

    rows = load_panels(panels, "H")
    spec = APPENDICES["H"]
    fig = build_figure(rows, spec, ("0.5", "100"), "H")
    axes = fig.get_axes()
    assert len(axes) == 16  # 4x4 K x M grid
    legend = fig.legends[0]
    assert [t.get_text() for t in legend.get_texts()] == ["reml_n", "reml_t", "q_n", "q_t"]
    populated = [ax for ax in axes if any(len(l.get_xdata()) for l in ax.get_lines()
                                          if l.get_label() in spec.series_order)]
    assert len(populated) == 1  # only the K=5, M=5 facet carries data
    # every facet carries the 0.95 nominal guide
    for ax in axes:
        assert any(abs(l.get_ydata()[0] - 0.95) < 1e-12 for l in ax.get_lines()
                   if len(set(l.get_ydata())) == 1)


def test_missing_column_diagnostic(tmp_path):
    panels = tmp_path / "panels"
    panels.mkdir()
    (panels / "H__delta-0_n-20__K-2_M-5.csv").write_text(
        "M,K,n,delta,estimator,value,denominator\n5,2,20,0,q_t,0.9,100\n"
    )
    with pytest.raises(ValueError, match="'tau2'"):
        render(panels, "H", tmp_path / "o", "png")


def test_empty_input_blank_figure_with_warning(tmp_path, capsys):
    panels = tmp_path / "panels"
    panels.mkdir()
    (panels / "H__x__y.csv").write_text(HEADER)
    out = tmp_path / "o"
    written = render(panels, "H", out, "png", log=sys.stderr)
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert len(written) == 1
    assert (out / written[0]).stat().st_size > 0


def test_unknown_appendix_and_format(tmp_path):
    with pytest.raises(ValueError, match="unknown appendix"):
        render(tmp_path, "Z", tmp_path, "png")
    with pytest.raises(ValueError, match="format"):
        render(tmp_path, "H", tmp_path, "pdf")


def test_cli_roundtrip(tmp_path):
    panels = tmp_path / "panels"
    panels.mkdir()
    write_h_panel(panels)
    out = tmp_path / "figs"
    proc = subprocess.run(
        [sys.executable, "-m", "meta3_plots.cli", "render",
         "--in", str(panels), "--appendix", "H", "--out", str(out),
         "--format", "png"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines() == ["H__delta-0.5_n-100.png"]
    proc = subprocess.run(
        [sys.executable, "-m", "meta3_plots.cli", "render",
         "--in", str(panels), "--appendix", "Z", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
