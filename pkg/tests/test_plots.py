import re
import xml.etree.ElementTree as ET

from cct import metrics, plots
from cct.metrics import ConfusionMatrix
from cct.trainer import EpochRecord, TrainHistory

SVG = "{http://www.w3.org/2000/svg}"


def _history(val=True):
    h = TrainHistory(run={"seed": 0})
    h.append(EpochRecord(1, 0.7, 0.5, 0.69 if val else None, 0.5 if val else None))
    h.append(EpochRecord(2, 0.4, 0.75, 0.5 if val else None, 0.7 if val else None))
    return h


def _series(svg: str) -> dict:
    root = ET.fromstring(svg)
    return {g.get("data-name"): len(g.findall(f"{SVG}circle"))
            for g in root.iter(f"{SVG}g") if g.get("class") == "series"}


def test_two_epoch_history_has_two_points_per_series():
    for render in (plots.accuracy_plot, plots.loss_plot):
        assert _series(render(_history())) == {"train": 2, "validation": 2}
    assert _series(plots.accuracy_plot(_history(val=False))) == {"train": 2}


def test_outputs_are_byte_stable_and_valid_xml():
    cm = ConfusionMatrix(198, 2, 2, 198)
    curve = metrics.roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    for make in (lambda: plots.accuracy_plot(_history(), {"a": 1}),
                 lambda: plots.roc_plot(curve, 0.75),
                 lambda: plots.confusion_heatmap(cm, {"seed": 3})):
        first = make()
        assert first == make()
        ET.fromstring(first)


def test_run_manifest_is_embedded_as_comment():
    svg = plots.loss_plot(_history(), {"note": "a--b", "seed": 7})
    comment = re.search(r"<!-- run (.*) -->", svg).group(1)
    assert '"seed": 7' in comment and "--" not in comment


def test_heatmap_cells_follow_the_grid():
    svg = plots.confusion_heatmap(ConfusionMatrix(tp=5, fp=1, fn=2, tn=9))
    cells = re.findall(r'<text class="cell"[^>]*>(\d+)</text>', svg)
    assert cells == ["5", "2", "1", "9"]


def test_roc_polyline_visits_every_point():
    curve = metrics.roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    svg = plots.roc_plot(curve)
    line = next(e for e in ET.fromstring(svg).iter(f"{SVG}polyline"))
    assert len(line.get("points").split()) == len(curve.points)
