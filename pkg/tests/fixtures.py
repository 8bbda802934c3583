"""Hand-built samples shared by several test modules."""

from __future__ import annotations

from microeval.dataset import Sample
from microeval.geometry import GeomBox, RectRegion
from microeval.rle import box_fill_mask, rle_compress

W, H = 4000, 3000
IMAGE = "images/scene.png"
OPTIONS = {"A": "car", "B": "truck", "C": "van", "D": "bus"}


def one_per_task() -> list[Sample]:
    car = GeomBox.hbb(1900, 1400, 2100, 1600)
    van = GeomBox.hbb(300, 200, 360, 240)
    ship = GeomBox.obb([(2500, 2500), (2600, 2500), (2600, 2560), (2500, 2560)])
    region = RectRegion(1500, 1000, 2500, 2000)
    mask = rle_compress(box_fill_mask(car, H, W))

    def s(task, fmt, target, **kw):
        return Sample(f"fx-{task}", IMAGE, W, H, task, f"{task} query", fmt, target, **kw)

    return [
        s("GD", "hbb", [car, van]),
        s("RD", "hbb", [car], region=region),
        s("BG", "hbb", [car]),
        s("CG", "hbb", [van]),
        s("MCR", "obb", [ship]),
        s("OC", "option", "A", choices=OPTIONS),
        s("FGR", "option", "C", choices=OPTIONS),
        s("RS", "mask", mask, meta={"target_box": car.to_list()}),
        s("CS", "mask", mask, meta={"target_box": car.to_list()}),
        s("GC", "count", 2),
        s("RC", "count", 1, region=region),
        s("CC", "count", 1),
        s("CRC", "count", 0),
        s("DrR", "option", "B", choices=OPTIONS),
        s("DsR", "option", "D", choices=OPTIONS),
        s("PDR", "option", "A", choices=OPTIONS),
    ]
