import hashlib
import json
import math

import numpy as np
import pytest

from seqkitti import datamodel
from seqkitti.cli import main
from seqkitti.datamodel import Box3D, BoxClass, PointCloud, Sequence, write_boxes, write_sequence
from seqkitti.kitti_io import read_velodyne, write_velodyne

SPEC = {
    "seed": 3,
    "n_frames": 10,
    "frame_period": 0.1,
    "id": "demo",
    "ego": {"speed": 5.0, "yaw_rate": 0.2},
    "objects": [
        {"class": "Vehicle", "dims": [4.0, 2.0, 1.5], "position": [20.0, 2.0, 0.75], "heading": 0.1,
         "velocity": [6.0, 0.5, 0.0], "points_per_frame": 200},
        {"class": "Pedestrian", "dims": [0.6, 0.6, 1.8], "position": [12.0, -4.0, 0.9], "heading": 1.2,
         "velocity": [0.0, 1.0, 0.0], "points_per_frame": 60},
        {"class": "Cyclist", "dims": [1.8, 0.6, 1.7], "position": [-8.0, 5.0, 0.85], "heading": -2.8,
         "velocity": [-3.0, 0.0, 0.0], "points_per_frame": 80},
    ],
}


def digest(root):
    h = hashlib.sha256()
    for p in sorted(x for x in root.rglob("*") if x.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture
def scene(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(tmp_path / "spec.json"), str(tmp_path / "seq")]) == 0
    return tmp_path / "seq"


def test_synth_deterministic(tmp_path, scene):
    assert main(["synth", str(tmp_path / "spec.json"), str(tmp_path / "seq2")]) == 0
    assert digest(scene) == digest(tmp_path / "seq2")


def test_synth_zero_objects(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"seed": 1, "n_frames": 2}))
    assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "out")]) == 0
    seq = datamodel.read_sequence(tmp_path / "out")
    assert len(seq) == 2 and all(len(f.cloud) == 0 and not f.boxes for f in seq.frames)


def test_convert_layout_and_round_trip(tmp_path, scene):
    assert main(["convert", str(scene), str(tmp_path / "kitti"), "--jobs", "3"]) == 0
    k = tmp_path / "kitti" / "demo"
    for sub in ("velodyne", "label_2", "calib"):
        assert len(list((k / sub).iterdir())) == 10
    assert len((k / "poses.txt").read_text().splitlines()) == 10
    assert (k / "velodyne" / "000004.bin").read_bytes() == (scene / "points" / "000004.bin").read_bytes()
    assert not [p for p in (tmp_path / "kitti").iterdir() if p.name.startswith(".")]

    assert main(["convert", str(k), str(tmp_path / "back"), "--direction", "from-kitti"]) == 0
    for i in range(10):
        orig = (scene / "boxes" / f"{i:06d}.txt").read_text().splitlines()
        back = (tmp_path / "back" / "demo" / "boxes" / f"{i:06d}.txt").read_text().splitlines()
        assert len(orig) == len(back) == 3
        for a, b in zip(orig, back):
            ta, tb = a.split(), b.split()
            assert ta[0] == tb[0]
            va, vb = np.array(ta[1:8], float), np.array(tb[1:8], float)
            assert np.max(np.abs(va[:6] - vb[:6])) <= 1e-6 + 1e-12
            assert abs(math.remainder(va[6] - vb[6], 2 * math.pi)) <= 1e-6 + 1e-12


def test_convert_jobs_do_not_change_output(tmp_path, scene):
    main(["convert", str(scene), str(tmp_path / "a"), "--jobs", "1"])
    main(["convert", str(scene), str(tmp_path / "b"), "--jobs", "4"])
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_convert_empty_sequence(tmp_path):
    write_sequence(Sequence("empty"), tmp_path / "s")
    assert main(["convert", str(tmp_path / "s"), str(tmp_path / "k")]) == 0
    for sub in ("velodyne", "label_2", "calib"):
        assert list((tmp_path / "k" / "empty" / sub).iterdir()) == []


def test_convert_corrupt_manifest(tmp_path, scene, capsys):
    m = scene / "manifest.txt"
    lines = m.read_text().splitlines()
    lines[4] = lines[4].replace("frame 2", "frame 2 junk")
    m.write_text("\n".join(lines) + "\n")
    assert main(["convert", str(scene), str(tmp_path / "k")]) == 2
    err = capsys.readouterr().err
    assert "MalformedManifest" in err and ":5" in err
    # no partial output left behind
    assert not (tmp_path / "k").exists() or not list((tmp_path / "k").iterdir())


def test_convert_missing_blob_removes_partial_output(tmp_path, scene):
    (scene / "points" / "000007.bin").unlink()
    assert main(["convert", str(scene), str(tmp_path / "k")]) == 2
    assert not (tmp_path / "k").exists() or not list((tmp_path / "k").iterdir())


def test_accumulate_counts(tmp_path, scene):
    out = tmp_path / "acc.bin"
    assert main(["accumulate", str(scene), "9", "-o", str(out)]) == 0
    pc = read_velodyne(out, stride=5)
    seq = datamodel.read_sequence(scene)
    assert len(pc) == sum(len(seq.frames[i].cloud) for i in range(6, 10))
    assert sorted(set(np.round(pc.rel_time, 6).tolist())) == pytest.approx([-0.3, -0.2, -0.1, 0.0])


def test_accumulate_n_prev_zero_and_anchor_zero(tmp_path, scene):
    out = tmp_path / "a.bin"
    assert main(["accumulate", str(scene), "5", "--n-prev", "0", "-o", str(out)]) == 0
    pc = read_velodyne(out, stride=5)
    anchor = datamodel.read_sequence(scene).frames[5].cloud
    assert np.array_equal(pc.xyz, anchor.xyz) and np.all(pc.rel_time == 0)
    assert main(["accumulate", str(scene), "0", "-o", str(out)]) == 0
    assert len(read_velodyne(out, stride=5)) == len(datamodel.read_sequence(scene).frames[0].cloud)


def test_accumulate_bad_anchor(tmp_path, scene):
    assert main(["accumulate", str(scene), "10", "-o", str(tmp_path / "x.bin")]) == 2


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["accumulate", "x"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["evaluate", "a", "b", "--thresholds", "Truck=0.3"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["convert", "a", "b", "--jobs", "0"])
    assert e.value.code == 1


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        main(["accumulate", "--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    assert "default 3" in out and "102.4" in out


def det(x, l=4.0, w=2.0, h=1.5, cls=BoxClass.VEHICLE, score=0.9):
    return Box3D((x, 0.0, 0.0), l, w, h, 0.0, cls, score)


class TestPostprocess:
    def setup_cloud(self, tmp_path, timed=True):
        xyz = [[0.0, 0, 0], [10.0, 0, 0], [20, 0, 0]]
        rel = [0.0, -0.1, 0.0] if timed else None
        write_velodyne(PointCloud(xyz, [0.5] * 3, rel), tmp_path / "cloud.bin")

    def run(self, tmp_path, boxes, *flags, stride="5"):
        write_boxes(boxes, tmp_path / "dets.txt", require_score=True)
        code = main(["postprocess", str(tmp_path / "dets.txt"), str(tmp_path / "cloud.bin"), "--cloud-stride", stride,
                     "-o", str(tmp_path / "out.txt"), *flags])
        return code, (datamodel.read_boxes(tmp_path / "out.txt") if code == 0 else None)

    def test_min_dim(self, tmp_path):
        self.setup_cloud(tmp_path)
        code, out = self.run(tmp_path, [det(0), det(20, 0.3, 0.3, 0.3)], "--min-dim", "0.5")
        assert code == 0 and [b.center[0] for b in out] == [0.0]

    def test_remove_empty(self, tmp_path):
        self.setup_cloud(tmp_path)
        code, out = self.run(tmp_path, [det(0), det(10), det(20)], "--remove-empty")
        assert [b.center[0] for b in out] == [0.0, 20.0]

    def test_remove_empty_needs_rel_time(self, tmp_path, capsys):
        self.setup_cloud(tmp_path, timed=False)
        code, _ = self.run(tmp_path, [det(0)], "--remove-empty", stride="4")
        assert code == 2 and "MissingTimestampChannel" in capsys.readouterr().err

    def test_chained_order(self, tmp_path):
        self.setup_cloud(tmp_path)
        boxes = [det(0.0, score=0.5), det(0.2, score=0.9), det(20, 0.3, 0.3, 0.3, score=0.99), det(10, score=0.8)]
        code, out = self.run(tmp_path, boxes, "--remove-empty", "--min-dim", "--nms-merge", "0.5")
        # the 0.9 box wins NMS only among survivors of the two filters
        assert code == 0 and [(b.center[0], b.score) for b in out] == [(0.2, 0.9)]

    def test_ensemble_files(self, tmp_path):
        self.setup_cloud(tmp_path)
        write_boxes([det(0.1, score=0.95)], tmp_path / "other.txt", require_score=True)
        code, out = self.run(tmp_path, [det(0.0, score=0.9)], "--ensemble", str(tmp_path / "other.txt"),
                             "--nms-merge", "0.5")
        assert [b.score for b in out] == [0.95]

    def test_per_class_min_dim(self, tmp_path):
        self.setup_cloud(tmp_path)
        ped = det(0, 0.3, 0.3, 0.3, BoxClass.PEDESTRIAN)
        code, out = self.run(tmp_path, [ped], "--min-dim")
        assert len(out) == 1
        code, out = self.run(tmp_path, [ped], "--min-dim-for", "Pedestrian=0.4")
        assert out == []


class TestEvaluate:
    def write(self, root, frames):
        root.mkdir(parents=True, exist_ok=True)
        for name, boxes in frames.items():
            write_boxes(boxes, root / f"{name}.txt")

    def test_perfect_on_synth(self, tmp_path, scene, capsys):
        seq = datamodel.read_sequence(scene)
        self.write(tmp_path / "preds", {f"{i:06d}": [b.replace(score=0.8, num_points=None) for b in f.boxes]
                                        for i, f in enumerate(seq.frames)})
        assert main(["evaluate", str(tmp_path / "preds"), str(scene), "--csv", str(tmp_path / "r.csv")]) == 0
        out = capsys.readouterr().out
        assert out.count("1.0000") == 8
        csv_rows = [l.split(",") for l in (tmp_path / "r.csv").read_text().splitlines()[1:]]
        for name, ap, aph in csv_rows:
            assert any(line.split() == [name, ap, aph] for line in out.splitlines())

    def test_flipped_pedestrians(self, tmp_path, scene, capsys):
        seq = datamodel.read_sequence(scene)

        def flip(b):
            if b.cls is not BoxClass.PEDESTRIAN:
                return b.replace(score=0.8, num_points=None)
            h = b.heading + math.pi
            return b.replace(score=0.8, num_points=None, heading=h - 2 * math.pi if h >= math.pi else h)

        self.write(tmp_path / "preds", {f"{i:06d}": [flip(b) for b in f.boxes] for i, f in enumerate(seq.frames)})
        assert main(["evaluate", str(tmp_path / "preds"), str(scene), "--csv", str(tmp_path / "r.csv")]) == 0
        rows = {r.split(",")[0]: r.split(",")[1:] for r in (tmp_path / "r.csv").read_text().splitlines()[1:]}
        assert rows["Pedestrian"] == ["1.0000", "0.0000"]
        assert rows["Vehicle"] == ["1.0000", "1.0000"]

    def test_thresholds_flag(self, tmp_path, capsys):
        gt = Box3D((0, 0, 0), 4, 2, 1.5, 0.0)
        pred = Box3D((0.8, 0, 0), 4, 2, 1.5, 0.0, score=0.9)  # IoU 3.2 / 4.8
        self.write(tmp_path / "g", {"a": [gt]})
        self.write(tmp_path / "p", {"a": [pred]})
        main(["evaluate", str(tmp_path / "p"), str(tmp_path / "g"), "--csv", str(tmp_path / "r.csv")])
        assert "Vehicle,0.0000,0.0000" in (tmp_path / "r.csv").read_text()
        main(["evaluate", str(tmp_path / "p"), str(tmp_path / "g"), "--thresholds", "Vehicle=0.6",
              "--csv", str(tmp_path / "r.csv")])
        assert "Vehicle,1.0000,1.0000" in (tmp_path / "r.csv").read_text()

    def test_predictions_need_scores(self, tmp_path):
        self.write(tmp_path / "g", {"a": [Box3D((0, 0, 0), 4, 2, 1.5, 0.0)]})
        self.write(tmp_path / "p", {"a": [Box3D((0, 0, 0), 4, 2, 1.5, 0.0)]})
        assert main(["evaluate", str(tmp_path / "p"), str(tmp_path / "g")]) == 2
