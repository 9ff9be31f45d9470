mod common;

use std::path::Path;
use std::process::{Command, Output};

use pgmfuse::kitti_io::{read_boxes_report, read_labels, read_tensor, write_labels, write_point_cloud, ClassId, Point, PointCloud};
use pgmfuse::pgm::{spherical_index, GridSpec, LabelGrid};
use pgmfuse::synthetic::simulate_scan;

fn pgmfuse(args: &[&str]) -> Output {
    pgmfuse_env(args, &[])
}

fn pgmfuse_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pgmfuse"));
    cmd.args(args).env_remove("PGMFUSE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn png(path: &Path) -> image::RgbImage {
    image::open(path).unwrap().to_rgb8()
}

/// Simulated scan in KITTI layout under `root`, returning the frame id.
fn kitti_frame(root: &Path, seed: u64) -> &'static str {
    simulate_scan(seed).unwrap().write_kitti(root, "000000").unwrap();
    "000000"
}

fn project(root: &Path, out: &Path, extra: &[&str]) -> Output {
    let cloud = root.join("velodyne/000000.bin");
    let mut args = vec!["project", "--cloud", s(&cloud), "--out", s(out)];
    args.extend_from_slice(extra);
    pgmfuse(&args)
}

#[test]
fn project_writes_fused_and_lidar_only_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_frame(root, 40);
    let calib = root.join("calib/000000.txt");
    let image = root.join("image_2/000000.png");
    let fused = root.join("f.pgmt");
    let out = project(root, &fused, &["--calib", s(&calib), "--image", s(&image)]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("cells occupied"));
    let t = read_tensor(&fused).unwrap();
    assert_eq!((t.spec().rows, t.spec().cols, t.channels()), (64, 512, 8));

    let lidar = root.join("l.pgmt");
    ok(&project(root, &lidar, &["--no-rgb"]));
    let t = read_tensor(&lidar).unwrap();
    assert_eq!((t.spec().rows, t.spec().cols, t.channels()), (64, 512, 5));

    let missing = root.join("nowhere/calib.txt");
    let out = project(root, &root.join("x.pgmt"), &["--calib", s(&missing), "--image", s(&image)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));

    let out = project(root, &root.join("x.pgmt"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn label_counts_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_frame(root, 41);
    let calib = root.join("calib/000000.txt");
    let tensor = root.join("t.pgmt");
    ok(&project(root, &tensor, &["--no-rgb"]));

    let all = std::fs::read_to_string(root.join("label_2/000000.txt")).unwrap();
    let car_line = all.lines().find(|l| l.starts_with("Car ")).expect("scene has a car");
    let one_car = root.join("one_car.txt");
    std::fs::write(&one_car, format!("{car_line}\nHovercraft 0.00 0 0.00 0 0 10 10 1.5 1.6 3.9 1.0 1.6 12.0 0.1\n")).unwrap();

    let labels = root.join("one.pgml");
    let out = pgmfuse(&["label", "--tensor", s(&tensor), "--boxes", s(&one_car), "--calib", s(&calib), "--out", s(&labels)]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown object type 'Hovercraft'"));

    let pgm = read_tensor(&tensor).unwrap();
    let calib_set = pgmfuse::kitti_io::read_calibration(&calib).unwrap();
    let boxes = read_boxes_report(&one_car, &calib_set).unwrap().boxes;
    let expected = common::brute_force_labels(&pgm, &boxes);
    let got = read_labels(&labels).unwrap();
    assert_eq!(got.labels(), expected.as_slice());
    let cars = got.count(ClassId::Car);
    assert!(cars > 0);
    assert_eq!(cars, expected.iter().filter(|&&c| c == ClassId::Car).count());

    let empty = root.join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let bg = root.join("bg.pgml");
    ok(&pgmfuse(&["label", "--tensor", s(&tensor), "--boxes", s(&empty), "--calib", s(&calib), "--out", s(&bg)]));
    let bg = read_labels(&bg).unwrap();
    assert_eq!(bg.count(ClassId::Background), bg.labels().len());
}

#[test]
fn train_infer_eval_on_a_separable_toy_set() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("toy");
    ok(&pgmfuse(&["synth", "--kind", "depth", "--frames", "4", "--seed", "7", "--no-rgb", "--out", s(&data)]));
    let frames = data.join("frames.txt");
    let (tensors, labels) = (data.join("tensors"), data.join("labels"));
    let weights = root.join("m.pgmw");
    let train = |out: &Path| {
        pgmfuse(&[
            "train", "--frames", s(&frames), "--tensors", s(&tensors), "--labels", s(&labels),
            "--arch", "baseline", "--widths", "scaled:32", "--init", "he", "--normalize",
            "--batch-size", "4", "--epochs", "200", "--lr", "0.01", "--momentum", "0.9",
            "--seed", "0", "--out", s(out),
        ])
    };
    ok(&train(&weights));
    let csv = std::fs::read_to_string(root.join("m.pgmw.loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,loss"));
    assert_eq!(csv.lines().count(), 201);

    let pred = root.join("pred");
    ok(&pgmfuse(&["infer", "--frames", s(&frames), "--tensors", s(&tensors), "--weights", s(&weights), "--out", s(&pred)]));
    let report = root.join("r.json");
    let out = pgmfuse(&[
        "eval", "--frames", s(&frames), "--pred", s(&pred), "--gt", s(&labels), "--tensors", s(&tensors), "--out", s(&report),
    ]);
    ok(&out);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let miou = json["miou"].as_f64().unwrap();
    assert!(miou > 0.9, "mIoU {miou}");

    // identical inputs give identical bytes
    let again = root.join("m2.pgmw");
    ok(&train(&again));
    assert_eq!(std::fs::read(&weights).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(csv, std::fs::read_to_string(root.join("m2.pgmw.loss.csv")).unwrap());

    // fused tensors do not fit LiDAR-only weights
    let fused = root.join("fused");
    ok(&pgmfuse(&["synth", "--kind", "depth", "--frames", "2", "--out", s(&fused)]));
    let out = pgmfuse(&[
        "infer", "--frames", s(&fused.join("frames.txt")), "--tensors", s(&fused.join("tensors")),
        "--weights", s(&weights), "--out", s(&root.join("pred2")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("000000") && err.contains("000001"), "{err}");
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("toy");
    ok(&pgmfuse(&["synth", "--kind", "rgb", "--frames", "3", "--out", s(&data)]));
    let labels = data.join("labels");
    let report = root.join("r.json");
    let text = root.join("r.txt");
    let run = || {
        pgmfuse(&[
            "eval", "--frames", s(&data.join("frames.txt")), "--pred", s(&labels), "--gt", s(&labels),
            "--out", s(&report), "--text", s(&text),
        ])
    };
    let out = run();
    ok(&out);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["miou"].as_f64(), Some(1.0));
    assert_eq!(String::from_utf8_lossy(&out.stdout), std::fs::read_to_string(&text).unwrap());
    let first = std::fs::read(&report).unwrap();
    ok(&run());
    assert_eq!(first, std::fs::read(&report).unwrap());

    let out = pgmfuse(&[
        "eval", "--frames", s(&data.join("frames.txt")), "--pred", s(&labels), "--gt", s(&labels),
        "--classes", "Truck", "--out", s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn viz_renders_labels_and_channels() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let g = GridSpec::default();

    let cars = root.join("cars.pgml");
    write_labels(&cars, &LabelGrid::from_labels(g, vec![ClassId::Car; g.cells()]).unwrap()).unwrap();
    let before = std::fs::read(&cars).unwrap();
    let out_png = root.join("cars.png");
    ok(&pgmfuse(&["viz", "--input", s(&cars), "--out", s(&out_png)]));
    let img = png(&out_png);
    assert_eq!(img.dimensions(), (512, 64));
    assert!(img.pixels().all(|p| p.0 == [0, 255, 0]));
    assert_eq!(before, std::fs::read(&cars).unwrap());

    ok(&pgmfuse(&["viz", "--input", s(&cars), "--scale", "2", "--out", s(&out_png)]));
    assert_eq!(png(&out_png).dimensions(), (1024, 128));

    let xyz = [12.0f64, 3.0, -1.0];
    let scan = root.join("one.bin");
    write_point_cloud(&scan, &PointCloud::new(vec![Point::new(xyz[0] as f32, xyz[1] as f32, xyz[2] as f32, 0.4)])).unwrap();
    let tensor = root.join("one.pgmt");
    ok(&pgmfuse(&["project", "--cloud", s(&scan), "--no-rgb", "--out", s(&tensor)]));
    let depth_png = root.join("d.png");
    ok(&pgmfuse(&["viz", "--input", s(&tensor), "--channel", "D", "--out", s(&depth_png)]));
    let img = png(&depth_png);
    let lit: Vec<(u32, u32)> = img
        .enumerate_pixels()
        .filter(|(_, _, p)| p.0 != [0, 0, 0])
        .map(|(x, y, _)| (y, x))
        .collect();
    let (row, col) = spherical_index(xyz, &g).unwrap().unwrap();
    assert_eq!(lit, vec![(row as u32, col as u32)]);
    // a single occupied cell is a constant field
    assert_eq!(img.get_pixel(col as u32, row as u32).0, [128, 128, 128]);

    let out = pgmfuse(&["viz", "--input", s(&tensor), "--channel", "Q", "--out", s(&depth_png)]);
    assert_eq!(out.status.code(), Some(1));
    let out = pgmfuse(&["viz", "--input", s(&tensor), "--channel", "rgb", "--out", s(&depth_png)]);
    assert_eq!(out.status.code(), Some(1));
    let out = pgmfuse(&["viz", "--input", s(&scan), "--out", s(&depth_png)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    kitti_frame(root, 42);
    let (a, b) = (root.join("a.pgmt"), root.join("b.pgmt"));
    let calib = root.join("calib/000000.txt");
    let image = root.join("image_2/000000.png");
    let rgb = ["--calib", s(&calib), "--image", s(&image)];
    let run = |out: &Path, threads: &str| {
        let cloud = root.join("velodyne/000000.bin");
        let mut args = vec!["project", "--cloud", s(&cloud), "--out", s(out)];
        args.extend_from_slice(&rgb);
        pgmfuse_env(&args, &[("PGMFUSE_THREADS", threads)])
    };
    ok(&run(&a, "1"));
    ok(&run(&b, "3"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(run(&a, "zero").status.code(), Some(1));
    assert_eq!(run(&a, "0").status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(pgmfuse(&[]).status.code(), Some(1));
    assert_eq!(pgmfuse(&["train", "--arch", "late"]).status.code(), Some(1));
    assert_eq!(pgmfuse(&["--version"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, [0u8; 17]).unwrap();
    let out = pgmfuse(&["project", "--cloud", s(&bad), "--no-rgb", "--out", s(&dir.path().join("t.pgmt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 16"));
}
