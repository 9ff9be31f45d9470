//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test writes a single `criterion N [PASS|FAIL] ...` line to stdout
//! (bypassing the harness capture) and then asserts.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use pgmfuse::container::Container;
use pgmfuse::groundtruth::rasterize_labels;
use pgmfuse::kitti_io::{
    read_calibration, read_image, read_point_cloud, read_tensor, write_tensor, ClassId,
};
use pgmfuse::metrics::miou_from_ious;
use pgmfuse::models::{
    assemble_inputs, build_model, init_weights, load_weights, save_weights, train_toy, ArchKind,
    Frame, Network, NetworkSpec, TrainConfig, WeightBundle, WidthConfig,
};
use pgmfuse::nn::init::{random_tensor, InitScheme};
use pgmfuse::nn::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, maxpool_backward,
    maxpool_forward, relu, softmax_cross_entropy, ConvParams, DeconvParams, FireDeconvParams,
    FireParams, Padding, ParamSet, Tensor3,
};
use pgmfuse::pgm::{
    build_pgm, flip_y, fuse_rgb, spherical_index, ChannelSchema, GridSpec, LabelGrid, PgmTensor,
    CH_D,
};
use pgmfuse::synthetic::{
    depth_threshold_dataset, drop_rgb, rgb_only_dataset, simulate_scan, BandAxis,
};
use pgmfuse::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n:>2} [{}] {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

#[test]
fn criterion_01_geometric_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ids = ["000000", "000001", "000002"];
    for (k, id) in ids.iter().enumerate() {
        simulate_scan(100 + k as u64).unwrap().write_kitti(dir.path(), id).unwrap();
    }
    let grid = GridSpec::default();
    let mut elapsed = Duration::ZERO;
    let (mut cells, mut bad_index, mut worst_depth) = (0usize, 0usize, 0f64);
    for id in ids {
        let root = dir.path();
        let cloud = read_point_cloud(&root.join(format!("velodyne/{id}.bin"))).unwrap();
        let calib = read_calibration(&root.join(format!("calib/{id}.txt"))).unwrap();
        let image = read_image(&root.join(format!("image_2/{id}.png"))).unwrap();
        let t = Instant::now();
        let pgm = fuse_rgb(&build_pgm(&cloud, &grid), &image, &calib).unwrap();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                if !pgm.is_masked(r, c) {
                    continue;
                }
                cells += 1;
                let v = pgm.cell(r, c);
                let xyz = [v[0] as f64, v[1] as f64, v[2] as f64];
                if spherical_index(xyz, &grid).unwrap() != Some((r, c)) {
                    bad_index += 1;
                }
                let norm = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
                worst_depth = worst_depth.max((v[CH_D] as f64 - norm).abs());
            }
        }
        elapsed += t.elapsed();
    }
    let pass = cells > 0 && bad_index == 0 && worst_depth <= 1e-5 && elapsed < Duration::from_secs(1);
    report(
        1,
        "geometric round-trip",
        pass,
        &format!(
            "3 simulated KITTI-layout frames, {cells} masked cells, {bad_index} index mismatches, \
             max |D - |XYZ|| {worst_depth:.1e}, {}",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_02_collision_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grids = [GridSpec::with_dims(16, 32), GridSpec::with_dims(64, 512), GridSpec::with_dims(4, 8)];
    let (mut mismatched, mut occupied, mut ties) = (0usize, 0usize, 0usize);
    for trial in 0..50 {
        let grid = grids[trial % grids.len()];
        let cloud = random_cloud(&mut rng, 1000);
        let pgm = build_pgm(&cloud, &grid);
        let oracle = brute_force_pgm(&cloud, &grid);
        ties += cloud.len() - cloud.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())).collect::<std::collections::BTreeSet<_>>().len();
        occupied += oracle.len();
        let ok = pgm.occupied() == oracle.len()
            && oracle.iter().all(|(&(r, c), &i)| {
                let p = cloud.points[i];
                let d = (p.x as f64 * p.x as f64 + p.y as f64 * p.y as f64 + p.z as f64 * p.z as f64).sqrt();
                pgm.is_masked(r, c)
                    && pgm.cell(r, c).iter().map(|v| v.to_bits()).eq(
                        [p.x, p.y, p.z, d as f32, p.intensity].iter().map(|v| v.to_bits()),
                    )
            });
        if !ok {
            mismatched += 1;
        }
    }
    let elapsed = t.elapsed();
    report(
        2,
        "collision oracle",
        mismatched == 0 && elapsed < Duration::from_secs(5),
        &format!(
            "50 clouds, {occupied} occupied cells, {ties} duplicate points, {mismatched} mismatching clouds, {}",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_03_label_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = GridSpec::with_dims(32, 128);
    let (mut mismatched, mut labeled) = (0usize, 0usize);
    for _ in 0..20 {
        let cloud = random_cloud(&mut rng, 1000);
        let boxes = random_boxes(&mut rng, &cloud, 20);
        let pgm = build_pgm(&cloud, &grid);
        let got = rasterize_labels(&pgm, &boxes);
        let want = brute_force_labels(&pgm, &boxes);
        labeled += want.iter().filter(|&&c| c != ClassId::Background).count();
        if got.labels() != want.as_slice() {
            mismatched += 1;
        }
    }
    let elapsed = t.elapsed();
    report(
        3,
        "label oracle",
        mismatched == 0 && labeled > 0 && elapsed < Duration::from_secs(5),
        &format!("20 scenes, {labeled} foreground cells, {mismatched} mismatching scenes, {}", secs(elapsed)),
    );
}

const TRIALS: usize = 100;
const KINK_MARGIN: f64 = 1e-3;

fn random_dims<R: Rng>(rng: &mut R) -> (usize, usize, usize) {
    (rng.random_range(2..=6), rng.random_range(2..=8), rng.random_range(1..=4))
}

fn randomize<P: ParamSet + Clone, R: Rng>(rng: &mut R, p: &P) -> P {
    let n = flatten(p).len();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    with_params(p, &values)
}

fn clear_of_kinks(pre: &[&Tensor3]) -> bool {
    pre.iter().all(|t| t.data.iter().all(|v| v.abs() > KINK_MARGIN))
}

/// Error of the gradient of <layer(x, p), r> over the input followed by every parameter.
fn layer_error<P: ParamSet + Clone>(
    x: &Tensor3,
    p: &P,
    analytic: Vec<f64>,
    forward: impl Fn(&Tensor3, &P) -> Tensor3,
    r: &Tensor3,
) -> f64 {
    let nx = x.data.len();
    let theta: Vec<f64> = x.data.iter().copied().chain(flatten(p)).collect();
    let numeric = numeric_gradient(&theta, |th| {
        forward(&with_data(x, &th[..nx]), &with_params(p, &th[nx..])).dot(r)
    });
    normwise_error(&analytic, &numeric)
}

fn concat(gx: &Tensor3, gp: &impl ParamSet) -> Vec<f64> {
    gx.data.iter().copied().chain(flatten(gp)).collect()
}

fn conv_trials(rng: &mut ChaCha8Rng) -> f64 {
    let kernels = [(1, 1), (3, 3), (1, 3), (3, 1), (2, 2)];
    let mut worst = 0f64;
    let mut done = 0;
    while done < TRIALS {
        let (h, w, c_in) = random_dims(rng);
        let k = kernels[rng.random_range(0..kernels.len())];
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let Ok(p0) = ConvParams::zeros(k, c_in, rng.random_range(1..=4), stride, padding) else {
            continue;
        };
        if p0.output_dims(h, w).is_err() {
            continue;
        }
        let p = randomize(rng, &p0);
        let x = random_tensor(rng, h, w, c_in, 1.0);
        let y = conv2d_forward(&x, &p).unwrap();
        let r = random_tensor(rng, y.h, y.w, y.c, 1.0);
        let (gx, gp) = conv2d_backward(&x, &p, &r).unwrap();
        worst = worst.max(layer_error(&x, &p, concat(&gx, &gp), |x, p| conv2d_forward(x, p).unwrap(), &r));
        done += 1;
    }
    worst
}

fn deconv_trials(rng: &mut ChaCha8Rng) -> f64 {
    let kernels = [(1, 4), (3, 3), (2, 2), (1, 1)];
    let mut worst = 0f64;
    for _ in 0..TRIALS {
        let (h, w, c_in) = random_dims(rng);
        let k = kernels[rng.random_range(0..kernels.len())];
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let c_out = rng.random_range(1..=4);
        let p0 = DeconvParams::zeros(k, c_in, c_out, stride, padding).unwrap();
        let p = randomize(rng, &p0);
        let x = random_tensor(rng, h, w, c_in, 1.0);
        let y = deconv2d_forward(&x, &p).unwrap();
        let r = random_tensor(rng, y.h, y.w, y.c, 1.0);
        let (gx, gp) = deconv2d_backward(&x, &p, &r).unwrap();
        worst = worst.max(layer_error(&x, &p, concat(&gx, &gp), |x, p| deconv2d_forward(x, p).unwrap(), &r));
    }
    worst
}

fn maxpool_trials(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0f64;
    for t in 0..TRIALS {
        let (h, w, c) = random_dims(rng);
        let (window, stride) = if t % 2 == 0 {
            ((3, 3), (1, 2))
        } else {
            (
                (rng.random_range(1..=3), rng.random_range(1..=3)),
                (rng.random_range(1..=2), rng.random_range(1..=2)),
            )
        };
        // distinct values a fixed gap apart keep the argmax away from ties
        let mut values: Vec<f64> = (0..h * w * c).map(|i| i as f64 * 0.01).collect();
        values.shuffle(rng);
        let x = Tensor3::from_vec(h, w, c, values).unwrap();
        let (y, idx) = maxpool_forward(&x, window, stride).unwrap();
        let r = random_tensor(rng, y.h, y.w, y.c, 1.0);
        let analytic = maxpool_backward(&idx, &r).unwrap().data;
        let numeric = numeric_gradient(&x.data, |d| maxpool_forward(&with_data(&x, d), window, stride).unwrap().0.dot(&r));
        worst = worst.max(normwise_error(&analytic, &numeric));
    }
    worst
}

fn fire_trials(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0f64;
    let mut done = 0;
    while done < TRIALS {
        let (h, w, c_in) = random_dims(rng);
        let widths = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let p0 = FireParams::init(rng, InitScheme::He, c_in, widths.0, widths.1, widths.2).unwrap();
        let p = randomize(rng, &p0);
        let x = random_tensor(rng, h, w, c_in, 1.0);
        let sq = conv2d_forward(&x, &p.squeeze).unwrap();
        let e1 = conv2d_forward(&relu(&sq), &p.expand1).unwrap();
        let e3 = conv2d_forward(&relu(&sq), &p.expand3).unwrap();
        if !clear_of_kinks(&[&sq, &e1, &e3]) {
            continue;
        }
        let (y, cache) = p.forward(&x).unwrap();
        let r = random_tensor(rng, y.h, y.w, y.c, 1.0);
        let (gx, gp) = pgmfuse::nn::fire_backward(&cache, &p, &r).unwrap();
        worst = worst.max(layer_error(&x, &p, concat(&gx, &gp), |x, p| p.forward(x).unwrap().0, &r));
        done += 1;
    }
    worst
}

fn fire_deconv_trials(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0f64;
    let mut done = 0;
    while done < TRIALS {
        let (h, w, c_in) = random_dims(rng);
        let widths = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
        let p0 = FireDeconvParams::init(rng, InitScheme::He, c_in, widths.0, widths.1, widths.2).unwrap();
        let p = randomize(rng, &p0);
        let x = random_tensor(rng, h, w, c_in, 1.0);
        let sq = conv2d_forward(&x, &p.squeeze).unwrap();
        let up = deconv2d_forward(&relu(&sq), &p.deconv).unwrap();
        let e1 = conv2d_forward(&relu(&up), &p.expand1).unwrap();
        let e3 = conv2d_forward(&relu(&up), &p.expand3).unwrap();
        if !clear_of_kinks(&[&sq, &up, &e1, &e3]) {
            continue;
        }
        let (y, cache) = p.forward(&x).unwrap();
        let r = random_tensor(rng, y.h, y.w, y.c, 1.0);
        let (gx, gp) = pgmfuse::nn::fire_deconv_backward(&cache, &p, &r).unwrap();
        worst = worst.max(layer_error(&x, &p, concat(&gx, &gp), |x, p| p.forward(x).unwrap().0, &r));
        done += 1;
    }
    worst
}

fn softmax_ce_trials(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0f64;
    for _ in 0..TRIALS {
        let (h, w, _) = random_dims(rng);
        let logits = random_tensor(rng, h, w, ClassId::COUNT, 3.0);
        let labels: Vec<ClassId> = (0..h * w).map(|_| ClassId::ALL[rng.random_range(0..4)]).collect();
        let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.7)).collect();
        mask[0] = true;
        let weights: Vec<f64> = (0..ClassId::COUNT).map(|_| rng.random_range(0.5..2.0)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels, &weights, &mask).unwrap();
        let numeric = numeric_gradient(&logits.data, |d| {
            softmax_cross_entropy(&with_data(&logits, d), &labels, &weights, &mask).unwrap().0
        });
        worst = worst.max(normwise_error(&g.data, &numeric));
    }
    worst
}

fn network_error() -> f64 {
    let spec = NetworkSpec::new(ArchKind::Baseline, WidthConfig::tiny(), ClassId::COUNT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = nonzero_biases(&mut rng, &Network::init(&spec, 11).unwrap());
    let x = vec![random_tensor(&mut rng, 8, 32, 5, 1.0)];
    let labels: Vec<ClassId> = (0..8 * 32).map(|_| ClassId::ALL[rng.random_range(0..4)]).collect();
    let mask: Vec<bool> = (0..8 * 32).map(|_| rng.random_bool(0.8)).collect();
    let weights = [1.0, 2.0, 3.0, 3.0];
    let (_, grad) = net.loss_and_grad(&x, &labels, &weights, &mask).unwrap();
    let analytic = flatten(&grad);
    let theta = flatten(&net);
    let stride = theta.len().div_ceil(1500);
    let picked: Vec<usize> = (0..theta.len()).step_by(stride).collect();
    let mut probe = theta.clone();
    let loss = |th: &[f64]| net_loss(&net, th, &x, &labels, &weights, &mask);
    let numeric: Vec<f64> = picked
        .iter()
        .map(|&i| {
            probe[i] = theta[i] + FD_STEP;
            let up = loss(&probe);
            probe[i] = theta[i] - FD_STEP;
            let down = loss(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    let sampled: Vec<f64> = picked.iter().map(|&i| analytic[i]).collect();
    normwise_error(&sampled, &numeric)
}

/// Zero biases put ReLU inputs exactly on the kink wherever a whole pixel is dead.
fn nonzero_biases<R: Rng>(rng: &mut R, net: &Network) -> Network {
    let values: Vec<f64> = net
        .param_refs()
        .iter()
        .flat_map(|p| {
            let bias = p.name.ends_with("bias");
            p.data.iter().map(|&v| if bias { rng.random_range(-0.1..0.1) } else { v }).collect::<Vec<_>>()
        })
        .collect();
    with_params(net, &values)
}

fn net_loss(net: &Network, th: &[f64], x: &[Tensor3], labels: &[ClassId], w: &[f64], mask: &[bool]) -> f64 {
    with_params(net, th).loss_and_grad(x, labels, w, mask).unwrap().0
}

#[test]
fn criterion_04_gradient_suite() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layers: [(&str, fn(&mut ChaCha8Rng) -> f64, bool); 6] = [
        ("conv", conv_trials, true),
        ("deconv", deconv_trials, true),
        ("maxpool", maxpool_trials, true),
        ("fire", fire_trials, false),
        ("fireDeconv", fire_deconv_trials, false),
        ("softmax-CE", softmax_ce_trials, true),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, run, smooth) in layers {
        let err = run(&mut rng);
        pass &= err < 1e-4 && (!smooth || err < 1e-6);
        parts.push(format!("{name} {err:.1e}"));
    }
    let e2e = network_error();
    pass &= e2e < 1e-4;
    parts.push(format!("tiny network {e2e:.1e}"));
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    report(
        4,
        "gradient suite",
        pass,
        &format!("{TRIALS} trials per layer, max normwise error: {}, {}", parts.join(", "), secs(elapsed)),
    );
}

#[test]
fn criterion_05_architecture_contracts() {
    let widths = WidthConfig::default();
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lidar = PgmTensor::zeros(grid, ChannelSchema::Xyzdirgb);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if rng.random_bool(0.6) {
                lidar.set_masked(r, c, true);
                for v in lidar.cell_mut(r, c) {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
        }
    }
    let xyzdi = drop_rgb(&Frame { input: lidar.clone(), labels: LabelGrid::background(grid) }).unwrap().input;
    let (base_spec, base) = build_model(ArchKind::Baseline, widths.clone(), 4, 1).unwrap();
    let (early_spec, early) = build_model(ArchKind::EarlyFusion, widths.clone(), 4, 1).unwrap();
    let (mid_spec, mid) = build_model(ArchKind::MidFusion, widths, 4, 1).unwrap();
    let mut worst_sum = 0f64;
    let mut shape_ok = true;
    for (spec, w, input, chans) in [
        (&base_spec, &base, &xyzdi, 5usize),
        (&early_spec, &early, &lidar, 8),
        (&mid_spec, &mid, &lidar, 8),
    ] {
        let inputs = assemble_inputs(spec, input, None).unwrap();
        shape_ok &= inputs.iter().map(|t| t.c).sum::<usize>() == chans + if spec.arch == ArchKind::MidFusion { 2 } else { 0 };
        let probs = w.network.probabilities(spec, &inputs).unwrap();
        shape_ok &= probs.dims() == (64, 512, 4) && inputs[0].dims().0 == 64 && inputs[0].dims().1 == 512;
        for px in probs.data.chunks_exact(4) {
            worst_sum = worst_sum.max((px.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let early_c1 = early.network.param_refs().into_iter().find(|p| p.name.ends_with("conv1.weight")).unwrap().shape;
    let (be, me) = (base.network.encoder_param_count(), mid.network.encoder_param_count());
    let pass = shape_ok && early_c1[2] == 8 && me == 2 * be && worst_sum <= 1e-5;
    report(
        5,
        "architecture contracts",
        pass,
        &format!(
            "(64,512,5)->(64,512,4) {}, early conv1 input channels {}, encoder params mid {me} = 2 x {be}, max |sum p - 1| {worst_sum:.1e}",
            if shape_ok { "ok" } else { "wrong" },
            early_c1[2]
        ),
    );
}

#[test]
fn criterion_06_table_consistency() {
    let rows: [(&str, [f64; 3], f64); 6] = [
        ("SqueezeSeg XYZDI", [62.2, 16.9, 21.9], 33.7),
        ("SqueezeSeg XYZDIRGB", [65.7, 20.2, 24.2], 36.7),
        ("SqueezeSeg XYZDI+DIRGB", [65.1, 22.7, 24.4], 37.4),
        ("PointSeg XYZDI", [67.0, 18.4, 19.12], 34.8),
        ("PointSeg XYZDIRGB", [68.5, 16.2, 28.8], 37.8),
        ("PointSeg XYZDI+DIRGB", [67.8, 18.6, 26.3], 37.6),
    ];
    let mut worst = 0f64;
    for (_, ious, printed) in rows {
        let fixture: Vec<Option<f64>> = ious.iter().map(|v| Some(v / 100.0)).collect();
        let m = 100.0 * miou_from_ious(&fixture).unwrap();
        worst = worst.max((m - printed).abs());
    }
    report(6, "table consistency", worst <= 0.05, &format!("6 rows, max |mean - printed| {worst:.3}"));
}

fn toy_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: lr,
        momentum: 0.9,
        normalize: true,
        ..TrainConfig::default()
    }
}

fn train(spec: &NetworkSpec, seed: u64, frames: &[Frame], cfg: &TrainConfig) -> (WeightBundle, Vec<f64>) {
    let w = init_weights(spec, seed).unwrap();
    train_toy(spec, &w, frames, cfg).unwrap()
}

#[test]
fn criterion_07_toy_training() {
    let t = Instant::now();
    let frames = depth_threshold_dataset(GridSpec::with_dims(8, 64), 4, 7, ChannelSchema::Xyzdi);
    let spec = NetworkSpec::new(ArchKind::Baseline, WidthConfig::scaled(32), 4)
        .unwrap()
        .with_init(InitScheme::He);
    let cfg = toy_config(200, 0.01);
    let (w, curve) = train(&spec, 0, &frames, &cfg);
    let (_, again) = train(&spec, 0, &frames, &cfg);
    let miou = toy_miou(&spec, &w, &frames);
    let ratio = curve.last().unwrap() / curve[0];
    let exact = curve.iter().map(|v| v.to_bits()).eq(again.iter().map(|v| v.to_bits()));
    let elapsed = t.elapsed();
    report(
        7,
        "toy training",
        curve.len() == 200 && ratio < 0.1 && miou > 0.9 && exact && elapsed < Duration::from_secs(300),
        &format!(
            "{} steps, loss {:.3} -> {:.4} (ratio {ratio:.3}), mIoU {miou:.3}, repeat bit-exact {exact}, {}",
            curve.len(),
            curve[0],
            curve.last().unwrap(),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_08_fusion_effect() {
    let t = Instant::now();
    let frames = rgb_only_dataset(GridSpec::with_dims(8, 64), 4, BandAxis::Rows, 4, 3).unwrap();
    let lidar: Vec<Frame> = frames.iter().map(|f| drop_rgb(f).unwrap()).collect();

    let base_spec = NetworkSpec::new(ArchKind::Baseline, WidthConfig::scaled(16), 4).unwrap();
    let (bw, _) = train(&base_spec, 0, &lidar, &toy_config(200, 0.01));
    let base = toy_miou(&base_spec, &bw, &lidar);

    let early_spec = NetworkSpec::new(ArchKind::EarlyFusion, WidthConfig::scaled(16), 4).unwrap();
    let (ew, _) = train(&early_spec, 0, &frames, &toy_config(200, 0.01));
    let early = toy_miou(&early_spec, &ew, &frames);

    let mid_spec = NetworkSpec::new(ArchKind::MidFusion, WidthConfig::scaled(32), 4)
        .unwrap()
        .with_init(InitScheme::He);
    let (mw, _) = train(&mid_spec, 1, &frames, &toy_config(1500, 0.003));
    let mid = toy_miou(&mid_spec, &mw, &frames);

    report(
        8,
        "fusion effect",
        early > 0.9 && mid > 0.9 && base < 0.5,
        &format!(
            "RGB-only labels: baseline mIoU {base:.3}, early {early:.3}, mid {mid:.3}, {}",
            secs(t.elapsed())
        ),
    );
}

#[test]
fn criterion_09_augmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut involution = true;
    for _ in 0..20 {
        let grid = GridSpec::with_dims(rng.random_range(1..8), rng.random_range(1..40));
        let mut pgm = PgmTensor::zeros(grid, ChannelSchema::Xyzdirgb);
        let mut labels = LabelGrid::background(grid);
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                pgm.set_masked(r, c, rng.random_bool(0.5));
                for v in pgm.cell_mut(r, c) {
                    *v = rng.random_range(-5.0..5.0);
                }
                labels.set(r, c, ClassId::ALL[rng.random_range(0..4)]);
            }
        }
        let (p1, l1) = flip_y(&pgm, &labels).unwrap();
        let (p2, l2) = flip_y(&p1, &l1).unwrap();
        let bits = |t: &PgmTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        involution &= bits(&p2) == bits(&pgm) && p2.mask() == pgm.mask() && l2 == labels;
    }
    let frames = depth_threshold_dataset(GridSpec::with_dims(8, 32), 4, 19, ChannelSchema::Xyzdi);
    let spec = NetworkSpec::new(ArchKind::Baseline, WidthConfig::tiny(), 4).unwrap();
    let cfg = TrainConfig { flip_prob: 0.5, seed: 21, ..toy_config(10, 0.01) };
    let (w1, c1) = train(&spec, 3, &frames, &cfg);
    let (w2, c2) = train(&spec, 3, &frames, &cfg);
    let (_, c3) = train(&spec, 3, &frames, &TrainConfig { seed: 22, ..cfg.clone() });
    let same = c1.iter().map(|v| v.to_bits()).eq(c2.iter().map(|v| v.to_bits())) && w1 == w2;
    let seed_matters = c1 != c3;
    report(
        9,
        "augmentation",
        involution && same && seed_matters,
        &format!(
            "flip_y twice is identity on 20 random frames {involution}, flip_prob 0.5 repeat bit-exact {same}, other seed differs {seed_matters}"
        ),
    );
}

#[test]
fn criterion_10_containers() {
    let dir = tempfile::tempdir().unwrap();
    let frame = simulate_scan(10).unwrap();
    let pgm = fuse_rgb(&build_pgm(&frame.cloud, &GridSpec::default()), &frame.image, &frame.calib).unwrap();
    let tpath = dir.path().join("t.pgmt");
    write_tensor(&tpath, &pgm).unwrap();
    let back = read_tensor(&tpath).unwrap();
    let bits = |t: &PgmTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let tensor_ok = bits(&back) == bits(&pgm) && back.mask() == pgm.mask() && back.spec() == pgm.spec();

    let (_, w) = build_model(ArchKind::MidFusion, WidthConfig::tiny(), 4, 10).unwrap();
    let wpath = dir.path().join("w.pgmw");
    save_weights(&wpath, &w).unwrap();
    let wb = load_weights(&wpath).unwrap();
    let weights_ok = flatten(&wb.network).iter().map(|v| v.to_bits()).eq(flatten(&w.network).iter().map(|v| v.to_bits()))
        && w.to_container().unwrap().to_bytes() == wb.to_container().unwrap().to_bytes();

    let mut rejected = 0;
    let mut tried = 0;
    for bytes in [std::fs::read(&tpath).unwrap(), std::fs::read(&wpath).unwrap()] {
        let header = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        for k in 0..8 {
            let mut bad = bytes.clone();
            let at = header + (bytes.len() - header) * k / 8;
            bad[at] ^= 0x01;
            tried += 1;
            if matches!(Container::from_bytes(&bad), Err(Error::Integrity(_))) {
                rejected += 1;
            }
        }
    }
    report(
        10,
        "container I/O",
        tensor_ok && weights_ok && rejected == tried,
        &format!(
            "tensor round-trip bit-exact {tensor_ok}, weights round-trip bit-exact {weights_ok}, {rejected}/{tried} corrupted payloads rejected by checksum"
        ),
    );
}
