//! Analytic gradients against central finite differences.

mod common;

use common::{random_dims, random_volume, rel_close};
use organloc_core::heatmap::{l2_loss, l2_loss_grad};
use organloc_core::model::{Architecture, ConvNet};
use organloc_core::rng::Stream;
use organloc_core::segmentation::{ce_dice_grad, ce_dice_loss, BinaryMaskPair};
use organloc_core::{Grid, HeatmapStack, Volume, Volume3D, VolumeKind};

fn stack(channels: Vec<Volume3D>) -> HeatmapStack {
    let ids = (1..=channels.len() as u16).collect();
    HeatmapStack::new(ids, 150.0, channels).unwrap()
}

fn bump(s: &HeatmapStack, ch: usize, idx: usize, delta: f64) -> HeatmapStack {
    let channels = s
        .channels()
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let mut d = v.data().to_vec();
            if c == ch {
                d[idx] += delta;
            }
            v.with_data(d).unwrap()
        })
        .collect();
    stack(channels)
}

#[test]
fn l2_gradient_matches_finite_differences() {
    let mut rng = Stream::new(11, 0);
    let h = 1e-3;
    let mut checked = 0;
    for _ in 0..100 {
        let dims = random_dims(&mut rng, 1, 4);
        let n = 1 + rng.below(3);
        let truth = stack((0..n).map(|_| random_volume(&mut rng, dims, VolumeKind::Heatmap, 0.0, 1.0)).collect());
        let pred = stack((0..n).map(|_| random_volume(&mut rng, dims, VolumeKind::Heatmap, 0.01, 0.99)).collect());
        let grad = l2_loss_grad(&truth, &pred).unwrap();
        for _ in 0..3 {
            let ch = rng.below(n);
            let idx = rng.below(truth.channels()[0].len());
            let fd = (l2_loss(&truth, &bump(&pred, ch, idx, h)).unwrap()
                - l2_loss(&truth, &bump(&pred, ch, idx, -h)).unwrap())
                / (2.0 * h);
            assert!(rel_close(grad[ch][idx], fd, 1e-4, 1e-10), "analytic {} vs fd {fd}", grad[ch][idx]);
            checked += 1;
        }
    }
    assert_eq!(checked, 300);
}

fn mask_pair(p: &Volume3D, g: &Volume3D) -> BinaryMaskPair {
    BinaryMaskPair::new(p.clone(), g.clone()).unwrap()
}

#[test]
fn ce_dice_gradient_matches_finite_differences() {
    let mut rng = Stream::new(12, 0);
    let h = 1e-4;
    for _ in 0..100 {
        let dims = random_dims(&mut rng, 1, 5);
        let p = random_volume(&mut rng, dims, VolumeKind::Probability, 0.01, 0.99);
        let grid = *p.grid();
        let g = Volume::from_fn(grid, VolumeKind::Probability, |_| if rng.uniform() < 0.4 { 1.0 } else { 0.0 }).unwrap();
        let grad = ce_dice_grad(&mask_pair(&p, &g)).unwrap();
        for _ in 0..3 {
            let idx = rng.below(p.len());
            let shifted = |d: f64| {
                let mut v = p.data().to_vec();
                v[idx] += d;
                ce_dice_loss(&mask_pair(&p.with_data(v).unwrap(), &g))
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!(rel_close(grad.data()[idx], fd, 1e-4, 1e-9), "analytic {} vs fd {fd}", grad.data()[idx]);
        }
    }
}

/// Central differences of `sum(upstream * forward)` for one parameter, or
/// `None` when the perturbation flips a ReLU.
fn fd_param(net: &ConvNet, x: &Volume3D, up: &[Vec<f64>], i: usize, h: f64) -> Option<f64> {
    let eval = |d: f64| {
        let mut theta = net.params();
        theta[i] += d;
        let mut n = net.clone();
        n.set_params(&theta).unwrap();
        let out = n.forward(x).unwrap();
        let val: f64 = out.iter().zip(up).map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()).sum();
        (val, n.activation_pattern(x).unwrap())
    };
    let (plus, pat_plus) = eval(h);
    let (minus, pat_minus) = eval(-h);
    (pat_plus == pat_minus).then(|| (plus - minus) / (2.0 * h))
}

#[test]
fn conv_backward_matches_finite_differences() {
    let mut rng = Stream::new(13, 0);
    let h = 1e-3;
    let mut checked = 0;
    let mut skipped = 0;
    let mut instance = 0;
    while checked < 50 {
        instance += 1;
        let arch = Architecture::new(vec![3, 2], 2);
        let mut net = ConvNet::init(&arch, instance, 0.0);
        // Non-zero biases exercise their gradients too.
        let mut theta = net.params();
        theta.iter_mut().for_each(|t| {
            if *t == 0.0 {
                *t = rng.uniform_in(-0.2, 0.2)
            }
        });
        net.set_params(&theta).unwrap();
        let dims = random_dims(&mut rng, 2, 4);
        let x = random_volume(&mut rng, dims, VolumeKind::Intensity, -1.0, 1.0);
        let up: Vec<Vec<f64>> = (0..2).map(|_| (0..x.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect();
        let grad = net.backward(&x, &up).unwrap();
        for _ in 0..10 {
            let i = rng.below(net.num_params());
            match fd_param(&net, &x, &up, i, h) {
                Some(fd) => {
                    assert!(rel_close(grad[i], fd, 1e-3, 1e-7), "param {i}: analytic {} vs fd {fd}", grad[i]);
                    checked += 1;
                }
                None => skipped += 1,
            }
        }
    }
    assert!(skipped * 10 < checked, "too many kink crossings: {skipped}");
}

#[test]
fn one_layer_single_voxel_gradient_by_hand() {
    // Net: conv(1 -> 1) + ReLU, head(1 -> 1) + sigmoid. Upstream 1 at voxel v.
    let mut net = ConvNet::zeros(&Architecture::new(vec![1], 1));
    let w: Vec<f64> = (0..27).map(|t| 0.05 * (t as f64 - 10.0)).collect();
    net.layers[0].weights.copy_from_slice(&w);
    net.layers[0].bias[0] = 0.3;
    net.head.weights[0] = 0.8;
    net.head.bias[0] = -0.1;
    let g = Grid::new([3, 3, 3], [1.0; 3]).unwrap();
    let x = Volume::from_fn(g, VolumeKind::Intensity, |c| 0.1 * (c[0] + 2 * c[1]) as f64 - 0.05 * c[2] as f64).unwrap();
    let v = [1usize, 2, 1];
    let vi = g.index(v[0], v[1], v[2]);
    let mut up = vec![vec![0.0; 27]];
    up[0][vi] = 1.0;

    // Hand evaluation at voxel v.
    let tap = |t: usize| [(t % 3) as i64 - 1, ((t / 3) % 3) as i64 - 1, (t / 9) as i64 - 1];
    let input_at = |t: usize| {
        let o = tap(t);
        let p = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
        if p.iter().all(|&q| (0..3).contains(&q)) {
            x.get([p[0] as usize, p[1] as usize, p[2] as usize])
        } else {
            0.0
        }
    };
    let pre: f64 = 0.3 + (0..27).map(|t| w[t] * input_at(t)).sum::<f64>();
    assert!(pre > 0.0, "pick an active voxel");
    let y = 1.0 / (1.0 + (-(0.8 * pre - 0.1f64)).exp());
    let dz = y * (1.0 - y);

    let grad = net.backward(&x, &up).unwrap();
    for t in 0..27 {
        let expect = dz * 0.8 * input_at(t);
        assert!((grad[t] - expect).abs() < 1e-14, "tap {t}");
    }
    assert!((grad[27] - dz * 0.8).abs() < 1e-14);
    assert!((grad[28] - dz * pre).abs() < 1e-14);
    assert!((grad[29] - dz).abs() < 1e-14);
}
