//! Finite-difference verification of every differentiable op and of the
//! full encoder and decoder graphs, at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cuts_encoder::{contrastive_graph_loss, sample_patches, CutsEncoder, EncoderConfig};
use crate::rng::derive_seed;
use crate::tensor::grad_check::{grad_check, GradCheckOptions, GradCheckReport};
use crate::tensor::ops::shape::PixelIndex;
use crate::tensor::ops::Conv2dParams;
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::thermio::{AugmentConfig, SpatialTransform};
use crate::unet_decoder::{DecoderConfig, Task, UNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Op,
    Network,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub kind: CheckKind,
    pub report: GradCheckReport,
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>>;

/// `sum(out * w)` with fixed random `w`, so every output coordinate
/// contributes a distinct weight.
fn probe(out_shape: &[usize], rng: &mut ChaCha8Rng, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + 'static) -> Build {
    let w = normal(out_shape, rng);
    Box::new(move |g, v| {
        let out = f(g, v)?;
        g.weighted_sum(out, w.clone())
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Build, Vec<Tensor<f64>>)> {
    let mut cases: Vec<(&'static str, Build, Vec<Tensor<f64>>)> = Vec::new();
    let x4 = |rng: &mut ChaCha8Rng| normal(&[2, 3, 6, 5], rng);

    let geoms: [(&'static str, usize, Conv2dParams, [usize; 2]); 3] = [
        ("conv2d", 3, Conv2dParams { stride: 1, padding: 1, dilation: 1 }, [6, 5]),
        ("conv2d_dilated", 3, Conv2dParams { stride: 1, padding: 2, dilation: 2 }, [6, 5]),
        ("conv2d_strided", 3, Conv2dParams { stride: 2, padding: 1, dilation: 1 }, [3, 3]),
    ];
    for (name, k, p, [oh, ow]) in geoms {
        let b = probe(&[2, 4, oh, ow], rng, move |g, v| g.conv2d(v[0], v[1], Some(v[2]), p));
        cases.push((name, b, vec![x4(rng), normal(&[4, 3, k, k], rng), normal(&[4], rng)]));
    }
    let b = probe(&[2, 4, 6, 5], rng, |g, v| g.conv2d(v[0], v[1], None, Conv2dParams::default()));
    cases.push(("conv2d_pointwise", b, vec![x4(rng), normal(&[4, 3, 1, 1], rng)]));
    cases.push(("relu", probe(&[2, 3, 6, 5], rng, |g, v| g.relu(v[0])), vec![x4(rng)]));
    cases.push(("softmax", probe(&[2, 3, 6, 5], rng, |g, v| g.softmax(v[0], 1)), vec![x4(rng)]));
    cases.push((
        "instance_norm",
        probe(&[2, 3, 6, 5], rng, |g, v| g.instance_norm(v[0], 1e-5)),
        vec![x4(rng)],
    ));
    cases.push((
        "l2_normalize",
        probe(&[2, 3, 6, 5], rng, |g, v| g.l2_normalize(v[0], 1, 1e-12)),
        vec![x4(rng)],
    ));
    cases.push((
        "channel_affine",
        probe(&[2, 3, 6, 5], rng, |g, v| g.channel_affine(v[0], v[1], v[2])),
        vec![x4(rng), normal(&[3], rng), normal(&[3], rng)],
    ));
    cases.push((
        "linear",
        probe(&[4, 3], rng, |g, v| g.linear(v[0], v[1], Some(v[2]))),
        vec![normal(&[4, 5], rng), normal(&[3, 5], rng), normal(&[3], rng)],
    ));
    cases.push((
        "maxpool2",
        probe(&[2, 3, 3, 2], rng, |g, v| g.maxpool2(v[0])),
        vec![x4(rng)],
    ));
    cases.push((
        "upsample_bilinear",
        probe(&[2, 3, 12, 10], rng, |g, v| g.upsample_bilinear(v[0], 2)),
        vec![x4(rng)],
    ));
    cases.push((
        "global_avg_pool",
        probe(&[2, 3], rng, |g, v| g.global_avg_pool(v[0])),
        vec![x4(rng)],
    ));
    cases.push((
        "concat",
        probe(&[2, 5, 6, 5], rng, |g, v| g.concat(v[0], v[1], 1)),
        vec![x4(rng), normal(&[2, 2, 6, 5], rng)],
    ));
    cases.push((
        "pad_reflect",
        probe(&[2, 3, 9, 11], rng, |g, v| g.pad_reflect_asym(v[0], 2, 1, 3, 3)),
        vec![x4(rng)],
    ));
    cases.push(("crop", probe(&[2, 3, 4, 3], rng, |g, v| g.crop(v[0], 4, 3)), vec![x4(rng)]));
    let idx: Vec<PixelIndex> = (0..7)
        .map(|i| PixelIndex {
            sample: i % 2,
            y: rng.random_range(0..6),
            x: rng.random_range(0..5),
        })
        .collect();
    cases.push((
        "gather_pixels",
        probe(&[7, 3], rng, move |g, v| g.gather_pixels(v[0], idx.clone())),
        vec![x4(rng)],
    ));
    cases.push((
        "pair_logits",
        probe(&[4, 3], rng, |g, v| g.pair_logits(v[0], v[1], 2.5)),
        vec![normal(&[4, 5], rng), normal(&[4, 3, 5], rng)],
    ));
    cases.push((
        "reshape",
        probe(&[6, 30], rng, |g, v| g.reshape(v[0], &[6, 30])),
        vec![x4(rng)],
    ));
    let targets: Vec<usize> = (0..60).map(|i| if i % 7 == 3 { 9 } else { rng.random_range(0..3) }).collect();
    cases.push((
        "cross_entropy",
        Box::new(move |g, v| g.cross_entropy(v[0], 1, targets.clone(), Some(9))),
        vec![x4(rng)],
    ));
    cases
}

fn network_cases(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<(&'static str, Build, Vec<Tensor<f64>>)>, TensorError> {
    let mut cases: Vec<(&'static str, Build, Vec<Tensor<f64>>)> = Vec::new();

    let enc_cfg = EncoderConfig {
        embedding_dim: 8,
        channels: vec![3; 6],
        local_channels: 3,
        anchors_per_image: 3,
        negatives: 4,
        seed,
        ..EncoderConfig::default()
    };
    let encoder = CutsEncoder::<f64>::new(&enc_cfg).expect("valid toy config");
    let views: Vec<SpatialTransform> = (0..2)
        .map(|_| SpatialTransform::sample(rng, &AugmentConfig::default(), 16, 16))
        .collect();
    let mut patches = Vec::new();
    for j in 0..2 {
        patches.extend(sample_patches(j, &views, &enc_cfg, rng).expect("pool of two"));
    }
    let mut inputs = vec![Tensor::from_fn(&[4, 3, 16, 16], |_| rng.random::<f64>())];
    inputs.extend(encoder.params().tensors().iter().cloned());
    cases.push((
        "encoder_infonce",
        Box::new(move |g, v| {
            let emb = encoder.forward(g, &v[1..], v[0])?;
            contrastive_graph_loss(g, emb, &patches, 2, 10.0)
        }),
        inputs,
    ));

    for (name, task) in [("unet_segment", Task::Segmentation), ("unet_classify", Task::Classification)] {
        let cfg = DecoderConfig {
            task,
            depth: 2,
            base_width: 8,
            seed,
            ..DecoderConfig::default()
        };
        let net = UNet::<f64>::new(&cfg, 8, crate::thermio::RenderKind::Grayscale).expect("valid toy config");
        let n = 2;
        let mut inputs = vec![normal(&[n, 8, 16, 16], rng)];
        inputs.extend(net.params().tensors().iter().cloned());
        let targets: Vec<usize> = match task {
            Task::Segmentation => (0..n * 256).map(|_| rng.random_range(0..8)).collect(),
            Task::Classification => (0..n).map(|_| rng.random_range(0..2)).collect(),
        };
        cases.push((
            name,
            Box::new(move |g, v| {
                let out = net.forward(g, &v[1..], v[0])?;
                g.cross_entropy(out, 1, targets.clone(), None)
            }),
            inputs,
        ));
    }
    Ok(cases)
}

/// Coordinates checked per input tensor in the network graphs.
pub const NETWORK_COORDS: usize = 4;

/// Runs every op check (all coordinates) and the three network checks
/// (sampled coordinates) for one seed.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck"));
    let mut out = Vec::new();
    for (name, build, inputs) in op_cases(&mut rng) {
        let report = grad_check(build, &inputs, GradCheckOptions { seed, ..GradCheckOptions::default() })?;
        out.push(CheckResult {
            name,
            kind: CheckKind::Op,
            report,
        });
    }
    for (name, build, inputs) in network_cases(&mut rng, seed)? {
        let opts = GradCheckOptions {
            seed,
            max_coords_per_input: Some(NETWORK_COORDS),
            ..GradCheckOptions::default()
        };
        out.push(CheckResult {
            name,
            kind: CheckKind::Network,
            report: grad_check(build, &inputs, opts)?,
        });
    }
    Ok(out)
}
