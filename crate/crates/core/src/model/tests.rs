use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_check, Tape, Tensor};
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::Error;

fn random_features(t: usize, c: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..t * c).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureMatrix::new(v, t, c, 25.0, 10.0, FeatureKind::Mfcc).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig {
        name: "tiny".into(),
        input_channels: 3,
        n_classes: 3,
        width_multiplier: 1,
        dropout_rate: None,
        layers: vec![
            LayerSpec::new(LayerKind::GatedConvBlock, 2, 3, 1),
            LayerSpec::new(LayerKind::GatedSeparableBranch, 2, 4, 1),
            LayerSpec::new(LayerKind::GatedConvBlock, 4, 2, 1).residual(),
            LayerSpec::new(LayerKind::StridedGatedConv, 3, 3, 2).skip(),
            LayerSpec::new(LayerKind::StridedGatedConv, 3, 2, 2).skip(),
            LayerSpec::new(LayerKind::Head, 0, 1, 1),
        ],
    }
}

#[test]
fn preset_parameter_counts() {
    let slim = Model::build(&ModelConfig::slim(), 1).unwrap();
    let wide = Model::build(&ModelConfig::wide(), 1).unwrap();
    assert_eq!(slim.param_count(), 4_699);
    assert_eq!(wide.param_count(), 15_291);
    assert_eq!(param_count(&ModelConfig::slim()).unwrap(), 4_699);
    assert_eq!(param_count(&ModelConfig::wide()).unwrap(), 15_291);
}

#[test]
fn closed_form_count_matches_allocation() {
    for cfg in [tiny(), ModelConfig::slim(), ModelConfig::wide(), ModelConfig::slim().with_width_multiplier(3)] {
        let m = Model::build(&cfg, 0).unwrap();
        assert_eq!(param_count(&cfg).unwrap(), m.param_count(), "{}", cfg.name);
    }
}

#[test]
fn build_is_deterministic_and_f32_exact() {
    let a = Model::build(&ModelConfig::slim(), 5).unwrap();
    let b = Model::build(&ModelConfig::slim(), 5).unwrap();
    let c = Model::build(&ModelConfig::slim(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params(), c.params());
    for (_, t) in a.params().iter() {
        assert!(t.data().iter().all(|&v| v as f32 as f64 == v));
    }
}

#[test]
fn tape_and_inference_agree() {
    let m = Model::build(&ModelConfig::slim(), 3).unwrap();
    let f = random_features(50, 20, 1);
    let tape_logits = m.forward(&f, false).unwrap();
    let direct = m.logits(&f).unwrap();
    assert_eq!(tape_logits.shape(), &[3]);
    for (a, b) in tape_logits.data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
    let f32_model = m.compile::<f32>();
    let x: Vec<f32> = f.values().iter().map(|&v| v as f32).collect();
    let low = f32_model.logits(&x, 50).unwrap();
    for (a, b) in low.iter().zip(&direct) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}

#[test]
fn batched_forward_matches_single() {
    let m = Model::build(&tiny(), 2).unwrap();
    let f1 = random_features(20, 3, 1);
    let f2 = random_features(20, 3, 2);
    let mut tape = Tape::new();
    let p = m.params().record_constant(&mut tape);
    let mut data = f1.values().to_vec();
    data.extend_from_slice(f2.values());
    let x = tape.constant(Tensor::new([2, 20, 3], data).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = m.forward_tape(&mut tape, &p, x, false, &mut rng, Ablation::default()).unwrap();
    let batch = tape.data(out.logits).to_vec();
    assert_eq!(tape.shape(out.logits), &[2, 3]);
    let single: Vec<f64> = [f1, f2].iter().flat_map(|f| m.logits(f).unwrap()).collect();
    for (a, b) in batch.iter().zip(&single) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn whole_model_gradient_check() {
    let m = Model::build(&tiny(), 4).unwrap();
    let f = random_features(12, 3, 9);
    let mut inputs: Vec<Tensor> = m.params().iter().map(|(_, t)| t.clone()).collect();
    // non-zero biases so every path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in &mut inputs {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    inputs.push(Tensor::new([12, 3], f.values().to_vec()).unwrap());
    let report = finite_diff_check(
        |tape, vars| {
            let (x, params) = vars.split_last().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = m.forward_tape(tape, params, *x, false, &mut rng, Ablation::default())?;
            tape.cross_entropy(out.logits, &[1])
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn activations_are_causal() {
    let m = Model::build(&ModelConfig::slim(), 7).unwrap();
    let f = random_features(64, 20, 3);
    let base = m.activations(&f, Ablation::default()).unwrap();
    for p in [0usize, 17, 40, 63] {
        let mut v = f.values().to_vec();
        for c in 0..20 {
            v[p * 20 + c] += 1.5;
        }
        let g = FeatureMatrix::new(v, 64, 20, 25.0, 10.0, FeatureKind::Mfcc).unwrap();
        let moved = m.activations(&g, Ablation::default()).unwrap();
        for ((act, a), (_, b)) in base.iter().zip(&moved) {
            if act.name == "logits" {
                continue;
            }
            let c = *a.shape().last().unwrap();
            for (t, (ra, rb)) in a.data().chunks(c).zip(b.data().chunks(c)).enumerate() {
                if t * act.stride < p {
                    assert_eq!(ra, rb, "{} step {t} moved by frame {p}", act.name);
                }
            }
        }
    }
}

#[test]
fn residual_and_skip_paths_are_live() {
    let m = Model::build(&ModelConfig::slim(), 8).unwrap();
    let f = random_features(40, 20, 4);
    let logits = |a: Ablation| {
        let acts = m.activations(&f, a).unwrap();
        acts.last().unwrap().1.data().to_vec()
    };
    let full = logits(Ablation::default());
    for (i, blk) in m.architecture().blocks.iter().enumerate() {
        if blk.residual {
            let cut = logits(Ablation { residual: Some(i), skip: None });
            assert!(full.iter().zip(&cut).any(|(a, b)| (a - b).abs() > 1e-9), "residual {i}");
        }
    }
    for j in 0..m.architecture().skips.len() {
        let cut = logits(Ablation { residual: None, skip: Some(j) });
        assert!(full.iter().zip(&cut).any(|(a, b)| (a - b).abs() > 1e-9), "skip {j}");
    }
}

#[test]
fn short_and_misshaped_inputs_are_rejected() {
    let m = Model::build(&ModelConfig::slim(), 0).unwrap();
    assert_eq!(m.min_input_frames(), 16);
    assert!(matches!(m.logits(&random_features(15, 20, 0)), Err(Error::TooShort { needed: 16, got: 15, .. })));
    assert!(matches!(m.logits(&random_features(30, 19, 0)), Err(Error::Shape(_))));
    assert!(m.logits(&random_features(16, 20, 0)).is_ok());
}

#[test]
fn invalid_configs_are_config_errors() {
    let mut no_head = tiny();
    no_head.layers.pop();
    let mut bad_residual = tiny();
    bad_residual.layers[0].residual = true;
    let mut orphan_branch = tiny();
    orphan_branch.layers.swap(0, 1);
    let mut gap = tiny();
    gap.layers[4].skip = false;
    for cfg in [no_head, bad_residual, orphan_branch, gap] {
        assert!(matches!(Model::build(&cfg, 0), Err(Error::Config(_))), "{:?}", cfg.layers);
    }
}

#[test]
fn weight_file_round_trip_is_exact() {
    let mut m = Model::build(&ModelConfig::wide(), 11).unwrap();
    m.metadata.push(("epochs".into(), "3".into()));
    let mut buf = Vec::new();
    write_model(&mut buf, &m).unwrap();
    assert_eq!(&buf[..4], b"SWSH");
    let back = read_model(&buf[..]).unwrap();
    assert_eq!(back, m);
    let f = random_features(30, 20, 2);
    assert_eq!(back.logits(&f).unwrap(), m.logits(&f).unwrap());
    for cut in [3, 10, buf.len() / 2, buf.len() - 1] {
        assert!(matches!(read_model(&buf[..cut]), Err(Error::Format(_))), "cut {cut}");
    }
}
