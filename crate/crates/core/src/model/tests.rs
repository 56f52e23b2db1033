use super::*;
use crate::numerics::{finite_diff_grad_flat, relative_error};

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Dense2D<f64> {
    let data = (0..rows * cols).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    Dense2D::new(rows, cols, data).unwrap()
}

fn cfg(self_gating: bool, normalization: Normalization, hidden: Option<usize>) -> ModelConfig {
    ModelConfig {
        hidden_width: hidden,
        logit_scale: 5.0,
        self_gating,
        normalization,
    }
}

fn affine(w: &[[f64; 2]; 2], b: [f64; 2]) -> AffineParams<f64> {
    AffineParams::new(Dense2D::from_rows(w).unwrap(), b.to_vec()).unwrap()
}

fn all_configs() -> Vec<ModelConfig> {
    let mut v = Vec::new();
    for gating in [true, false] {
        for norm in [Normalization::Scn, Normalization::PlainCn, Normalization::None] {
            v.push(cfg(gating, norm, None));
        }
    }
    v.push(cfg(true, Normalization::Scn, Some(5)));
    v
}

#[test]
fn init_is_deterministic_with_unit_scalars() {
    let c = ModelConfig::default();
    let a: ModelParams = init_params(&c, 6, 8, &mut Rng::seed_from(4)).unwrap();
    let b: ModelParams = init_params(&c, 6, 8, &mut Rng::seed_from(4)).unwrap();
    assert_eq!(a.flatten(), b.flatten());
    assert_eq!((a.scn1.alpha, a.scn1.beta, a.scn2.alpha, a.scn2.beta), (1.0, 1.0, 1.0, 1.0));
    assert!(a.phi_a.bias.iter().all(|&v| v == 0.0));
}

#[test]
fn init_variance_matches_xavier_at_full_width() {
    let c = ModelConfig {
        hidden_width: Some(2048),
        ..ModelConfig::default()
    };
    let p: ModelParams = init_params(&c, 85, 2048, &mut Rng::seed_from(1)).unwrap();
    let check = |layer: &AffineParams<f32>| {
        let w = layer.weight.data();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / (layer.in_dim() + layer.out_dim()) as f64;
        assert!((var / target - 1.0).abs() < 0.2, "variance {var} vs {target}");
    };
    check(&p.phi_a);
    check(&p.proj);
}

#[test]
fn default_parameter_count() {
    let arch = Architecture::new(
        &ModelConfig {
            hidden_width: Some(2048),
            ..ModelConfig::default()
        },
        85,
        2048,
    )
    .unwrap();
    assert_eq!(arch.param_count(), 3 * (85 * 2048 + 2048) + (2048 * 2048 + 2048) + 4);
    assert!(!arch.has_output_projection());
}

#[test]
fn hidden_width_defaults_to_feature_dim() {
    let arch = Architecture::new(&ModelConfig::default(), 16, 64).unwrap();
    assert_eq!(arch.hidden, 64);
    let arch = Architecture::new(&cfg(true, Normalization::Scn, Some(32)), 16, 64).unwrap();
    assert!(arch.has_output_projection());
    assert_eq!(arch.param_count(), 3 * (16 * 32 + 32) + 32 * 32 + 32 + 4 + 32 * 64 + 64);
}

#[test]
fn disabling_gating_drops_two_attribute_branches() {
    let (z, h) = (7, 9);
    let full = Architecture::new(&cfg(true, Normalization::Scn, Some(h)), z, h).unwrap();
    let plain = Architecture::new(&cfg(false, Normalization::Scn, Some(h)), z, h).unwrap();
    assert_eq!(full.param_count(), plain.param_count());
    assert_eq!(full.active_param_count() - plain.active_param_count(), 2 * (z * h + h));
}

fn hand_model() -> ModelParams<f64> {
    let mut p: ModelParams<f64> = init_params(&cfg(true, Normalization::None, Some(2)), 2, 2, &mut Rng::seed_from(0)).unwrap();
    p.phi_a = affine(&[[1.0, -1.0], [2.0, 0.5]], [0.0, 0.5]);
    p.phi_s = affine(&[[0.0, 1.0], [1.0, 0.0]], [0.0, 0.0]);
    p.phi_b = affine(&[[0.5, 0.0], [0.0, -1.0]], [0.0, 0.0]);
    p
}

#[test]
fn self_gate_hand_computed() {
    let p = hand_model();
    let attrs = Dense2D::identity(2);
    let (g, _) = p.self_gate(&attrs).unwrap();
    // class 0: relu([1, -0.5]) * sigmoid([0, 1]) + relu([0.5, 0])
    // class 1: relu([2, 1]) * sigmoid([1, 0]) + relu([0, -1])
    let expected = [1.0, 0.0, 2.0 * 0.731_058_578_630_004_9, 0.5];
    for (v, e) in g.data().iter().zip(expected) {
        assert!((v - e).abs() < 1e-12, "{v} vs {e}");
    }
}

#[test]
fn self_gate_saturation_limits() {
    let mut rng = Rng::seed_from(2);
    let mut p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(4)), 3, 4, &mut rng).unwrap();
    let attrs = random(2, 3, &mut rng);

    p.phi_s.bias = vec![-1e3; 4];
    let (g, _) = p.self_gate(&attrs).unwrap();
    let (b, _) = affine_forward(&p.phi_b, &attrs).unwrap();
    let rb = relu_forward(&b).0;
    assert!(relative_error(g.data(), rb.data()) < 1e-12);

    p.phi_s.bias = vec![1e3; 4];
    p.phi_b = AffineParams::zeros(3, 4);
    let (g, _) = p.self_gate(&attrs).unwrap();
    let (a, _) = affine_forward(&p.phi_a, &attrs).unwrap();
    let ra = relu_forward(&a).0;
    assert!(relative_error(g.data(), ra.data()) < 1e-12);
}

#[test]
fn embedding_without_normalization_by_hand() {
    let mut p: ModelParams<f64> = init_params(&cfg(true, Normalization::None, Some(2)), 2, 2, &mut Rng::seed_from(0)).unwrap();
    for layer in [&mut p.phi_a, &mut p.phi_s, &mut p.phi_b, &mut p.proj] {
        *layer = AffineParams::new(Dense2D::identity(2), vec![0.0, 0.0]).unwrap();
    }
    let attrs = Dense2D::from_rows(&[[1.0, 2.0]]).unwrap();
    let (e, _) = p.embed_attributes(&attrs).unwrap();
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    let expected = [1.0 * s(1.0) + 1.0, 2.0 * s(2.0) + 2.0];
    assert!(relative_error(e.data(), &expected) < 1e-14);
}

#[test]
fn embedding_rows_are_standardized_under_unit_scn() {
    let mut rng = Rng::seed_from(8);
    let p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(16)), 5, 16, &mut rng).unwrap();
    let (e, _) = p.embed_attributes(&random(4, 5, &mut rng)).unwrap();
    let (mean, std) = crate::numerics::rowwise_mean_std(&e, 0.0).unwrap();
    for (m, s) in mean.iter().zip(&std) {
        assert!(m.abs() < 1e-6);
        assert!((s - 1.0).abs() < 1e-3);
    }
}

#[test]
fn logits_structure() {
    let mut rng = Rng::seed_from(12);
    let p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(6)), 4, 6, &mut rng).unwrap();
    let x = random(5, 6, &mut rng);
    let attrs = random(3, 4, &mut rng);

    assert_eq!(p.predict(&x, &attrs.select_rows(&[1]).unwrap()).unwrap(), vec![0; 5]);

    let dup = attrs.select_rows(&[0, 2, 2]).unwrap();
    let (l, _) = p.forward_logits(&x, &dup).unwrap();
    for i in 0..5 {
        assert_eq!(l.get(i, 1), l.get(i, 2));
    }

    let (base, _) = p.forward_logits(&x, &attrs).unwrap();
    let perm = [2, 0, 1];
    let (permuted, _) = p.forward_logits(&x, &attrs.select_rows(&perm).unwrap()).unwrap();
    for i in 0..5 {
        for (j, &src) in perm.iter().enumerate() {
            assert!((permuted.get(i, j) - base.get(i, src)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_scale_gives_ln_c_loss() {
    let mut rng = Rng::seed_from(13);
    let mut c = cfg(true, Normalization::Scn, Some(6));
    c.logit_scale = 0.0;
    let p: ModelParams<f64> = init_params(&c, 4, 6, &mut rng).unwrap();
    let loss = p.loss(&random(5, 6, &mut rng), &[0, 1, 2, 3, 0], &random(4, 4, &mut rng)).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_norm_feature_is_an_error() {
    let mut rng = Rng::seed_from(14);
    let p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(6)), 4, 6, &mut rng).unwrap();
    let x = Dense2D::zeros(1, 6);
    assert!(matches!(p.predict(&x, &random(2, 4, &mut rng)), Err(Error::ZeroNorm(_))));
}

fn check_full_gradient(c: &ModelConfig, seed: u64) {
    let mut rng = Rng::seed_from(seed);
    let (z, d, n, classes) = (3, 4, 6, 3);
    let mut p: ModelParams<f64> = init_params(c, z, d, &mut rng).unwrap();
    // move normalization scalars away from 1 so their gradient paths are exercised
    p.scn1.alpha = 0.7;
    p.scn1.beta = 1.3;
    p.scn2.alpha = 1.2;
    p.scn2.beta = 0.8;
    // positive biases keep the tiny ReLU layers from zeroing a whole class row
    for layer in [&mut p.phi_a, &mut p.phi_b, &mut p.proj] {
        layer.bias = (0..layer.out_dim()).map(|_| rng.uniform_in(0.1, 0.5)).collect();
    }
    let x = random(n, d, &mut rng);
    let attrs = random(classes, z, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();

    let (_, analytic) = p.loss_and_grads(&x, &labels, &attrs).unwrap();
    let base = p.flatten();
    let mut probe = p.clone();
    let numeric = finite_diff_grad_flat(
        |v| {
            probe.unflatten(v)?;
            probe.loss(&x, &labels, &attrs)
        },
        &base,
        1e-5,
    )
    .unwrap();
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "config {c:?} seed {seed}: relative error {err}");
}

#[test]
fn full_gradient_matches_finite_differences_for_every_variant() {
    for c in all_configs() {
        for seed in 0..3 {
            check_full_gradient(&c, seed);
        }
    }
}

#[test]
fn ablated_parameters_get_exactly_zero_gradient() {
    let mut rng = Rng::seed_from(21);
    let x = random(6, 4, &mut rng);
    let attrs = random(3, 3, &mut rng);
    let labels = [0, 1, 2, 0, 1, 2];

    let mut p: ModelParams<f64> = init_params(&cfg(false, Normalization::None, None), 3, 4, &mut rng).unwrap();
    p.loss_and_grads(&x, &labels, &attrs).unwrap();
    assert!(p.phi_s.grad_weight.data().iter().all(|&g| g == 0.0));
    assert!(p.phi_s.grad_bias.iter().all(|&g| g == 0.0));
    assert!(p.phi_b.grad_weight.data().iter().all(|&g| g == 0.0));
    assert!(p.phi_b.grad_bias.iter().all(|&g| g == 0.0));
    assert_eq!([p.scn1.grad_alpha, p.scn1.grad_beta, p.scn2.grad_alpha, p.scn2.grad_beta], [0.0; 4]);

    let mut p: ModelParams<f64> = init_params(&cfg(true, Normalization::PlainCn, None), 3, 4, &mut rng).unwrap();
    p.loss_and_grads(&x, &labels, &attrs).unwrap();
    assert_eq!([p.scn1.grad_alpha, p.scn1.grad_beta, p.scn2.grad_alpha, p.scn2.grad_beta], [0.0; 4]);
    assert!(p.phi_s.grad_weight.data().iter().any(|&g| g != 0.0));
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    let m = Dense2D::from_rows(&[[0.1, 0.9], [0.5, 0.5], [0.2, 0.7]]).unwrap();
    assert_eq!(argmax_rows(&m), vec![1, 0, 1]);
}

#[test]
fn predict_matches_brute_force_nearest_cosine() {
    for seed in 0..100 {
        let mut rng = Rng::seed_from(1000 + seed);
        let p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(5)), 3, 5, &mut rng).unwrap();
        let x = random(4, 5, &mut rng);
        let attrs = random(6, 3, &mut rng);
        let (e, _) = p.embed_attributes(&attrs).unwrap();
        let preds = p.predict(&x, &attrs).unwrap();
        for (i, &pred) in preds.iter().enumerate() {
            let xi = x.row(i);
            let nx = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..6 {
                let ec = e.row(c);
                let ne = ec.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = xi.iter().zip(ec).map(|(a, b)| a * b).sum::<f64>() / (nx * ne);
                if cos > best.0 {
                    best = (cos, c);
                }
            }
            assert_eq!(pred, best.1);
        }
    }
}

#[test]
fn predict_invariant_to_feature_rescaling() {
    let mut rng = Rng::seed_from(31);
    let p: ModelParams<f64> = init_params(&cfg(true, Normalization::Scn, Some(5)), 3, 5, &mut rng).unwrap();
    let x = random(10, 5, &mut rng);
    let attrs = random(4, 3, &mut rng);
    let base = p.predict(&x, &attrs).unwrap();
    let mut scaled = x.clone();
    for i in 0..10 {
        let s = 0.01 + 10.0 * rng.uniform();
        for v in scaled.row_mut(i) {
            *v *= s;
        }
    }
    assert_eq!(p.predict(&scaled, &attrs).unwrap(), base);
}

#[test]
fn checkpoint_round_trip_and_shape_guard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mczp");
    let c = cfg(true, Normalization::Scn, Some(6));
    let p: ModelParams = init_params(&c, 4, 8, &mut Rng::seed_from(3)).unwrap();
    write_checkpoint(&p, &path).unwrap();

    let mut q: ModelParams = init_params(&c, 4, 8, &mut Rng::seed_from(99)).unwrap();
    read_checkpoint(&path, &mut q).unwrap();
    assert_eq!(p.flatten(), q.flatten());

    let mut wrong: ModelParams = init_params(&cfg(true, Normalization::Scn, Some(7)), 4, 8, &mut Rng::seed_from(3)).unwrap();
    assert!(matches!(read_checkpoint(&path, &mut wrong), Err(Error::Format(FormatError::Invariant(_)))));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_checkpoint(&path, &mut q), Err(Error::Format(FormatError::Truncated { .. }))));
}

use crate::error::FormatError;

mod props {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(seed in 0u64..1000, scale in 0.1f64..3.0) {
            let c = cfg(true, Normalization::Scn, Some(5));
            let mut p: ModelParams<f64> = init_params(&c, 3, 4, &mut Rng::seed_from(0)).unwrap();
            let mut rng = Rng::seed_from(seed);
            let v: Vec<f64> = (0..p.param_count()).map(|_| scale * (rng.uniform() + 0.01)).collect();
            p.unflatten(&v).unwrap();
            prop_assert_eq!(p.flatten(), v);
        }
    }
}
