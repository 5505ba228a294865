use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use vqcollapse::rdae_dense::DenseState;
use vqcollapse::seed::run_rng;
use vqcollapse::spectral::{power_law_spectrum, Spectrum};
use vqcollapse::toyvq::{
    encode, kmeans_init, quantize, quantize_batch, run_vq_experiment, sample_batch, vq_train_step, Codebook, VQTrainConfig,
};

const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

#[test]
fn two_means_of_a_standard_normal() {
    assert!((HALF_NORMAL_MEAN - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
    let mut rng = run_rng(17, 0);
    let x = DMatrix::from_fn(100_000, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cb = kmeans_init(&x, 2, 50, &mut rng).unwrap();
    let mut c = [cb.codes[(0, 0)], cb.codes[(1, 0)]];
    c.sort_by(f64::total_cmp);
    assert!((c[0] + HALF_NORMAL_MEAN).abs() < 0.02 * HALF_NORMAL_MEAN, "{c:?}");
    assert!((c[1] - HALF_NORMAL_MEAN).abs() < 0.02 * HALF_NORMAL_MEAN, "{c:?}");
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantize_returns_a_nearest_code(
        codes in prop::collection::vec(-3.0f64..3.0, 3..60),
        z in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let k = codes.len() / 3;
        let m = DMatrix::from_row_slice(k, 3, &codes[..3 * k]);
        let cb = Codebook::from_codes(m.clone(), 1.0, 0.99, 0.0).unwrap();
        let (idx, zq) = quantize(&z, &cb).unwrap();
        let best = sq(&z, &zq);
        for r in 0..k {
            let row: Vec<f64> = m.row(r).iter().cloned().collect();
            prop_assert!(best <= sq(&z, &row));
            if r < idx {
                prop_assert!(sq(&z, &row) > best);
            }
        }
    }

    #[test]
    fn ema_moves_used_codes_toward_their_latents(seed in 0u64..1000, decay in 0.5f64..0.999) {
        let mut rng = run_rng(seed, 0);
        let codes = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut cb = Codebook::from_codes(codes, 3.0, decay, 0.0).unwrap();
        for _ in 0..5 {
            let z = DMatrix::from_fn(20, 2, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let (assign, _) = quantize_batch(&z, &cb.codes);
            let old = cb.clone();
            cb.ema_update(&z, &assign).unwrap();
            for c in 0..6 {
                let members: Vec<usize> = (0..20).filter(|&i| assign[i] == c).collect();
                if members.is_empty() {
                    prop_assert_eq!(cb.codes.row(c), old.codes.row(c));
                    continue;
                }
                // Convex weights: γN on the old code, 1 on each assigned latent.
                let w_old = decay * old.usage_ema[c];
                let total = w_old + members.len() as f64;
                let mut want = old.codes.row(c) * (w_old / total);
                for &i in &members {
                    want += z.row(i) / total;
                }
                prop_assert!((cb.codes.row(c) - want).amax() < 1e-12);
            }
        }
    }
}

fn single_sample_step(beta: f64) -> (DMatrix<f64>, DMatrix<f64>, DenseState, DMatrix<f64>) {
    let mut rng = run_rng(5, 0);
    let model = DenseState::gaussian(3, 1.0, &mut rng);
    let x = DMatrix::from_row_slice(1, 3, &[0.9, -0.4, 1.3]);
    let codes = DMatrix::from_row_slice(2, 3, &[0.3, 0.1, -0.2, -1.0, 0.5, 0.4]);
    let mut cb = Codebook::from_codes(codes.clone(), 1.0, 0.9, 0.0).unwrap();
    let mut after = model.clone();
    vq_train_step(&mut after, &x, Some(&mut cb), beta, 1.0).unwrap();
    let g1 = &model.w1 - &after.w1;
    (x, codes, model, g1)
}

#[test]
fn straight_through_gradient_formula() {
    let beta = 0.7;
    let (x, codes, model, g1) = single_sample_step(beta);
    let z = encode(&model, &x);
    let (_, zq) = quantize_batch(&z, &codes);
    let xc = x.transpose();
    let zc = z.transpose();
    let qc = zq.transpose();
    let resid = &xc - &model.w2 * &qc;
    let want = model.w2.transpose() * &resid * x.clone() * -2.0 + (&zc - &qc) * x * (2.0 * beta);
    assert!((g1 - want).amax() < 1e-10);
}

#[test]
fn straight_through_is_not_the_true_gradient() {
    let beta = 0.7;
    let (x, codes, model, g1) = single_sample_step(beta);
    let loss = |w1: &DMatrix<f64>| {
        let z = &x * w1.transpose();
        let (_, zq) = quantize_batch(&z, &codes);
        let rec = (&x - &zq * model.w2.transpose()).norm_squared();
        rec + beta * (&z - &zq).norm_squared()
    };
    let h = 1e-6;
    let mut fd = DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let mut p = model.w1.clone();
            p[(i, j)] += h;
            let mut m = model.w1.clone();
            m[(i, j)] -= h;
            fd[(i, j)] = (loss(&p) - loss(&m)) / (2.0 * h);
        }
    }
    let z = encode(&model, &x);
    let (_, zq) = quantize_batch(&z, &codes);
    assert!((&z - &zq).norm() > 1e-3);
    assert!((&g1 - &fd).norm() > 1e-3 * fd.norm().max(1.0), "STE {g1} FD {fd}");
}

#[test]
fn single_code_at_origin_costs_total_variance() {
    let sp = power_law_spectrum(6, 1.0).unwrap();
    let mut rng = run_rng(8, 0);
    let mut model = DenseState::gaussian(6, 0.5, &mut rng);
    let mut cb = Codebook::from_codes(DMatrix::zeros(1, 6), 1.0, 0.99, 0.0).unwrap();
    let mut tail = 0.0;
    for step in 0..300 {
        let batch = sample_batch(&sp, 256, &mut rng);
        let m = vq_train_step(&mut model, &batch, Some(&mut cb), 1.0, 0.01).unwrap();
        if step >= 200 {
            tail += m.l_rec / 100.0;
        }
    }
    assert!((tail / sp.total() - 1.0).abs() < 0.05, "{tail} vs {}", sp.total());
}

#[test]
fn codebook_containing_every_latent_is_lossless() {
    let sp = Spectrum::new(vec![2.0, 1.0, 0.5]).unwrap();
    let mut rng = run_rng(11, 0);
    let model = DenseState::gaussian(3, 1.0, &mut rng);
    let x = sample_batch(&sp, 40, &mut rng);
    let z = encode(&model, &x);
    let (_, zq) = quantize_batch(&z, &z);
    assert_eq!(zq, z);
}

#[test]
fn experiment_keeps_codes_alive() {
    let cfg = VQTrainConfig {
        spectrum: power_law_spectrum(8, 1.0).unwrap(),
        codebook_size: 32,
        beta: 1.0,
        learning_rate: 0.05,
        batch_size: 128,
        total_steps: 600,
        warmup_steps: 300,
        seed: 3,
        kmeans_iters: 10,
        init_scale: 0.01,
        ema_decay: 0.99,
        respawn_threshold: None,
        record_every: 50,
        eval_samples: 1024,
    };
    let (tr, rep) = run_vq_experiment(&cfg).unwrap();
    for s in &tr.snapshots {
        if let Some(u) = s.utilization {
            assert!(u > 0.0 && u <= 1.0, "t = {}", s.t);
        }
    }
    assert!(rep.utilization > 0.0);
    assert!(tr.snapshots.iter().any(|s| s.utilization.is_none()));
    let again = run_vq_experiment(&cfg).unwrap();
    assert_eq!(again.0.to_csv(), tr.to_csv());
}
