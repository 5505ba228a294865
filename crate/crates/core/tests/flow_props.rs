use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use vqcollapse::ae_flow::{ae_loss, integrate_ae, integrate_ae_from, DiagState, InitConfig};
use vqcollapse::rdae_dense::{
    dense_channel, dense_eigenvalue_rates, dense_rdae_derivatives, dense_water_level_log_derivative,
    integrate_dense_state, sorted_eigen, ChannelMode, DenseSimConfig, DenseState,
};
use vqcollapse::rdae_diag::{
    diag_channel, diag_rdae_derivatives, integrate_diag_rdae, logistic_rate, plateau_loss, DiagInit, DiagSimConfig,
};
use vqcollapse::seed::run_rng;
use vqcollapse::spectral::{power_law_spectrum, Spectrum};

fn diag_config(sp: &Spectrum, rate: f64, beta: f64, init: DiagInit, dt: f64, steps: usize) -> DiagSimConfig {
    let mut c = DiagSimConfig::new(sp.clone(), rate, beta, init, steps);
    c.dt = dt;
    c.record_every = 10;
    c
}

fn balanced(s: f64) -> DiagInit {
    DiagInit::Balanced(InitConfig::from_scale(s).unwrap())
}

#[test]
fn plain_ae_invariants() {
    let sp = power_law_spectrum(12, 1.0).unwrap();
    let tr = integrate_ae(&sp, &InitConfig::from_scale(0.01).unwrap(), 0.01, 6000, 20).unwrap();
    let mut prev: Option<&vqcollapse::Snapshot> = None;
    for s in &tr.snapshots {
        for w in s.modes.windows(2) {
            assert!(w[0] >= w[1], "activation ordering at t = {}", s.t);
        }
        let loss: f64 = sp.values().iter().zip(&s.modes).map(|(v, r)| v * (1.0 - r).powi(2)).sum();
        assert!((loss - s.l_rec).abs() < 1e-12);
        if let Some(p) = prev {
            assert!(s.l_rec <= p.l_rec + 1e-15);
            for (a, b) in p.modes.iter().zip(&s.modes) {
                assert!(b >= a, "activation decreased at t = {}", s.t);
            }
        }
        prev = Some(s);
    }

    let mut state = DiagState::balanced(12, &InitConfig::from_scale(0.01).unwrap());
    for _ in 0..60 {
        let (_, next) = integrate_ae_from(state, &sp, 0.01, 100, 100).unwrap();
        for (u, v) in next.u.iter().zip(&next.v) {
            assert!((u - v).abs() < 1e-8);
        }
        state = next;
    }
    assert!(ae_loss(&state, &sp) < 0.6);
}

#[test]
fn rdae_balance_and_frozen_modes() {
    let sp = power_law_spectrum(16, 1.0).unwrap();
    let rate = 6.0;
    let mut state = DiagState::balanced(16, &InitConfig::from_scale(0.01).unwrap());
    let dt = 0.01;
    let chunk = 50;
    let mut frozen_seen = false;
    for _ in 0..80 {
        let before = state.clone();
        let ch_before = diag_channel(&before, &sp, rate).unwrap();
        let cfg = diag_config(&sp, rate, 1.0, DiagInit::State(before.clone()), dt, chunk);
        let (_, rep) = integrate_diag_rdae(&cfg).unwrap();
        let after = rep.final_state;
        let ch_after = diag_channel(&after, &sp, rate).unwrap();
        for j in 0..16 {
            if ch_after.is_active(j) {
                assert!((after.u[j] - after.v[j]).abs() < 1e-7);
            }
            if !ch_before.is_active(j) && !ch_after.is_active(j) && before.t > 5.0 {
                frozen_seen = true;
                let rate_of_change = (after.u[j] - before.u[j]).abs().max((after.v[j] - before.v[j]).abs());
                assert!(rate_of_change < 1e-9 * dt * chunk as f64, "mode {j} drifted by {rate_of_change}");
            }
        }
        state = after;
    }
    assert!(frozen_seen);
}

#[test]
fn non_gradient_asymmetry() {
    // One mode: c = 1 - 2^{-2R} does not depend on the state, so R = 1/2 pins c = 1/2.
    let sp = Spectrum::new(vec![1.0]).unwrap();
    let rate = 0.5;
    let at = |u: f64, v: f64| {
        let st = DiagState::new(vec![u], vec![v]).unwrap();
        let ch = diag_channel(&st, &sp, rate).unwrap();
        assert!((ch.per_mode[0].gain - 0.5).abs() < 1e-12);
        let (du, dv) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        (du[0], dv[0])
    };
    let (u, v, h) = (0.5, 0.5, 1e-6);
    let du_dv = (at(u, v + h).0 - at(u, v - h).0) / (2.0 * h);
    let dv_du = (at(u + h, v).1 - at(u - h, v).1) / (2.0 * h);
    assert!((du_dv - dv_du).abs() > 1e-6, "{du_dv} vs {dv_du}");
}

#[test]
fn zero_beta_inactive_mode_grows() {
    let sp = Spectrum::new(vec![1.0, 0.1]).unwrap();
    let st = DiagState::new(vec![1.0, 0.01], vec![1.0, 0.02]).unwrap();
    let ch = diag_channel(&st, &sp, 1.0).unwrap();
    assert!(!ch.is_active(1));
    let (du, _) = diag_rdae_derivatives(&st, &sp, &ch, 0.0).unwrap();
    assert!(du[1] > 0.0);
    assert!((du[1] - 2.0 * 0.1 * 0.02).abs() < 1e-15);
}

#[test]
fn water_level_rises_between_active_set_changes() {
    let sp = power_law_spectrum(16, 1.0).unwrap();
    let (tr, _) = integrate_diag_rdae(&diag_config(&sp, 8.0, 1.0, balanced(0.01), 0.01, 4000)).unwrap();
    for w in tr.snapshots.windows(2) {
        if w[0].active_count == w[1].active_count && w[0].active_count > 0.0 {
            assert!(w[1].water_level >= w[0].water_level * (1.0 - 1e-12), "t = {}", w[1].t);
        }
    }
}

#[test]
fn converged_loss_matches_plateau() {
    let sp = power_law_spectrum(16, 1.0).unwrap();
    for rate in [3.0, 6.0, 9.0] {
        let mut cfg = diag_config(&sp, rate, 1.0, balanced(0.01), 0.02, 40_000);
        cfg.stop_on_convergence = true;
        let (_, rep) = integrate_diag_rdae(&cfg).unwrap();
        assert!(rep.converged, "rate {rate}");
        let plateau = plateau_loss(&sp, rep.k_infinity, rate).unwrap();
        assert!((rep.loss_final / plateau - 1.0).abs() < 0.01, "rate {rate}: {} vs {plateau}", rep.loss_final);
    }
}

#[test]
fn logistic_reduction() {
    let sp = Spectrum::new(vec![1.0, 0.7, 0.4, 0.2]).unwrap();
    for r in [0.05f64, 0.3, 0.6, 0.9] {
        let st = DiagState::new(vec![r.sqrt(); 4], vec![r.sqrt(); 4]).unwrap();
        let ch = diag_channel(&st, &sp, 2.0).unwrap();
        let (du, _) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        for &j in &ch.active_set {
            // r = u², so ṙ = 2 u u̇ on the balanced manifold.
            let want = logistic_rate(r, sp.values()[j], ch.per_mode[j].gain);
            assert!((2.0 * st.u[j] * du[j] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn high_rate_matches_plain_ae() {
    let sp = Spectrum::new(vec![1.0, 0.3]).unwrap();
    let init = InitConfig::from_scale(0.05).unwrap();
    let plain = integrate_ae(&sp, &init, 0.01, 3000, 10).unwrap();
    let (rd, _) = integrate_diag_rdae(&diag_config(&sp, 40.0, 1.0, DiagInit::Balanced(init), 0.01, 3000)).unwrap();
    for (p, q) in plain.snapshots.iter().zip(&rd.snapshots) {
        let st = DiagState::new(q.modes.clone(), q.modes.clone()).unwrap();
        let ch = diag_channel(&st, &sp, 40.0).unwrap();
        if ch.per_mode.iter().all(|m| m.gain > 0.99) {
            let r: Vec<f64> = q.modes.iter().map(|u| u * u).collect();
            for (a, b) in p.modes.iter().zip(&r) {
                assert!((a - b).abs() <= 0.01 * a, "t = {}", p.t);
            }
        }
    }
}

fn dense_config(sp: &Spectrum, rate: f64, dt: f64, steps: usize, mode: ChannelMode) -> DenseSimConfig {
    DenseSimConfig {
        spectrum: sp.clone(),
        rate_bits: rate,
        beta: 1.0,
        init_scale: 0.1,
        seed: 0,
        dt,
        steps,
        record_every: 10,
        num_seeds: 1,
        mode,
    }
}

#[test]
fn dense_matches_diagonal_on_diagonal_manifold() {
    let sp = power_law_spectrum(8, 1.0).unwrap();
    let rate = 4.0;
    let init = InitConfig::from_scale(0.01).unwrap();
    let start = DiagState::balanced(8, &init);
    let (diag_tr, rep) = integrate_diag_rdae(&diag_config(&sp, rate, 1.0, DiagInit::State(start.clone()), 0.01, 3000)).unwrap();
    let (_, end) =
        integrate_dense_state(&dense_config(&sp, rate, 0.01, 3000, ChannelMode::RateDistortion), DenseState::from_diag(&start))
            .unwrap();
    for j in 0..8 {
        assert!((end.w1[(j, j)] - rep.final_state.u[j]).abs() < 1e-8);
        assert!((end.w2[(j, j)] - rep.final_state.v[j]).abs() < 1e-8);
    }
    assert!(diag_tr.last().unwrap().active_count < 8.0);
}

#[test]
fn dense_high_rate_limit() {
    let sp = power_law_spectrum(4, 1.0).unwrap();
    let mut rng = run_rng(9, 0);
    let start = DenseState::gaussian(4, 0.5, &mut rng);
    let (rd, _) = integrate_dense_state(&dense_config(&sp, 400.0, 0.02, 1000, ChannelMode::RateDistortion), start.clone()).unwrap();
    let (plain, _) = integrate_dense_state(&dense_config(&sp, 400.0, 0.02, 1000, ChannelMode::Identity), start).unwrap();
    for (a, b) in rd.snapshots.iter().zip(&plain.snapshots) {
        assert!((a.l_rec - b.l_rec).abs() < 1e-4, "t = {}", a.t);
    }
}

fn random_state(d: usize, seed: u64, scale: f64) -> DenseState {
    let mut rng = run_rng(seed, 0);
    let mut m = || DMatrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let w1 = m();
    let w2 = m();
    DenseState::new(w1, w2).unwrap()
}

#[test]
fn channel_matrices_are_symmetric_psd() {
    let sp = power_law_spectrum(10, 1.0).unwrap();
    for seed in 0..20 {
        let st = random_state(10, seed, 0.4);
        let ch = dense_channel(&st.w1, &sp, 3.0 + seed as f64).unwrap();
        for m in [&ch.m, &ch.gamma_q] {
            assert!((m - m.transpose()).amax() < 1e-12);
            let (vals, _) = sorted_eigen(m).unwrap();
            assert!(*vals.last().unwrap() >= -1e-10);
        }
        let (vals, _) = sorted_eigen(&ch.m).unwrap();
        assert!(vals[0] < 1.0);
    }
}

#[test]
fn recorded_steps_satisfy_rate_constraint() {
    let sp = power_law_spectrum(8, 1.0).unwrap();
    let rate = 5.0;
    let mut rng = run_rng(4, 0);
    let (tr, _) = integrate_dense_state(
        &dense_config(&sp, rate, 0.05, 400, ChannelMode::RateDistortion),
        DenseState::gaussian(8, 0.1, &mut rng),
    )
    .unwrap();
    for s in &tr.snapshots {
        let spent: f64 = s.modes.iter().filter(|&&l| l > s.water_level).map(|l| 0.5 * (l / s.water_level).log2()).sum();
        assert!((spent - rate).abs() < 1e-9, "t = {}: {spent}", s.t);
    }
}

#[test]
fn dense_rates_match_finite_differences() {
    let sp = power_law_spectrum(6, 1.0).unwrap();
    let rate = 3.0;
    for seed in 0..10 {
        let st = random_state(6, 100 + seed, 0.5);
        let ch = dense_channel(&st.w1, &sp, rate).unwrap();
        let (w1_dot, _) = dense_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        let rates = dense_eigenvalue_rates(&st.w1, &w1_dot, &sp, &ch).unwrap();
        let h = 1e-6;
        let plus = dense_channel(&(&st.w1 + &w1_dot * h), &sp, rate).unwrap();
        let minus = dense_channel(&(&st.w1 - &w1_dot * h), &sp, rate).unwrap();
        for j in 0..6 {
            let fd = (plus.eigvals[j] - minus.eigvals[j]) / (2.0 * h);
            assert!((fd - rates[j]).abs() <= 1e-4 * rates[j].abs().max(1e-6), "seed {seed} mode {j}: {fd} vs {}", rates[j]);
        }
        if plus.active_count == ch.active_count && minus.active_count == ch.active_count {
            let fd = (plus.water_level.ln() - minus.water_level.ln()) / (2.0 * h);
            let exact = dense_water_level_log_derivative(&ch, &rates).unwrap();
            assert!((fd - exact).abs() <= 1e-3 * exact.abs().max(1e-6), "seed {seed}: {fd} vs {exact}");
        }
    }
}
