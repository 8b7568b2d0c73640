use threat_pinn::networks::{ch, NetSpec, Normalization, PinnModel, PinnOutputs};
use threat_pinn::pmp::uniform_grid;
use threat_pinn::trainer::{self, Batch, LossWeights};
use threat_pinn::{Activation, RadialBasis, Scenario, Tape, TemporalMode, ThreatField, Workspace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scenario(rng: &mut ChaCha8Rng, mode: TemporalMode) -> Scenario {
    let bases = (0..3)
        .map(|_| {
            let l11: f64 = rng.random_range(0.03..0.2);
            let l22: f64 = rng.random_range(0.03..0.2);
            let l12 = rng.random_range(-0.4..0.4) * (l11 * l22).sqrt();
            RadialBasis::new(
                rng.random_range(0.2..1.5),
                [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
                [l11, l12, l22],
            )
        })
        .collect();
    let field = ThreatField::new(bases, 5.0, 1.0, mode).unwrap();
    Scenario::new([-11.0, -6.0], [9.0, 10.0], 10.0, 0.3, field, Workspace::default()).unwrap()
}

fn model(seed: u64, s: &Scenario) -> PinnModel {
    PinnModel::init(
        seed,
        NetSpec::uniform(2, 16, Activation::AdaptiveSine),
        NetSpec::uniform(3, 16, Activation::Silu),
        Normalization::for_workspace(&s.workspace, s.speed),
    )
    .unwrap()
}

struct Field<'a>(&'a ThreatField);

// closed-form c, ∇c and ∂c/∂t, written out independently of the library
impl Field<'_> {
    fn eval(&self, x: [f64; 2], t: f64) -> (f64, [f64; 2], f64) {
        let f = self.0;
        let (mut c, mut g, mut ct) = (0.0, [0.0, 0.0], 0.0);
        for b in f.bases() {
            let d = [x[0] - b.center[0], x[1] - b.center[1]];
            let [l11, l12, l22] = b.shape;
            let e = (-0.5 * (l11 * d[0] * d[0] + 2.0 * l12 * d[0] * d[1] + l22 * d[1] * d[1])).exp();
            let (m, mt) = match f.mode() {
                TemporalMode::Static => (b.peak, 0.0),
                TemporalMode::Cosine => (
                    0.5 * b.peak * ((b.peak * t).cos() + 1.5),
                    -0.5 * b.peak * b.peak * (b.peak * t).sin(),
                ),
            };
            c += m * e;
            g[0] -= m * e * (l11 * d[0] + l12 * d[1]);
            g[1] -= m * e * (l12 * d[0] + l22 * d[1]);
            ct += mt * e;
        }
        let a = f.amplitude();
        (f.offset() + a * c, [a * g[0], a * g[1]], a * ct)
    }
}

fn recompute(s: &Scenario, batch: &Batch, out: &PinnOutputs) -> [f64; 10] {
    let field = Field(&s.field);
    let v = s.speed;
    let n_tau = batch.taus.len();
    let dtau = 1.0 / (n_tau - 1) as f64;
    let mut sums = [0.0; 10];
    let groups = batch.initial_states.len();
    for (g, x0) in batch.initial_states.iter().enumerate() {
        let base = g * n_tau;
        let at = |c: usize, j: usize| out.value[c][base + j];
        let d_at = |c: usize, j: usize| out.dtau[c][base + j];
        let tf_bar = (0..n_tau).map(|j| at(ch::TF, j)).sum::<f64>() / n_tau as f64;
        let rate = |j: usize| field.eval([at(ch::X1, j), at(ch::X2, j)], batch.taus[j] * tf_bar).2;
        let mut hd = vec![0.0; n_tau];
        let mut acc = 0.0;
        for j in (0..n_tau - 1).rev() {
            acc += 0.5 * (rate(j) + rate(j + 1)) * dtau;
            hd[j] = -tf_bar * acc;
        }
        for j in 0..n_tau {
            let x = [at(ch::X1, j), at(ch::X2, j)];
            let (psi, tf, p1, p2) = (at(ch::PSI, j), at(ch::TF, j), at(ch::P1, j), at(ch::P2, j));
            let t = batch.taus[j] * tf;
            let (c, gc, ct) = field.eval(x, t);
            let h = p1 * v * psi.cos() + p2 * v * psi.sin() + c + s.bolza;
            let hd_j = if s.field.is_static() { 0.0 } else { hd[j] };
            // dH/dt with the explicit time dependence of c
            let dh_dtau = v * (d_at(ch::P1, j) * psi.cos() + d_at(ch::P2, j) * psi.sin())
                + v * d_at(ch::PSI, j) * (-p1 * psi.sin() + p2 * psi.cos())
                + gc[0] * d_at(ch::X1, j)
                + gc[1] * d_at(ch::X2, j);
            let dh_dt = dh_dtau / tf + ct;
            let r = [
                hd_j - h,
                ct - dh_dt,
                d_at(ch::X1, j) / tf - v * psi.cos(),
                d_at(ch::X2, j) / tf - v * psi.sin(),
                d_at(ch::P1, j) / tf + gc[0],
                d_at(ch::P2, j) / tf + gc[1],
                -p1 * v * psi.sin() + p2 * v * psi.cos(),
            ];
            for k in 0..7 {
                sums[k] += r[k] * r[k];
            }
        }
        let last = n_tau - 1;
        sums[7] += (at(ch::X1, 0) - x0[0]).powi(2) + (at(ch::X2, 0) - x0[1]).powi(2);
        sums[8] += (at(ch::X1, last) - s.xf[0]).powi(2) + (at(ch::X2, last) - s.xf[1]).powi(2);
        let riemann: f64 = (1..n_tau)
            .map(|j| field.eval([at(ch::X1, j), at(ch::X2, j)], batch.taus[j] * tf_bar).0 + s.bolza)
            .sum();
        sums[9] += tf_bar * riemann * dtau;
    }
    let n = (groups * n_tau) as f64;
    let mut out = [0.0; 10];
    for k in 0..7 {
        out[k] = sums[k] / n;
    }
    for k in 7..10 {
        out[k] = sums[k] / groups as f64;
    }
    out
}

#[test]
fn losses_match_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (trial, mode) in [TemporalMode::Static, TemporalMode::Cosine, TemporalMode::Cosine].into_iter().enumerate() {
        let s = random_scenario(&mut rng, mode);
        let m = model(trial as u64, &s);
        let batch = if trial == 2 {
            Batch {
                initial_states: vec![[-11.0, -6.0], [4.0, 12.0], [0.5, -3.0]],
                taus: uniform_grid(9),
            }
        } else {
            Batch {
                initial_states: vec![s.x0],
                taus: uniform_grid(33),
            }
        };
        let got = trainer::compute_losses(&m, &s, &batch).unwrap();
        let (out, _) = m.forward(&batch.points()).unwrap();
        let want = recompute(&s, &batch, &out);
        for k in 0..10 {
            let err = (got[k] - want[k]).abs() / want[k].abs().max(1e-300);
            assert!(err <= 1e-12 || (got[k] - want[k]).abs() <= 1e-15, "trial {trial} L{}: {} vs {}", k + 1, got[k], want[k]);
        }
    }
}

#[test]
fn static_field_uses_zero_desired_hamiltonian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_scenario(&mut rng, TemporalMode::Static);
    let m = model(2, &s);
    let batch = Batch {
        initial_states: vec![s.x0],
        taus: uniform_grid(17),
    };
    let (out, _) = m.forward(&batch.points()).unwrap();
    let mean_h2 = (0..batch.len())
        .map(|i| {
            let x = [out.value[ch::X1][i], out.value[ch::X2][i]];
            let psi = out.value[ch::PSI][i];
            let h = s.speed * (out.value[ch::P1][i] * psi.cos() + out.value[ch::P2][i] * psi.sin())
                + s.field.value(x, 0.0)
                + s.bolza;
            h * h
        })
        .sum::<f64>()
        / batch.len() as f64;
    let l1 = trainer::compute_losses(&m, &s, &batch).unwrap()[0];
    assert!((l1 - mean_h2).abs() <= 1e-12 * mean_h2);
}

#[test]
fn exact_straight_line_solution_has_vanishing_residuals() {
    for (x0, xf, offset) in [([-9.0, -4.0], [8.0, 6.0], 1.0), ([12.0, 0.0], [-12.0, 3.5], 2.5)] {
        let s = Scenario::new(x0, xf, 10.0, 0.0, ThreatField::constant(offset), Workspace::default()).unwrap();
        let batch = Batch {
            initial_states: vec![x0],
            taus: uniform_grid(64),
        };
        let out = trainer::straight_line_outputs(&s, &batch);
        let l = trainer::losses_of_outputs(&s, &batch, &out).unwrap();
        for (k, v) in l.iter().take(9).enumerate() {
            assert!(*v <= 1e-10, "L{} = {v}", k + 1);
        }
        // the cost term is the analytic straight-line cost
        let cost = offset * s.distance() / s.speed;
        assert!((l[9] - cost).abs() <= 1e-12 * cost);
        let total = {
            let tape = Tape::new();
            let g = trainer::record_losses(&tape, &s, &batch, &out).unwrap();
            let mut w = LossWeights::static_field();
            w.0[9] = 0.0;
            trainer::total_objective(&tape, &g, &w, &[1.0; 10]).value()
        };
        assert!(total <= 1e-10, "weighted total {total}");
    }
}

fn objective_gradient(m: &PinnModel, s: &Scenario, batch: &Batch, w: &LossWeights, mult: &[f64; 10]) -> Vec<f64> {
    let (out, trace) = m.forward(&batch.points()).unwrap();
    let tape = Tape::new();
    let g = trainer::record_losses(&tape, s, batch, &out).unwrap();
    let total = trainer::total_objective(&tape, &g, w, mult);
    m.backward(&trace, &g.output_adjoint(&tape, total).unwrap())
}

#[test]
fn zero_weight_removes_loss_contribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = random_scenario(&mut rng, TemporalMode::Cosine);
    let m = model(4, &s);
    let batch = Batch {
        initial_states: vec![s.x0],
        taus: uniform_grid(12),
    };
    for k in 1..=10 {
        let mut w = LossWeights::time_varying();
        w.0[k - 1] = 0.0;
        let base = objective_gradient(&m, &s, &batch, &w, &[1.0; 10]);
        // a huge multiplier on the zero-weight loss changes nothing
        let mut mult = [1.0; 10];
        mult[k - 1] = 1e9;
        assert_eq!(objective_gradient(&m, &s, &batch, &w, &mult), base, "loss {k}");

        // and the gradient equals the sum of the remaining per-loss gradients
        let (out, trace) = m.forward(&batch.points()).unwrap();
        let tape = Tape::new();
        let g = trainer::record_losses(&tape, &s, &batch, &out).unwrap();
        let mut manual = vec![0.0; m.param_count()];
        for j in 1..=10 {
            let coeff = w.get(j) * if j >= 8 && j <= 9 { 2.0 } else { 1.0 };
            if coeff == 0.0 {
                continue;
            }
            let gj = m.backward(&trace, &g.output_adjoint(&tape, g.terms[j - 1]).unwrap());
            for (a, b) in manual.iter_mut().zip(gj) {
                *a += coeff * b;
            }
        }
        let scale = manual.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in base.iter().zip(&manual) {
            assert!((a - b).abs() <= 1e-12 * scale, "loss {k}: {a} vs {b}");
        }
    }
}

#[test]
fn nonuniform_grid_is_rejected() {
    let s = Scenario::new([-9.0, -4.0], [8.0, 6.0], 10.0, 0.0, ThreatField::constant(1.0), Workspace::default()).unwrap();
    let batch = Batch {
        initial_states: vec![s.x0],
        taus: vec![0.0, 0.3, 1.0],
    };
    let m = model(1, &s);
    assert!(trainer::compute_losses(&m, &s, &batch).is_err());
}
