//! Yosida regularization of the dissipative drift part.
//!
//! Splitting the drift as c = c̃ + Lθ with c̃ := c − Lθ dissipative,
//!
//! ```text
//! ⟨θ − θ̄, c̃(θ, ω) − c̃(θ̄, ω)⟩ ≤ 0,
//! ```
//!
//! the resolvent R_λ(u) = (λ − c̃)^{−1}(u) is single valued for every λ > 0
//! and the Yosida approximation
//!
//! ```text
//! c̃_λ(θ, ω) := c̃(R_λ(λθ), ω)
//! ```
//!
//! is globally Lipschitz, pointwise dominated by c̃, and converges to c̃ as
//! λ → ∞.  The convergence study drives the dynamics with c̃_λ + Lθ for a
//! schedule of λ under shared noise and tracks the sup-trajectory error
//! against the unapproximated run, plus the weighted energy
//! ∫ e^{−2Ct} ‖c̃_λ(θ_λ(t))‖² dt, which is nondecreasing along the schedule.

use thiserror::Error;

use crate::models::{norm, Law, ModelSpec};
use crate::rng::{fill_normals, Domain, Stream};

#[derive(Debug, Error)]
pub enum YosidaError {
    #[error("invalid lambda schedule: {0}")]
    InvalidSchedule(String),
    #[error("Newton stagnated after {iterations} iterations, residual {residual:.3e}")]
    Stagnation { residual: f64, iterations: u32 },
}

#[derive(Clone, Debug)]
pub struct YosidaConfig {
    pub lambda_schedule: Vec<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: u32,
}

impl YosidaConfig {
    pub fn new(lambda_schedule: Vec<f64>) -> Result<Self, YosidaError> {
        if lambda_schedule.is_empty() {
            return Err(YosidaError::InvalidSchedule("schedule is empty".into()));
        }
        if lambda_schedule[0] <= 0.0 {
            return Err(YosidaError::InvalidSchedule("lambdas must be positive".into()));
        }
        if lambda_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(YosidaError::InvalidSchedule("schedule must be strictly increasing".into()));
        }
        Ok(YosidaConfig { lambda_schedule, newton_tol: 1e-12, newton_max_iter: 100 })
    }
}

/// c̃(θ, ω) = c(θ, ω) − L θ.
pub fn shifted_drift(model: &ModelSpec, theta: &[f64], omega: &[f64], out: &mut [f64]) {
    model.drift_into(theta, omega, out);
    for (o, t) in out.iter_mut().zip(theta) {
        *o -= model.one_sided_l * t;
    }
}

/// Solves A y = b in place for small dense A (row major), partial pivoting.
fn solve_linear(a: &mut [f64], b: &mut [f64], m: usize) -> bool {
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| {
            a[i * m + col].abs().total_cmp(&a[j * m + col].abs())
        });
        let pivot = pivot.unwrap();
        if a[pivot * m + col].abs() < 1e-300 {
            return false;
        }
        if pivot != col {
            for k in 0..m {
                a.swap(col * m + k, pivot * m + k);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * m + col];
        for row in col + 1..m {
            let factor = a[row * m + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..m {
                a[row * m + k] -= factor * a[col * m + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in col + 1..m {
            acc -= a[col * m + k] * b[k];
        }
        b[col] = acc / a[col * m + col];
    }
    true
}

/// R_λ(target) = y solving λ y − c̃(y, ω) = target, by damped Newton from
/// y₀ = target/λ.  Strict monotonicity of y ↦ λy − c̃(y) makes the solution
/// unique and the damped iteration globally convergent.
pub fn resolvent(
    model: &ModelSpec,
    lambda: f64,
    target: &[f64],
    omega: &[f64],
    tol: f64,
    max_iter: u32,
) -> Result<(Vec<f64>, u32), YosidaError> {
    assert!(lambda > 0.0 && tol > 0.0);
    let m = model.state_dim;
    // Scale-aware tolerance: the residual λy − c̃(y) − target cannot drop
    // below the rounding floor of its largest term.
    let tol = tol * (1.0 + norm(target));
    let mut y: Vec<f64> = target.iter().map(|t| t / lambda).collect();
    let mut f_val = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut trial_f = vec![0.0; m];
    let mut jac = vec![0.0; m * m];
    let mut delta = vec![0.0; m];

    let residual = |y: &[f64], out: &mut [f64]| {
        shifted_drift(model, y, omega, out);
        for i in 0..m {
            out[i] = lambda * y[i] - out[i] - target[i];
        }
    };

    residual(&y, &mut f_val);
    let mut rn = norm(&f_val);
    for iter in 0..max_iter {
        if rn <= tol {
            return Ok((y, iter));
        }
        // Newton matrix (λ + L) I − ∂c.
        model.jacobian_into(&y, omega, &mut jac);
        for v in jac.iter_mut() {
            *v = -*v;
        }
        for i in 0..m {
            jac[i * m + i] += lambda + model.one_sided_l;
        }
        delta.copy_from_slice(&f_val);
        if !solve_linear(&mut jac, &mut delta, m) {
            return Err(YosidaError::Stagnation { residual: rn, iterations: iter });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..m {
                trial[i] = y[i] - t * delta[i];
            }
            residual(&trial, &mut trial_f);
            let trial_rn = norm(&trial_f);
            if trial_rn < rn {
                y.copy_from_slice(&trial);
                f_val.copy_from_slice(&trial_f);
                rn = trial_rn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(YosidaError::Stagnation { residual: rn, iterations: iter });
        }
    }
    if rn <= tol {
        Ok((y, max_iter))
    } else {
        Err(YosidaError::Stagnation { residual: rn, iterations: max_iter })
    }
}

/// c̃_λ(θ, ω) = c̃(R_λ(λθ), ω).  Also returns the Newton iteration count.
pub fn yosida_drift(
    model: &ModelSpec,
    lambda: f64,
    theta: &[f64],
    omega: &[f64],
    tol: f64,
    max_iter: u32,
) -> Result<(Vec<f64>, u32), YosidaError> {
    let scaled: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
    let (y, iters) = resolvent(model, lambda, &scaled, omega, tol, max_iter)?;
    let mut out = vec![0.0; model.state_dim];
    shifted_drift(model, &y, omega, &mut out);
    Ok((out, iters))
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub max_quotient: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Samples pairs (θ, θ̄) with shared disorder and checks
/// ⟨θ − θ̄, c̃(θ) − c̃(θ̄)⟩ ≤ tol ‖θ − θ̄‖².
pub fn dissipativity_probe(
    model: &ModelSpec,
    disorder: &Law,
    samples: usize,
    radius: f64,
    seed: u64,
) -> ProbeReport {
    let m = model.state_dim;
    let mut omega = vec![0.0; model.disorder_dim];
    let mut ca = vec![0.0; m];
    let mut cb = vec![0.0; m];
    let mut max_quotient = f64::NEG_INFINITY;
    for s in 0..samples {
        let mut stream = Stream::new(seed, Domain::YosidaProbe, s as u32, 3, 0);
        disorder.sample_into(&mut stream, &mut omega);
        let a: Vec<f64> = (0..m).map(|_| stream.next_range(-radius, radius)).collect();
        let b: Vec<f64> = (0..m).map(|_| stream.next_range(-radius, radius)).collect();
        let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        if d2 == 0.0 {
            continue;
        }
        shifted_drift(model, &a, &omega, &mut ca);
        shifted_drift(model, &b, &omega, &mut cb);
        let inner: f64 = a
            .iter()
            .zip(&b)
            .zip(ca.iter().zip(&cb))
            .map(|((x, y), (u, v))| (x - y) * (u - v))
            .sum();
        max_quotient = max_quotient.max(inner / d2);
    }
    ProbeReport { max_quotient, samples, pass: max_quotient <= 1e-9 }
}

/// Checks the resolvent contraction ‖R_λ(u) − R_λ(v)‖ ≤ ‖u − v‖ / λ on
/// sampled pairs; reports the worst λ‖ΔR‖/‖Δu‖.
pub fn resolvent_contraction_probe(
    model: &ModelSpec,
    disorder: &Law,
    lambda: f64,
    samples: usize,
    radius: f64,
    seed: u64,
    tol: f64,
    max_iter: u32,
) -> Result<ProbeReport, YosidaError> {
    let m = model.state_dim;
    let mut omega = vec![0.0; model.disorder_dim];
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let mut stream = Stream::new(seed, Domain::YosidaProbe, s as u32, 4, 0);
        disorder.sample_into(&mut stream, &mut omega);
        let u: Vec<f64> = (0..m).map(|_| stream.next_range(-radius, radius)).collect();
        let v: Vec<f64> = (0..m).map(|_| stream.next_range(-radius, radius)).collect();
        let du: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if du == 0.0 {
            continue;
        }
        let (ru, _) = resolvent(model, lambda, &u, &omega, tol, max_iter)?;
        let (rv, _) = resolvent(model, lambda, &v, &omega, tol, max_iter)?;
        let dr: f64 = ru.iter().zip(&rv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(lambda * dr / du);
    }
    Ok(ProbeReport { max_quotient: worst, samples, pass: worst <= 1.0 + 1e-9 })
}

/// Checks the pointwise domination ‖c̃_λ(θ)‖ ≤ ‖c̃(θ)‖ + tol and, when two
/// consecutive λ are given, the pointwise monotonicity in λ, on sampled
/// (θ, ω).
pub fn domination_probe(
    model: &ModelSpec,
    disorder: &Law,
    lambdas: &[f64],
    samples: usize,
    radius: f64,
    seed: u64,
    tol: f64,
    max_iter: u32,
) -> Result<ProbeReport, YosidaError> {
    let m = model.state_dim;
    let mut omega = vec![0.0; model.disorder_dim];
    let mut shifted = vec![0.0; m];
    let mut worst = f64::NEG_INFINITY;
    for s in 0..samples {
        let mut stream = Stream::new(seed, Domain::YosidaProbe, s as u32, 5, 0);
        disorder.sample_into(&mut stream, &mut omega);
        let theta: Vec<f64> = (0..m).map(|_| stream.next_range(-radius, radius)).collect();
        shifted_drift(model, &theta, &omega, &mut shifted);
        let full = norm(&shifted);
        let mut previous = 0.0;
        for (li, &lambda) in lambdas.iter().enumerate() {
            let (approx, _) = yosida_drift(model, lambda, &theta, &omega, tol, max_iter)?;
            let n = norm(&approx);
            // Violation margin of ‖c̃_λ‖ ≤ ‖c̃‖ and of monotonicity in λ.
            worst = worst.max(n - full);
            if li > 0 {
                worst = worst.max(previous - n);
            }
            previous = n;
        }
    }
    Ok(ProbeReport { max_quotient: worst, samples, pass: worst <= 1e-9 })
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub dt: f64,
    pub t_final: f64,
    pub samples: usize,
    pub seed: u64,
    pub theta0: Law,
    pub disorder: Law,
    /// S(Ψ) of the ambient kernel, entering the energy weight through
    /// C = 2L + 3 ‖Γ‖_Lip S(Ψ); pass 0 for uncoupled studies.
    pub s_psi: f64,
}

impl StudyConfig {
    pub fn step_count(&self) -> u64 {
        assert!(self.dt > 0.0 && self.t_final >= self.dt);
        (self.t_final / self.dt - 1e-9).ceil().max(1.0) as u64
    }
}

#[derive(Clone, Debug)]
pub struct StudyReport {
    pub lambdas: Vec<f64>,
    /// Mean over samples of sup_t ‖θ_λ(t) − θ(t)‖.
    pub sup_errors: Vec<f64>,
    /// Mean over samples of ∫₀^T e^{−2Ct} ‖c̃_λ(θ_λ(t))‖² dt.
    pub h_norms: Vec<f64>,
    pub h_stderrs: Vec<f64>,
    pub newton_iters_mean: Vec<f64>,
    pub c_constant: f64,
    pub sup_decreasing: bool,
    pub h_nondecreasing: bool,
}

/// Runs the unapproximated dynamics and one λ-approximated copy per entry
/// of the schedule, all under the same Brownian increments, and reports the
/// trajectory errors and weighted energies.  Uncoupled dynamics: the study
/// isolates the drift approximation.
pub fn yosida_convergence_study(
    model: &ModelSpec,
    study: &StudyConfig,
    cfg: &YosidaConfig,
) -> Result<StudyReport, YosidaError> {
    let m = model.state_dim;
    let nl = cfg.lambda_schedule.len();
    let steps = study.step_count();
    let dt = study.t_final / steps as f64;
    let sqrt_dt = dt.sqrt();
    let c_constant = 2.0 * model.one_sided_l + 3.0 * model.gamma_lip * study.s_psi;

    let mut sup_acc = vec![0.0; nl];
    let mut h_acc = vec![0.0; nl];
    let mut h_sq_acc = vec![0.0; nl];
    let mut iters_acc = vec![0u64; nl];

    let mut omega = vec![0.0; model.disorder_dim];
    let mut noise = vec![0.0; m];
    let mut kick = vec![0.0; m];
    let mut drift = vec![0.0; m];

    for s in 0..study.samples {
        let mut stream = Stream::new(study.seed, Domain::YosidaProbe, s as u32, 1, 0);
        let mut base = vec![0.0; m];
        study.theta0.sample_into(&mut stream, &mut base);
        let mut stream = Stream::new(study.seed, Domain::YosidaProbe, s as u32, 2, 0);
        study.disorder.sample_into(&mut stream, &mut omega);

        let mut approx: Vec<Vec<f64>> = vec![base.clone(); nl];
        let mut sup = vec![0.0f64; nl];
        let mut h = vec![0.0f64; nl];

        for k in 0..steps {
            fill_normals(study.seed, Domain::YosidaProbe, s as u32, 0, k as u32, &mut noise);
            model.sigma_apply(&noise, &mut kick);
            let weight = (-2.0 * c_constant * (k as f64 * dt)).exp();

            for (li, &lambda) in cfg.lambda_schedule.iter().enumerate() {
                let state = &mut approx[li];
                let (ctilde, iters) = yosida_drift(
                    model,
                    lambda,
                    state,
                    &omega,
                    cfg.newton_tol,
                    cfg.newton_max_iter,
                )?;
                iters_acc[li] += iters as u64;
                h[li] += weight * ctilde.iter().map(|v| v * v).sum::<f64>() * dt;
                for c in 0..m {
                    state[c] += (ctilde[c] + model.one_sided_l * state[c]) * dt + sqrt_dt * kick[c];
                }
            }

            model.drift_into(&base, &omega, &mut drift);
            for c in 0..m {
                base[c] += drift[c] * dt + sqrt_dt * kick[c];
            }
            for li in 0..nl {
                let d: f64 = approx[li]
                    .iter()
                    .zip(&base)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sup[li] = sup[li].max(d);
            }
        }
        for li in 0..nl {
            sup_acc[li] += sup[li];
            h_acc[li] += h[li];
            h_sq_acc[li] += h[li] * h[li];
        }
    }

    let n = study.samples as f64;
    let sup_errors: Vec<f64> = sup_acc.iter().map(|v| v / n).collect();
    let h_norms: Vec<f64> = h_acc.iter().map(|v| v / n).collect();
    let h_stderrs: Vec<f64> = h_sq_acc
        .iter()
        .zip(&h_norms)
        .map(|(&sq, &mean)| {
            if study.samples < 2 {
                0.0
            } else {
                let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
                (var / n).sqrt()
            }
        })
        .collect();
    let newton_iters_mean: Vec<f64> =
        iters_acc.iter().map(|&v| v as f64 / (n * steps as f64)).collect();

    let sup_decreasing = sup_errors.windows(2).all(|w| w[1] < w[0]);
    let h_nondecreasing = h_norms
        .windows(2)
        .zip(h_stderrs.windows(2))
        .all(|(hw, sw)| hw[1] >= hw[0] - 3.0 * (sw[0] * sw[0] + sw[1] * sw[1]).sqrt());

    Ok(StudyReport {
        lambdas: cfg.lambda_schedule.clone(),
        sup_errors,
        h_norms,
        h_stderrs,
        newton_iters_mean,
        c_constant,
        sup_decreasing,
        h_nondecreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    /// c(θ) = −θ³ with L = 0, so c̃ = c.
    fn cubic_model() -> ModelSpec {
        ModelSpec::custom(
            "cubic",
            1,
            1,
            Arc::new(|theta, _o, out| out[0] = -theta[0].powi(3)),
            Arc::new(|_t, _o, _tb, _ob, out| out[0] = 0.0),
            vec![0.0],
            0.0,
            crate::models::PolyBound { c_norm: 1.0, kappa: 3.0, iota: 3.0 },
            0.0,
            0.0,
        )
    }

    #[test]
    fn shifted_drift_formula() {
        // linear_scalar(0, σ): c = ω with L = 1/2, so c̃ = ω − θ/2.
        let model = ModelSpec::linear_scalar(0.0, 1.0);
        let mut out = [0.0];
        shifted_drift(&model, &[2.0], &[0.3], &mut out);
        assert_abs_diff_eq!(out[0], 0.3 - 1.0, epsilon = 1e-15);
        shifted_drift(&model, &[0.0], &[0.7], &mut out);
        assert_eq!(out[0], 0.7);
    }

    #[test]
    fn resolvent_linear_closed_form() {
        // linear_scalar(-0.5): c̃(y) = −y + ω. With ω = 0, λ = 1, target 2:
        // y + y = 2.
        let model = ModelSpec::linear_scalar(-0.5, 0.0);
        let (y, iters) = resolvent(&model, 1.0, &[2.0], &[0.0], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-12);
        assert!(iters <= 2);
        let (zero, _) = resolvent(&model, 3.0, &[0.0], &[0.0], 1e-12, 100).unwrap();
        assert_eq!(zero[0], 0.0);
        // General λ: y = target/(λ+1).
        let (y, _) = resolvent(&model, 9.0, &[5.0], &[0.0], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(y[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn resolvent_cubic_oracle() {
        // y + y³ = 2 has the exact root 1.
        let model = cubic_model();
        let (y, _) = resolvent(&model, 1.0, &[2.0], &[0.0], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn yosida_drift_linear_and_limit() {
        let model = ModelSpec::linear_scalar(-0.5, 0.0);
        // c̃_λ(θ) = −λθ/(λ+1): λ = 1, θ = 2 gives −1.
        let (v, _) = yosida_drift(&model, 1.0, &[2.0], &[0.0], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-12);
        let (z, _) = yosida_drift(&model, 5.0, &[0.0], &[0.0], 1e-12, 100).unwrap();
        assert_eq!(z[0], 0.0);
        // Large λ on the cubic: c̃_λ(0.5) within 1e-3 of −0.125.
        let cubic = cubic_model();
        let (v, _) = yosida_drift(&cubic, 1e6, &[0.5], &[0.0], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(v[0], -0.125, epsilon = 1e-3);
    }

    #[test]
    fn newton_reports_stagnation() {
        let model = cubic_model();
        let err = resolvent(&model, 1.0, &[2.0], &[0.0], 1e-15, 1).unwrap_err();
        assert!(matches!(err, YosidaError::Stagnation { .. }));
    }

    #[test]
    fn schedule_validation() {
        assert!(YosidaConfig::new(vec![]).is_err());
        assert!(YosidaConfig::new(vec![-1.0, 2.0]).is_err());
        assert!(YosidaConfig::new(vec![1.0, 1.0]).is_err());
        assert!(YosidaConfig::new(vec![10.0, 100.0, 1000.0]).is_ok());
    }

    #[test]
    fn fhn_dissipative_after_shift() {
        let model = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let disorder = Law::point(&[0.7, 0.8]);
        let report = dissipativity_probe(&model, &disorder, 4000, 8.0, 17);
        assert!(report.pass, "quotient {}", report.max_quotient);
    }

    #[test]
    fn resolvent_contracts() {
        let model = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let disorder = Law::point(&[0.7, 0.8]);
        for lambda in [3.0, 30.0] {
            let report = resolvent_contraction_probe(
                &model, &disorder, lambda, 500, 6.0, 23, 1e-12, 100,
            )
            .unwrap();
            assert!(report.pass, "lambda {lambda}: {}", report.max_quotient);
        }
    }

    #[test]
    fn yosida_dominates_and_monotone() {
        let model = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let disorder = Law::uniform(&[0.6, 0.7], &[0.8, 0.9]);
        let report =
            domination_probe(&model, &disorder, &[5.0, 50.0], 2000, 6.0, 31, 1e-12, 100).unwrap();
        assert!(report.pass, "margin {}", report.max_quotient);
    }

    #[test]
    fn linear_study_matches_closed_form() {
        // c̃ = −θ, exact flows e^{−t} vs e^{−λt/(λ+1)}; with T = 1 the sup
        // error ratio between λ = 100 and λ = 10 is (e^{1/101} − 1) e^{−1/2}
        // over (e^{1/11} − 1) e^{−1/2}, close to 11/101.
        let model = ModelSpec::linear_scalar(-0.5, 0.0);
        let study = StudyConfig {
            dt: 1e-3,
            t_final: 1.0,
            samples: 1,
            seed: 5,
            theta0: Law::point(&[1.0]),
            disorder: Law::point(&[0.0]),
            s_psi: 0.0,
        };
        let cfg = YosidaConfig::new(vec![10.0, 100.0]).unwrap();
        let report = yosida_convergence_study(&model, &study, &cfg).unwrap();
        assert!(report.sup_decreasing);
        assert!(report.h_nondecreasing);
        let ratio = report.sup_errors[1] / report.sup_errors[0];
        let closed = (1f64 / 101.0).exp_m1() / (1f64 / 11.0).exp_m1();
        assert_abs_diff_eq!(ratio, closed, epsilon = 0.02 * closed);
        assert!((ratio * 101.0 / 11.0 - 1.0).abs() < 0.08);
        assert!(report.newton_iters_mean.iter().all(|&v| v <= 3.0));
    }

    #[test]
    fn trivial_shifted_drift_gives_zero_errors() {
        // c = Lθ makes c̃ ≡ 0: approximation is exact for every λ.
        let model = ModelSpec::custom(
            "pure_shift",
            1,
            1,
            Arc::new(|theta, _o, out| out[0] = 0.5 * theta[0]),
            Arc::new(|_t, _o, _tb, _ob, out| out[0] = 0.0),
            vec![1.0],
            0.5,
            crate::models::PolyBound { c_norm: 1.0, kappa: 2.0, iota: 1.0 },
            0.0,
            0.0,
        );
        let study = StudyConfig {
            dt: 1.0 / 64.0,
            t_final: 0.5,
            samples: 4,
            seed: 8,
            theta0: Law::uniform(&[-1.0], &[1.0]),
            disorder: Law::point(&[0.0]),
            s_psi: 0.0,
        };
        let cfg = YosidaConfig::new(vec![1.0, 10.0]).unwrap();
        let report = yosida_convergence_study(&model, &study, &cfg).unwrap();
        assert_eq!(report.sup_errors, vec![0.0, 0.0]);
        assert_eq!(report.h_norms, vec![0.0, 0.0]);
    }

    #[test]
    fn fhn_study_errors_decrease() {
        let model = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let study = StudyConfig {
            dt: 1e-3,
            t_final: 1.0,
            samples: 4,
            seed: 77,
            theta0: Law::uniform(&[-1.0, -0.5], &[1.0, 0.5]),
            disorder: Law::point(&[0.7, 0.8]),
            s_psi: 0.0,
        };
        let cfg = YosidaConfig::new(vec![10.0, 100.0, 1000.0]).unwrap();
        let report = yosida_convergence_study(&model, &study, &cfg).unwrap();
        assert!(report.sup_decreasing, "sup errors {:?}", report.sup_errors);
        assert!(report.h_nondecreasing, "h norms {:?}", report.h_norms);
        assert!(report.sup_errors[2] < 0.5 * report.sup_errors[0]);
    }
}
