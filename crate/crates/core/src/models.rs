//! Model definitions: single-particle drift c(θ, ω), pairwise coupling
//! Γ(θ, ω, θ̄, ω̄), diffusion matrix σ, and the regularity constants the rest
//! of the crate relies on:
//!
//! ```text
//! one-sided Lipschitz   <θ − θ̄, c(θ,ω) − c(θ̄,ω̄)>  <=  L (‖θ − θ̄‖² + ‖ω − ω̄‖²)
//! polynomial growth     ‖c(θ,ω)‖  <=  c_norm (1 + ‖θ‖^κ + ‖ω‖^ι),  κ >= 2, ι >= 1
//! bounded coupling      ‖Γ‖ <= gamma_sup,   Lipschitz with constant gamma_lip
//! ```
//!
//! Built-ins: Kuramoto (θ' = ω + K sin-coupling, m = 1) and FitzHugh-Nagumo
//! (m = 2, disorder ω = (a, b), clip-linear coupling).  Stored constants are
//! hand-derived; `probe_regularity` cross-checks them by sampling.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::rng::{Domain, Stream};

/// Model state θ in R^m.
pub type StateVector = Vec<f64>;
/// Disorder variable ω in R^n.
pub type DisorderVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
}

type VecFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type CoupFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Growth envelope ‖c(θ,ω)‖ <= c_norm (1 + ‖θ‖^κ + ‖ω‖^ι).
#[derive(Clone, Copy, Debug)]
pub struct PolyBound {
    pub c_norm: f64,
    pub kappa: f64,
    pub iota: f64,
}

/// Decomposition Γ(θ,ω,θ̄,ω̄) = Σ_r A_r(θ,ω) ⊙ B_r(θ̄,ω̄) (componentwise
/// products).  This is what lets the interaction field be evaluated through
/// convolutions of per-site features instead of all-pairs sums.
#[derive(Clone)]
pub struct SeparableCoupling {
    pub n_terms: usize,
    a_coeffs: VecFn,
    b_features: VecFn,
}

impl SeparableCoupling {
    pub fn new(n_terms: usize, a_coeffs: VecFn, b_features: VecFn) -> Self {
        SeparableCoupling { n_terms, a_coeffs, b_features }
    }

    /// Writes the `n_terms * m` target-side coefficients A_r(θ, ω).
    #[inline]
    pub fn eval_a(&self, theta: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.a_coeffs)(theta, omega, out);
    }

    /// Writes the `n_terms * m` source-side features B_r(θ̄, ω̄).
    #[inline]
    pub fn eval_b(&self, theta: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.b_features)(theta, omega, out);
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub state_dim: usize,
    pub disorder_dim: usize,
    drift: VecFn,
    coupling: CoupFn,
    /// Analytic Jacobian of the drift in θ (row-major m x m); finite
    /// differences are used when absent.
    drift_jacobian: Option<VecFn>,
    /// Diffusion matrix, row-major m x m.
    pub sigma: Vec<f64>,
    pub one_sided_l: f64,
    pub poly_bound: PolyBound,
    pub gamma_sup: f64,
    pub gamma_lip: f64,
    /// θ lives on the circle; states are stored unwrapped in R and only the
    /// coupling/feature evaluations are periodic.
    pub circle_state: bool,
    /// Models with superlinear drift default to the tamed scheme.
    pub prefers_taming: bool,
    pub separable: Option<SeparableCoupling>,
    /// Component box the disorder is drawn from, when known.  Regularity
    /// probes sample ω here instead of the generic radius box.
    pub disorder_box: Option<(Vec<f64>, Vec<f64>)>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("disorder_dim", &self.disorder_dim)
            .field("one_sided_l", &self.one_sided_l)
            .field("gamma_sup", &self.gamma_sup)
            .field("gamma_lip", &self.gamma_lip)
            .finish()
    }
}

impl ModelSpec {
    /// Kuramoto oscillators: c(θ, ω) = ω, Γ = K sin(θ̄ − θ), scalar noise σ.
    ///
    /// L = 1/2 from <δθ, δω> <= (δθ² + δω²)/2; ‖Γ‖ <= K with Lipschitz
    /// constant K; growth holds with c_norm = 1, κ = 2, ι = 1.
    pub fn kuramoto(k_coupling: f64, sigma: f64) -> Self {
        let k = k_coupling;
        ModelSpec {
            name: "kuramoto".into(),
            state_dim: 1,
            disorder_dim: 1,
            drift: Arc::new(|_theta, omega, out| out[0] = omega[0]),
            coupling: Arc::new(move |theta, _om, theta_bar, _omb, out| {
                out[0] = k * (theta_bar[0] - theta[0]).sin();
            }),
            drift_jacobian: Some(Arc::new(|_t, _o, out| out[0] = 0.0)),
            sigma: vec![sigma],
            one_sided_l: 0.5,
            poly_bound: PolyBound { c_norm: 1.0, kappa: 2.0, iota: 1.0 },
            gamma_sup: k.abs(),
            gamma_lip: k.abs(),
            circle_state: true,
            prefers_taming: false,
            // sin(θ̄ − θ) = sin θ̄ cos θ − cos θ̄ sin θ
            separable: Some(SeparableCoupling::new(
                2,
                Arc::new(move |theta, _om, out| {
                    out[0] = k * theta[0].cos();
                    out[1] = -k * theta[0].sin();
                }),
                Arc::new(|theta, _om, out| {
                    out[0] = theta[0].sin();
                    out[1] = theta[0].cos();
                }),
            )),
            disorder_box: None,
        }
    }

    /// FitzHugh-Nagumo: θ = (V, w), ω = (a, b),
    /// c = (V − V³/3 − w + I, a(bV − w)), Γ = clip(θ̄ − θ, ±clip_bound)
    /// componentwise, diagonal noise.
    ///
    /// The one-sided constant is valid for ‖θ‖, ‖θ̄‖ <= probe_radius and
    /// disorder in [0, a_max] x [0, b_max]:
    /// L = 1 + (1 + a_max b_max)/2 + probe_radius (a_max + b_max + 1)/2,
    /// obtained by dropping the monotone −(V³ − V̄³)δV/3 term and applying
    /// Young's inequality to the cross terms.  Growth: c_norm = 3 + |I|,
    /// κ = ι = 3.
    pub fn fitzhugh_nagumo(
        i_ext: f64,
        sigma_v: f64,
        sigma_w: f64,
        clip_bound: f64,
        a_range: (f64, f64),
        b_range: (f64, f64),
        probe_radius: f64,
    ) -> Self {
        assert!(clip_bound > 0.0, "clip bound must be positive");
        let (a_lo, a_hi) = a_range;
        let (b_lo, b_hi) = b_range;
        assert!(a_lo >= 0.0 && a_hi >= a_lo && b_lo >= 0.0 && b_hi >= b_lo);
        let a_max = a_hi;
        let b_max = b_hi;
        let l = 1.0 + (1.0 + a_max * b_max) / 2.0 + probe_radius * (a_max + b_max + 1.0) / 2.0;
        let cb = clip_bound;
        ModelSpec {
            name: "fitzhugh_nagumo".into(),
            state_dim: 2,
            disorder_dim: 2,
            drift: Arc::new(move |theta, omega, out| {
                let (v, w) = (theta[0], theta[1]);
                let (a, b) = (omega[0], omega[1]);
                out[0] = v - v * v * v / 3.0 - w + i_ext;
                out[1] = a * (b * v - w);
            }),
            coupling: Arc::new(move |theta, _om, theta_bar, _omb, out| {
                out[0] = (theta_bar[0] - theta[0]).clamp(-cb, cb);
                out[1] = (theta_bar[1] - theta[1]).clamp(-cb, cb);
            }),
            drift_jacobian: Some(Arc::new(|theta, omega, out| {
                out[0] = 1.0 - theta[0] * theta[0];
                out[1] = -1.0;
                out[2] = omega[0] * omega[1];
                out[3] = -omega[0];
            })),
            sigma: vec![sigma_v, 0.0, 0.0, sigma_w],
            one_sided_l: l,
            poly_bound: PolyBound { c_norm: 3.0 + i_ext.abs(), kappa: 3.0, iota: 3.0 },
            gamma_sup: cb * 2.0f64.sqrt(),
            gamma_lip: 1.0,
            circle_state: false,
            prefers_taming: true,
            // clip is only linear while inactive, so no separable form is
            // declared and field evaluation falls back to the direct engine.
            separable: None,
            disorder_box: Some((vec![a_lo, b_lo], vec![a_hi, b_hi])),
        }
    }

    /// FitzHugh-Nagumo with common defaults: I = 0.5, clip bound 5,
    /// disorder box [0.6, 0.8] x [0.7, 0.9], radius-10 one-sided constant.
    pub fn fitzhugh_nagumo_default(sigma_v: f64, sigma_w: f64) -> Self {
        Self::fitzhugh_nagumo(0.5, sigma_v, sigma_w, 5.0, (0.6, 0.8), (0.7, 0.9), 10.0)
    }

    /// Fully custom model, used by tests and callers with bespoke dynamics.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: &str,
        state_dim: usize,
        disorder_dim: usize,
        drift: VecFn,
        coupling: CoupFn,
        sigma: Vec<f64>,
        one_sided_l: f64,
        poly_bound: PolyBound,
        gamma_sup: f64,
        gamma_lip: f64,
    ) -> Self {
        assert_eq!(sigma.len(), state_dim * state_dim, "sigma must be m x m");
        ModelSpec {
            name: name.into(),
            state_dim,
            disorder_dim,
            drift,
            coupling,
            drift_jacobian: None,
            sigma,
            one_sided_l,
            poly_bound,
            gamma_sup,
            gamma_lip,
            circle_state: false,
            prefers_taming: false,
            separable: None,
            disorder_box: None,
        }
    }

    /// Scalar linear test model: c(θ, ω) = slope·θ + ω, Γ ≡ 0.
    pub fn linear_scalar(slope: f64, sigma: f64) -> Self {
        let mut spec = Self::custom(
            "linear",
            1,
            1,
            Arc::new(move |theta, omega, out| out[0] = slope * theta[0] + omega[0]),
            Arc::new(|_t, _o, _tb, _ob, out| out[0] = 0.0),
            vec![sigma],
            slope.max(0.0) + 0.5,
            PolyBound { c_norm: slope.abs().max(1.0), kappa: 2.0, iota: 1.0 },
            0.0,
            0.0,
        );
        spec.drift_jacobian = Some(Arc::new(move |_t, _o, out| out[0] = slope));
        spec
    }

    #[inline]
    pub fn drift_into(&self, theta: &[f64], omega: &[f64], out: &mut [f64]) {
        (self.drift)(theta, omega, out);
    }

    #[inline]
    pub fn coupling_into(&self, theta: &[f64], omega: &[f64], theta_bar: &[f64], omega_bar: &[f64], out: &mut [f64]) {
        (self.coupling)(theta, omega, theta_bar, omega_bar, out);
    }

    /// Drift Jacobian in θ (row-major m x m), analytic when available and a
    /// central finite difference otherwise.
    pub fn jacobian_into(&self, theta: &[f64], omega: &[f64], out: &mut [f64]) {
        let m = self.state_dim;
        if let Some(jac) = &self.drift_jacobian {
            jac(theta, omega, out);
            return;
        }
        let mut tp = theta.to_vec();
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        for j in 0..m {
            let h = 1e-6 * (1.0 + theta[j].abs());
            tp[j] = theta[j] + h;
            self.drift_into(&tp, omega, &mut fp);
            tp[j] = theta[j] - h;
            self.drift_into(&tp, omega, &mut fm);
            tp[j] = theta[j];
            for i in 0..m {
                out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }

    /// out = σ v.
    #[inline]
    pub fn sigma_apply(&self, v: &[f64], out: &mut [f64]) {
        let m = self.state_dim;
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.sigma[i * m + j] * v[j];
            }
            out[i] = acc;
        }
    }

    pub fn sigma_is_zero(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// Replaces the drift, keeping everything else.  Used by the Yosida layer
    /// to run the approximated dynamics through the ordinary simulator.
    pub fn with_drift(&self, drift: VecFn) -> Self {
        let mut spec = self.clone();
        spec.drift = drift;
        spec
    }
}

fn check_dims(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<(), ModelError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(what));
    }
    Ok(())
}

/// Checked drift evaluation c(θ, ω).
pub fn eval_drift(spec: &ModelSpec, theta: &[f64], omega: &[f64]) -> Result<StateVector, ModelError> {
    check_dims("theta", spec.state_dim, theta.len())?;
    check_dims("omega", spec.disorder_dim, omega.len())?;
    check_finite("theta", theta)?;
    check_finite("omega", omega)?;
    let mut out = vec![0.0; spec.state_dim];
    spec.drift_into(theta, omega, &mut out);
    check_finite("drift output", &out)?;
    Ok(out)
}

/// Checked coupling evaluation Γ(θ, ω, θ̄, ω̄); the result norm is asserted
/// against the stored bound.
pub fn eval_coupling(
    spec: &ModelSpec,
    theta: &[f64],
    omega: &[f64],
    theta_bar: &[f64],
    omega_bar: &[f64],
) -> Result<StateVector, ModelError> {
    check_dims("theta", spec.state_dim, theta.len())?;
    check_dims("theta_bar", spec.state_dim, theta_bar.len())?;
    check_dims("omega", spec.disorder_dim, omega.len())?;
    check_dims("omega_bar", spec.disorder_dim, omega_bar.len())?;
    check_finite("theta", theta)?;
    check_finite("theta_bar", theta_bar)?;
    let mut out = vec![0.0; spec.state_dim];
    spec.coupling_into(theta, omega, theta_bar, omega_bar, &mut out);
    check_finite("coupling output", &out)?;
    debug_assert!(
        norm(&out) <= spec.gamma_sup * (1.0 + 1e-12) + 1e-12,
        "coupling bound violated"
    );
    Ok(out)
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Sampling laws for initial conditions ζ and disorder μ.

/// Per-coordinate scalar laws; a product over coordinates describes vector
/// initial conditions and disorder.
#[derive(Clone, Debug, PartialEq)]
pub enum CoordLaw {
    Point(f64),
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// Product law over coordinates.  All built-in kinds have moments of every
/// order, so the κ/ι moment requirements hold automatically.
#[derive(Clone, Debug, PartialEq)]
pub struct Law {
    pub coords: Vec<CoordLaw>,
}

impl Law {
    pub fn point(values: &[f64]) -> Self {
        Law { coords: values.iter().map(|&v| CoordLaw::Point(v)).collect() }
    }

    pub fn gaussian(means: &[f64], stds: &[f64]) -> Self {
        assert_eq!(means.len(), stds.len());
        Law {
            coords: means
                .iter()
                .zip(stds)
                .map(|(&m, &s)| CoordLaw::Gaussian { mean: m, std: s })
                .collect(),
        }
    }

    pub fn uniform(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        Law {
            coords: lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| CoordLaw::Uniform { lo: l, hi: h })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.coords.iter().all(|c| matches!(c, CoordLaw::Point(_)))
    }

    pub fn is_point_mass(&self) -> bool {
        self.coords.iter().all(|c| matches!(c, CoordLaw::Point(_)))
    }

    pub fn sample_into(&self, stream: &mut Stream, out: &mut [f64]) {
        assert_eq!(out.len(), self.coords.len());
        for (slot, law) in out.iter_mut().zip(&self.coords) {
            *slot = match law {
                CoordLaw::Point(v) => *v,
                CoordLaw::Gaussian { mean, std } => mean + std * stream.next_normal(),
                CoordLaw::Uniform { lo, hi } => stream.next_range(*lo, *hi),
            };
        }
    }

    /// Monte-Carlo estimate of E‖X‖^p, a finiteness witness for the moment
    /// assumptions.
    pub fn empirical_moment(&self, p: f64, samples: usize, seed: u64) -> f64 {
        let mut acc = 0.0;
        let mut x = vec![0.0; self.dim()];
        for i in 0..samples {
            let mut s = Stream::new(seed, Domain::Scratch, 0, i as u32, 0);
            self.sample_into(&mut s, &mut x);
            acc += norm(&x).powf(p);
        }
        acc / samples as f64
    }
}

// ---------------------------------------------------------------------------
// Regularity probes.

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub one_sided_max: f64,
    pub stored_l: f64,
    pub poly_max: f64,
    pub stored_poly: f64,
    pub samples: usize,
    pub violation: bool,
}

/// Monte-Carlo check of the stored regularity constants: samples pairs with
/// ‖θ‖∞ <= radius (ω from the model's disorder box when declared, otherwise
/// the same radius box) and maximizes the one-sided and growth quotients.
/// A report is flagged when an observed quotient exceeds the stored constant
/// by more than 1%.
pub fn probe_regularity(spec: &ModelSpec, sample_count: usize, radius: f64, seed: u64) -> RegularityReport {
    let m = spec.state_dim;
    let n = spec.disorder_dim;
    let mut one_sided_max = f64::NEG_INFINITY;
    let mut poly_max: f64 = 0.0;
    let mut th = vec![0.0; m];
    let mut thb = vec![0.0; m];
    let mut om = vec![0.0; n];
    let mut omb = vec![0.0; n];
    let mut c = vec![0.0; m];
    let mut cb = vec![0.0; m];

    let sample_omega = |stream: &mut Stream, out: &mut [f64]| match &spec.disorder_box {
        Some((lo, hi)) => {
            for i in 0..out.len() {
                out[i] = stream.next_range(lo[i], hi[i]);
            }
        }
        None => {
            for slot in out.iter_mut() {
                *slot = stream.next_range(-radius, radius);
            }
        }
    };

    for i in 0..sample_count {
        let mut s = Stream::new(seed, Domain::RegularityProbe, 0, i as u32, 0);
        for slot in th.iter_mut() {
            *slot = s.next_range(-radius, radius);
        }
        sample_omega(&mut s, &mut om);
        // Half the pairs are local perturbations so that attained suprema of
        // the differential quotients are actually probed.
        let local = i % 2 == 0;
        for j in 0..m {
            thb[j] = if local { th[j] + 0.05 * s.next_range(-1.0, 1.0) } else { s.next_range(-radius, radius) };
        }
        if local {
            let keep_omega = i % 4 == 0;
            if keep_omega {
                omb.copy_from_slice(&om);
            } else {
                sample_omega(&mut s, &mut omb);
            }
        } else {
            sample_omega(&mut s, &mut omb);
        }

        spec.drift_into(&th, &om, &mut c);
        spec.drift_into(&thb, &omb, &mut cb);

        let mut dot = 0.0;
        let mut d2 = 0.0;
        for j in 0..m {
            let dth = th[j] - thb[j];
            dot += dth * (c[j] - cb[j]);
            d2 += dth * dth;
        }
        for j in 0..n {
            let dom = om[j] - omb[j];
            d2 += dom * dom;
        }
        if d2 > 1e-24 {
            one_sided_max = one_sided_max.max(dot / d2);
        }

        let pb = &spec.poly_bound;
        let envelope = 1.0 + norm(&th).powf(pb.kappa) + norm(&om).powf(pb.iota);
        poly_max = poly_max.max(norm(&c) / envelope);
    }

    let l_threshold = spec.one_sided_l + 0.01 * spec.one_sided_l.abs().max(1.0);
    let poly_threshold = spec.poly_bound.c_norm * 1.01;
    RegularityReport {
        one_sided_max,
        stored_l: spec.one_sided_l,
        poly_max,
        stored_poly: spec.poly_bound.c_norm,
        samples: sample_count,
        violation: one_sided_max > l_threshold || poly_max > poly_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kuramoto_drift_is_frequency() {
        let spec = ModelSpec::kuramoto(1.0, 0.0);
        let out = eval_drift(&spec, &[0.3], &[1.7]).unwrap();
        assert_eq!(out, vec![1.7]);
    }

    #[test]
    fn kuramoto_coupling_quarter_turn() {
        let spec = ModelSpec::kuramoto(1.0, 0.0);
        let out = eval_coupling(&spec, &[0.0], &[0.0], &[std::f64::consts::FRAC_PI_2], &[0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fhn_drift_reference_point() {
        let spec = ModelSpec::fitzhugh_nagumo(0.5, 0.0, 0.0, 5.0, (0.6, 0.8), (0.7, 0.9), 10.0);
        let out = eval_drift(&spec, &[1.0, 0.0], &[0.7, 0.8]).unwrap();
        assert_abs_diff_eq!(out[0], 1.1666666666666667, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.56, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = ModelSpec::kuramoto(1.0, 0.0);
        let err = eval_drift(&spec, &[0.0, 0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { .. }));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let spec = ModelSpec::kuramoto(1.0, 0.0);
        let err = eval_drift(&spec, &[f64::NAN], &[0.0]).unwrap_err();
        assert!(matches!(err, ModelError::NonFinite(_)));
    }

    #[test]
    fn coupling_saturates_at_clip_bound() {
        let spec = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let out = eval_coupling(&spec, &[0.0, 0.0], &[0.7, 0.8], &[100.0, -100.0], &[0.7, 0.8]).unwrap();
        assert_eq!(out, vec![5.0, -5.0]);
        assert!(norm(&out) <= spec.gamma_sup + 1e-12);
    }

    #[test]
    fn separable_form_matches_coupling() {
        let spec = ModelSpec::kuramoto(1.3, 0.0);
        let sep = spec.separable.as_ref().unwrap();
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        for i in 0..50 {
            let th = [-3.0 + 0.13 * i as f64];
            let thb = [2.0 - 0.09 * i as f64];
            sep.eval_a(&th, &[0.0], &mut a);
            sep.eval_b(&thb, &[0.0], &mut b);
            let via_features = a[0] * b[0] + a[1] * b[1];
            let direct = eval_coupling(&spec, &th, &[0.0], &thb, &[0.0]).unwrap()[0];
            assert_abs_diff_eq!(via_features, direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn kuramoto_regularity_constants_hold() {
        let spec = ModelSpec::kuramoto(1.0, 1.0);
        let report = probe_regularity(&spec, 100_000, 10.0, 7);
        assert!(!report.violation, "{report:?}");
        // The one-sided supremum 1/2 is attained in the limit δθ = δω.
        assert!(report.one_sided_max <= 0.5 + 1e-9);
        assert!(report.one_sided_max > 0.4);
    }

    #[test]
    fn fhn_regularity_constants_hold() {
        let spec = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let report = probe_regularity(&spec, 100_000, 10.0, 11);
        assert!(!report.violation, "{report:?}");
    }

    #[test]
    fn zero_drift_passes_any_nonnegative_l() {
        let spec = ModelSpec::custom(
            "zero",
            1,
            1,
            Arc::new(|_t, _o, out| out[0] = 0.0),
            Arc::new(|_t, _o, _tb, _ob, out| out[0] = 0.0),
            vec![0.0],
            0.0,
            PolyBound { c_norm: 1.0, kappa: 2.0, iota: 1.0 },
            0.0,
            0.0,
        );
        let report = probe_regularity(&spec, 10_000, 5.0, 3);
        assert!(!report.violation);
        assert!(report.one_sided_max <= 0.0);
    }

    #[test]
    fn law_sampling_moments() {
        let law = Law::gaussian(&[0.0, 1.0], &[1.0, 0.5]);
        let m2 = law.empirical_moment(2.0, 20_000, 5);
        // E‖X‖² = 1 + (1 + 0.25) = 2.25
        assert!((m2 - 2.25).abs() < 0.1, "{m2}");
        assert!(Law::point(&[2.0]).is_point_mass());
        assert!(!law.is_point_mass());
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let spec = ModelSpec::fitzhugh_nagumo_default(0.0, 0.0);
        let mut fd = spec.clone();
        fd.drift_jacobian = None;
        let mut ja = vec![0.0; 4];
        let mut jb = vec![0.0; 4];
        let theta = [0.8, -0.4];
        let omega = [0.7, 0.8];
        spec.jacobian_into(&theta, &omega, &mut ja);
        fd.jacobian_into(&theta, &omega, &mut jb);
        for (a, b) in ja.iter().zip(&jb) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }
}
