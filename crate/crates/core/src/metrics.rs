//! Empirical measures, weighted Hölder test-function classes, and distances.
//!
//! The particle system at time t defines the random empirical measure
//!
//! ```text
//! ν_t = (1/|Λ_N|) Σ_i δ_{(θ_i(t), ω_i, x_i)}
//! ```
//!
//! whose gap to the mean-field law is measured against test functions of
//! product form f(θ, ω, x) = g(θ, ω) s(x − a) with a spatial factor matched
//! to the interaction weight: a normalized box χ_R for bounded couplings, a
//! power singularity ‖x − a‖^{−α} (optionally tapered by a smooth bump) for
//! the long-range case.  The relevant norm in the singular case is the
//! three-term weighted Hölder seminorm
//!
//! ```text
//! ‖f‖_a = Lip_{θ,ω}(‖x−a‖^α f) + sup ‖x−a‖^α ‖f‖
//!       + Hoel_{(2γ−α)∧1}(x ↦ ‖x−a‖^{2γ} f)
//! ```
//!
//! The suprema over the full function classes are not computable, so every
//! distance reported here is the maximum over a finite deterministic
//! dictionary of normalized members: a lower bound of the abstract distance.
//! Test functions are always free-space functions on the box; the particle
//! boundary condition never enters the metric.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    chi_cell_integral, power_cell_integral, GridPoint, KernelKind, LatticeConfig, WeightKernel,
};
use crate::meanfield::{measure_integrate, Integrand, MfError, PathLaw, XCell};
use crate::models::ModelSpec;
use crate::rng::{Domain, Stream};
use crate::simulate::TrajectoryRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 8 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("incompatible measures: {0}")]
    Incompatible(String),
    #[error("time {0} has no stored snapshot")]
    OffGrid(f64),
    #[error(transparent)]
    Meanfield(#[from] MfError),
}

/// Exact rational positions num/denom alongside the float ones, so that
/// singular-anchor coincidence is decided by integer arithmetic.
#[derive(Clone, Debug)]
pub struct ExactPositions {
    /// Site-major, `dim` numerators per atom.
    pub nums: Vec<i64>,
    pub denom: i64,
}

#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub state_dim: usize,
    pub disorder_dim: usize,
    pub sites: usize,
    pub states: Vec<f64>,
    pub omegas: Vec<f64>,
    pub positions: Vec<f64>,
    pub exact: Option<ExactPositions>,
}

impl EmpiricalMeasure {
    pub fn from_trajectory(
        rec: &TrajectoryRecord,
        model: &ModelSpec,
        lattice: &LatticeConfig,
        t: f64,
    ) -> Result<Self, MetricsError> {
        let snapshot = rec.snapshot_at(t).ok_or(MetricsError::OffGrid(t))?;
        let sites = lattice.site_count();
        let dim = lattice.dim;
        let mut nums = Vec::with_capacity(sites * dim);
        for i in 0..sites {
            nums.extend(lattice.coords(i));
        }
        Ok(EmpiricalMeasure {
            dim,
            state_dim: model.state_dim,
            disorder_dim: model.disorder_dim,
            sites,
            states: snapshot.to_vec(),
            omegas: rec.omegas.clone(),
            positions: rec.positions.clone(),
            exact: Some(ExactPositions {
                nums,
                denom: (2 * lattice.half_width).max(1) as i64,
            }),
        })
    }

    /// Uniform-atom surrogate built from a reference bundle: every
    /// (ω, node, sample) triple becomes one atom.  End-node trapezoid
    /// weights are ignored, an O(1/K_ref) distortion.
    pub fn from_path_law(law: &PathLaw, t: f64) -> Result<Self, MetricsError> {
        let t_idx = law.snapshot_index(t)?;
        let xc = law.x_count();
        let wc = law.grid.omega_samples;
        let mc = law.grid.path_samples;
        let m = law.state_dim;
        let sites = wc * xc * mc;
        let mut states = Vec::with_capacity(sites * m);
        let mut omegas = Vec::with_capacity(sites * law.disorder_dim);
        let mut positions = Vec::with_capacity(sites);
        let mut nums = Vec::with_capacity(sites);
        for w in 0..wc {
            for x in 0..xc {
                let pos = law.x_nodes[x].position()[0];
                let num = law.x_nodes[x].indices[0];
                for s in 0..mc {
                    states.extend_from_slice(law.state(t_idx, w, x, s));
                    omegas.extend_from_slice(law.omega(w));
                    positions.push(pos);
                    nums.push(num);
                }
            }
        }
        Ok(EmpiricalMeasure {
            dim: 1,
            state_dim: m,
            disorder_dim: law.disorder_dim,
            sites,
            states,
            omegas,
            positions,
            exact: Some(ExactPositions { nums, denom: 2 * law.grid.k_ref as i64 }),
        })
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn omega(&self, i: usize) -> &[f64] {
        &self.omegas[i * self.disorder_dim..(i + 1) * self.disorder_dim]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact coincidence of atom i with the dyadic point `anchor`.
    fn coincides(&self, i: usize, anchor: &GridPoint) -> bool {
        match &self.exact {
            Some(ex) => {
                let k2 = 2 * anchor.level as i64;
                (0..self.dim).all(|c| {
                    ex.nums[i * self.dim + c] * k2 == anchor.indices[c] * ex.denom
                })
            }
            None => {
                let a = anchor.position();
                (0..self.dim).all(|c| self.positions[i * self.dim + c] == a[c])
            }
        }
    }
}

/// Lipschitz-bounded feature over (θ, ω).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GFeature {
    Constant(f64),
    /// clamp(u · (θ, ω), −1, 1) with u over the concatenated coordinates.
    ClippedLinear { u: Vec<f64> },
    /// sin(k · θ + phase), ‖k‖_∞ ≤ 1.
    Sinusoid { k: Vec<f64>, phase: f64 },
    /// sin(k · θ + phase) times a trapezoid window in ω_0 that ramps from 1
    /// to 0 between half_width and half_width + ramp away from center.
    SinusoidWindow { k: Vec<f64>, phase: f64, center: f64, half_width: f64, ramp: f64 },
}

impl GFeature {
    pub fn eval(&self, theta: &[f64], omega: &[f64]) -> f64 {
        match self {
            GFeature::Constant(c) => *c,
            GFeature::ClippedLinear { u } => {
                let mut acc = 0.0;
                for (i, z) in theta.iter().chain(omega.iter()).enumerate() {
                    acc += u.get(i).copied().unwrap_or(0.0) * z;
                }
                acc.clamp(-1.0, 1.0)
            }
            GFeature::Sinusoid { k, phase } => {
                let mut acc = *phase;
                for (ki, ti) in k.iter().zip(theta) {
                    acc += ki * ti;
                }
                acc.sin()
            }
            GFeature::SinusoidWindow { k, phase, center, half_width, ramp } => {
                let mut acc = *phase;
                for (ki, ti) in k.iter().zip(theta) {
                    acc += ki * ti;
                }
                let d = (omega.first().copied().unwrap_or(0.0) - center).abs();
                let window = ((half_width + ramp - d) / ramp).clamp(0.0, 1.0);
                acc.sin() * window
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpatialProfile {
    /// (2R)^{−d} 1_{‖x−a‖_∞ ≤ R}: the bounded-coupling box.
    Chi { r: f64 },
    /// ‖x − a‖^{−α}, the bare singularity.
    Power { alpha: f64 },
    /// ‖x − a‖^{−α} (1 − (‖x−a‖/ρ)²)₊², singular but compactly tapered.
    PowerBump { alpha: f64, rho: f64 },
}

impl SpatialProfile {
    pub fn alpha(&self) -> f64 {
        match self {
            SpatialProfile::Chi { .. } => 0.0,
            SpatialProfile::Power { alpha } | SpatialProfile::PowerBump { alpha, .. } => *alpha,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.alpha() > 0.0
    }

    fn bump(dist: f64, rho: f64) -> f64 {
        let t = dist / rho;
        if t >= 1.0 {
            0.0
        } else {
            (1.0 - t * t).powi(2)
        }
    }
}

/// ∫₀^t u^{−α} (1 − u²/ρ²)² du for t ≤ ρ, constant beyond.
fn bump_power_primitive(t: f64, alpha: f64, rho: f64) -> f64 {
    let t = t.min(rho);
    if t <= 0.0 {
        return 0.0;
    }
    t.powf(1.0 - alpha) / (1.0 - alpha) - 2.0 * t.powf(3.0 - alpha) / ((3.0 - alpha) * rho * rho)
        + t.powf(5.0 - alpha) / ((5.0 - alpha) * rho.powi(4))
}

fn bump_power_cell_integral(a: f64, lo: f64, hi: f64, alpha: f64, rho: f64) -> f64 {
    let h = |s: f64| s.signum() * bump_power_primitive(s.abs(), alpha, rho);
    h(hi - a) - h(lo - a)
}

/// One member of the test-function dictionary: f = scale · g(θ, ω) · s(x−a).
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub anchor: GridPoint,
    pub g: GFeature,
    pub profile: SpatialProfile,
    /// Hölder weight exponent γ of the ambient kernel.
    pub gamma: f64,
    pub scale: f64,
}

impl TestFunction {
    pub fn new(anchor: GridPoint, g: GFeature, profile: SpatialProfile, gamma: f64) -> Self {
        TestFunction { anchor, g, profile, gamma, scale: 1.0 }
    }

    fn distance_to_anchor(&self, x: &[f64]) -> f64 {
        let a = self.anchor.position();
        let mut acc = 0.0;
        for (xi, ai) in x.iter().zip(&a) {
            acc += (xi - ai) * (xi - ai);
        }
        acc.sqrt()
    }

    /// s(x − a); None when x sits on a live singularity.
    pub fn spatial(&self, x: &[f64]) -> Option<f64> {
        let a = self.anchor.position();
        match self.profile {
            SpatialProfile::Chi { r } => {
                let inside = x.iter().zip(&a).all(|(xi, ai)| (xi - ai).abs() <= r);
                Some(if inside { (2.0 * r).powi(-(x.len() as i32)) } else { 0.0 })
            }
            SpatialProfile::Power { alpha } => {
                let d = self.distance_to_anchor(x);
                if alpha == 0.0 {
                    Some(1.0)
                } else if d == 0.0 {
                    None
                } else {
                    Some(d.powf(-alpha))
                }
            }
            SpatialProfile::PowerBump { alpha, rho } => {
                let d = self.distance_to_anchor(x);
                if alpha == 0.0 {
                    Some(SpatialProfile::bump(d, rho))
                } else if d == 0.0 {
                    None
                } else {
                    Some(d.powf(-alpha) * SpatialProfile::bump(d, rho))
                }
            }
        }
    }

    /// ‖x−a‖^α s(x − a), extended continuously through the anchor.
    pub fn spatial_alpha_weighted(&self, x: &[f64]) -> f64 {
        match self.profile {
            SpatialProfile::Chi { .. } => self.spatial(x).unwrap(),
            SpatialProfile::Power { .. } => 1.0,
            SpatialProfile::PowerBump { rho, .. } => {
                SpatialProfile::bump(self.distance_to_anchor(x), rho)
            }
        }
    }

    /// ‖x−a‖^{2γ} f(θ, ω, x) / (scale g) = ‖x−a‖^{2γ−α} · taper, again with
    /// the singularity cancelled by exponent arithmetic.
    pub fn spatial_gamma_weighted(&self, x: &[f64]) -> f64 {
        let d = self.distance_to_anchor(x);
        match self.profile {
            SpatialProfile::Chi { .. } => d.powf(2.0 * self.gamma) * self.spatial(x).unwrap(),
            SpatialProfile::Power { alpha } => d.powf(2.0 * self.gamma - alpha),
            SpatialProfile::PowerBump { alpha, rho } => {
                d.powf(2.0 * self.gamma - alpha) * SpatialProfile::bump(d, rho)
            }
        }
    }

    pub fn eval(&self, theta: &[f64], omega: &[f64], x: &[f64]) -> Option<f64> {
        self.spatial(x).map(|s| self.scale * self.g.eval(theta, omega) * s)
    }

    pub fn is_pnn(&self) -> bool {
        matches!(self.profile, SpatialProfile::Chi { .. })
    }
}

impl Integrand for TestFunction {
    fn g(&self, theta: &[f64], omega: &[f64]) -> f64 {
        self.scale * self.g.eval(theta, omega)
    }

    fn spatial_cell(&self, cell: &XCell, _boundary: crate::lattice::Boundary) -> f64 {
        debug_assert_eq!(self.anchor.indices.len(), 1, "cell quadrature is d = 1");
        let a = self.anchor.position()[0];
        match self.profile {
            SpatialProfile::Chi { r } => chi_cell_integral(a, cell.lo, cell.hi, r),
            SpatialProfile::Power { alpha } => power_cell_integral(a, cell.lo, cell.hi, alpha),
            SpatialProfile::PowerBump { alpha, rho } => {
                bump_power_cell_integral(a, cell.lo, cell.hi, alpha, rho)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOutcome {
    pub value: f64,
    pub excluded: usize,
}

/// ⟨f, ν⟩ = (1/sites) Σ_i f(θ_i, ω_i, x_i).  Atoms landing exactly on a live
/// singularity are dropped (their mass contributes nothing) and counted.
pub fn empirical_eval(f: &TestFunction, em: &EmpiricalMeasure) -> EvalOutcome {
    let mut sum = 0.0;
    let mut excluded = 0;
    for i in 0..em.sites {
        if f.profile.is_singular() && em.coincides(i, &f.anchor) {
            excluded += 1;
            continue;
        }
        match f.eval(em.theta(i), em.omega(i), em.position(i)) {
            Some(v) => sum += v,
            None => excluded += 1,
        }
    }
    EvalOutcome { value: sum / em.sites as f64, excluded }
}

#[derive(Clone, Copy, Debug)]
pub struct SeminormEstimate {
    /// sup ‖x−a‖^α ‖f(θ,ω,x) − f(θ̄,ω̄,x)‖ / (‖θ−θ̄‖ + ‖ω−ω̄‖).
    pub lipschitz: f64,
    /// sup ‖x−a‖^α ‖f‖.
    pub bounded: f64,
    /// Hölder quotient of x ↦ ‖x−a‖^{2γ} f, exponent (2γ−α) ∧ 1.
    pub holder: f64,
    /// Box family: the Lipschitz quotient alone.  Singular family: the
    /// three-term sum.
    pub total: f64,
}

impl SeminormEstimate {
    /// What the member must be divided by so that all class constraints
    /// (seminorm and, for the box family, the sup bound) hold.
    pub fn normalizer(&self, pnn: bool) -> f64 {
        if pnn {
            self.lipschitz.max(self.bounded)
        } else {
            self.total
        }
    }
}

const PROBE_RADIUS: f64 = 4.0;
const FD_STEP: f64 = 1e-5;

fn probe_point(stream: &mut Stream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| stream.next_range(-PROBE_RADIUS, PROBE_RADIUS)).collect()
}

/// A spatial probe biased toward the anchor: half the draws sit at
/// log-uniform distances down to 10⁻⁶, where the weighted factors attain
/// their suprema.
fn probe_x(stream: &mut Stream, anchor: &[f64]) -> Vec<f64> {
    let dim = anchor.len();
    if stream.next_uniform() < 0.5 {
        let scale = 10f64.powf(stream.next_range(-6.0, -0.3));
        anchor
            .iter()
            .map(|a| {
                let sign = if stream.next_uniform() < 0.5 { -1.0 } else { 1.0 };
                (a + sign * scale).clamp(-0.5, 0.5)
            })
            .collect()
    } else {
        (0..dim).map(|_| stream.next_range(-0.5, 0.5)).collect()
    }
}

/// Monte-Carlo lower estimate of the seminorm terms.  Probes pair finite
/// differences in (θ, ω) with anchor-biased spatial draws; the Hölder term
/// additionally pits probe points against the anchor itself, where the
/// quotient of the bare power profile is exactly attained.
pub fn seminorm(
    f: &TestFunction,
    resolution: usize,
    state_dim: usize,
    disorder_dim: usize,
    seed: u64,
) -> SeminormEstimate {
    assert!(resolution >= 64, "need at least 64 probe pairs per term");
    let anchor = f.anchor.position();
    let pnn = f.is_pnn();
    let alpha = f.profile.alpha();
    let holder_expo = (2.0 * f.gamma - alpha).min(1.0);

    let mut lipschitz: f64 = 0.0;
    let mut bounded: f64 = 0.0;
    let mut holder: f64 = 0.0;

    let mut stream = Stream::new(seed, Domain::RegularityProbe, 0, 0, 0);
    for _ in 0..resolution {
        let theta = probe_point(&mut stream, state_dim);
        let omega = probe_point(&mut stream, disorder_dim);
        let x = probe_x(&mut stream, &anchor);

        // Finite-difference Lipschitz quotient along a random direction.
        let mut dir: Vec<f64> =
            (0..state_dim + disorder_dim).map(|_| stream.next_normal()).collect();
        let n = crate::models::norm(&dir);
        if n > 0.0 {
            dir.iter_mut().for_each(|d| *d /= n);
            let mut theta_b = theta.clone();
            let mut omega_b = omega.clone();
            for (i, d) in dir.iter().enumerate() {
                if i < state_dim {
                    theta_b[i] += FD_STEP * d;
                } else {
                    omega_b[i - state_dim] += FD_STEP * d;
                }
            }
            let dg = (f.g.eval(&theta_b, &omega_b) - f.g.eval(&theta, &omega)).abs();
            let weight = f.spatial_alpha_weighted(&x);
            lipschitz = lipschitz.max(f.scale.abs() * dg * weight / FD_STEP);
        }

        let weight = f.spatial_alpha_weighted(&x);
        bounded = bounded.max(f.scale.abs() * f.g.eval(&theta, &omega).abs() * weight);

        if !pnn {
            let g_val = f.scale.abs() * f.g.eval(&theta, &omega).abs();
            // Pair against the anchor (quotient exactly the profile shape)
            // and against an independent draw.
            let y = probe_x(&mut stream, &anchor);
            for other in [&anchor[..], &y[..]] {
                let dist: f64 = x
                    .iter()
                    .zip(other)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt();
                if dist > 0.0 {
                    let dh =
                        (f.spatial_gamma_weighted(&x) - f.spatial_gamma_weighted(other)).abs();
                    holder = holder.max(g_val * dh / dist.powf(holder_expo));
                }
            }
        }
    }
    let total = if pnn { lipschitz } else { lipschitz + bounded + holder };
    SeminormEstimate { lipschitz, bounded, holder, total }
}

/// Safety factor absorbing the lower-bound bias of the probed seminorm.
pub const NORMALIZATION_SAFETY: f64 = 1.1;

/// Dyadic anchor set: the union of the grids D_K over the given levels,
/// deduplicated by exact rational position (d = 1).
pub fn default_anchors(levels: &[u32]) -> Vec<GridPoint> {
    let mut out: Vec<GridPoint> = Vec::new();
    for &k in levels {
        for l in -(k as i64)..=k as i64 {
            let candidate = GridPoint::new(vec![l], k).unwrap();
            let dup = out.iter().any(|p| {
                p.indices[0] * k as i64 == l * p.level as i64
            });
            if !dup {
                out.push(candidate);
            }
        }
    }
    out
}

/// Deterministic dictionary: `size` members per anchor.  Member 0 is the
/// clipped first state coordinate, member 1 the constant, members 2 and 3
/// a sine and cosine in θ_0; further members draw random clipped linears,
/// sinusoids, and disorder-window products.  Every member is divided by its
/// probed normalizer times [`NORMALIZATION_SAFETY`].
pub fn build_dictionary(
    kernel: &WeightKernel,
    anchors: &[GridPoint],
    size: usize,
    state_dim: usize,
    disorder_dim: usize,
    seed: u64,
) -> Vec<TestFunction> {
    assert!(size >= 1);
    let mut out = Vec::with_capacity(anchors.len() * size);
    for (ai, anchor) in anchors.iter().enumerate() {
        for mi in 0..size {
            let mut stream = Stream::new(seed, Domain::Dictionary, ai as u32, mi as u32, 0);
            let g = match mi {
                0 => {
                    let mut u = vec![0.0; state_dim + disorder_dim];
                    u[0] = 1.0;
                    GFeature::ClippedLinear { u }
                }
                1 => GFeature::Constant(1.0),
                2 | 3 => {
                    let mut k = vec![0.0; state_dim];
                    k[0] = 1.0;
                    GFeature::Sinusoid {
                        k,
                        phase: if mi == 2 { 0.0 } else { std::f64::consts::FRAC_PI_2 },
                    }
                }
                _ => match mi % 3 {
                    0 => {
                        let mut u: Vec<f64> =
                            (0..state_dim + disorder_dim).map(|_| stream.next_normal()).collect();
                        let n = crate::models::norm(&u).max(1e-12);
                        u.iter_mut().for_each(|v| *v /= n);
                        GFeature::ClippedLinear { u }
                    }
                    1 => GFeature::Sinusoid {
                        k: (0..state_dim).map(|_| stream.next_range(-1.0, 1.0)).collect(),
                        phase: stream.next_range(0.0, std::f64::consts::TAU),
                    },
                    _ => GFeature::SinusoidWindow {
                        k: (0..state_dim).map(|_| stream.next_range(-1.0, 1.0)).collect(),
                        phase: stream.next_range(0.0, std::f64::consts::TAU),
                        center: stream.next_range(-1.5, 1.5),
                        half_width: stream.next_range(0.2, 0.8),
                        ramp: stream.next_range(0.5, 1.0),
                    },
                },
            };
            let profile = match &kernel.kind {
                KernelKind::PNearest { r } => SpatialProfile::Chi { r: *r },
                KernelKind::PowerLaw { alpha, .. } => {
                    if mi % 2 == 0 {
                        SpatialProfile::Power { alpha: *alpha }
                    } else {
                        SpatialProfile::PowerBump {
                            alpha: *alpha,
                            rho: stream.next_range(0.4, 0.9),
                        }
                    }
                }
            };
            let mut f = TestFunction::new(anchor.clone(), g, profile, kernel.gamma);
            let probe_seed =
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((ai * 1031 + mi) as u64);
            let est = seminorm(&f, 2048, state_dim, disorder_dim, probe_seed);
            let normalizer = est.normalizer(f.is_pnn());
            if normalizer > 0.0 {
                f.scale = 1.0 / (normalizer * NORMALIZATION_SAFETY);
            }
            out.push(f);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub p: u32,
    pub replicas: usize,
    pub stderr: f64,
    pub dictionary_size: usize,
    pub excluded_atoms: usize,
    /// Dictionary index attaining the supremum.
    pub argmax: usize,
}

fn assemble_estimate(
    diffs: &[Vec<f64>],
    p: u32,
    replicas: usize,
    excluded: usize,
) -> DistanceEstimate {
    let pf = p as f64;
    let max_over = |skip: Option<usize>| -> (f64, usize) {
        let mut best = (0.0f64, 0usize);
        for (fi, row) in diffs.iter().enumerate() {
            let mut acc = 0.0;
            let mut count = 0usize;
            for (r, d) in row.iter().enumerate() {
                if Some(r) == skip {
                    continue;
                }
                acc += d.abs().powf(pf);
                count += 1;
            }
            let val = (acc / count.max(1) as f64).powf(1.0 / pf);
            if val > best.0 {
                best = (val, fi);
            }
        }
        best
    };
    let (value, argmax) = max_over(None);
    let loo: Vec<f64> = (0..replicas).map(|r| max_over(Some(r)).0).collect();
    let mean = loo.iter().sum::<f64>() / replicas as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (replicas as f64 - 1.0)
        / replicas as f64;
    DistanceEstimate {
        value,
        p,
        replicas,
        stderr: var.sqrt(),
        dictionary_size: diffs.len(),
        excluded_atoms: excluded,
        argmax,
    }
}

/// One reference integral per dictionary member, reusable across a whole
/// N-sweep (the expensive part of a distance estimate is the reference
/// quadrature, which does not depend on the particle ensemble).
pub fn reference_values(
    dictionary: &[TestFunction],
    reference: &PathLaw,
    t: f64,
) -> Result<Vec<f64>, MetricsError> {
    dictionary
        .par_iter()
        .map(|f| measure_integrate(f, reference, t).map_err(MetricsError::from))
        .collect()
}

/// Dictionary lower bound of d^{(p)}: max over members f of
/// (mean over replicas |⟨f, ν^{(N)}⟩ − ⟨f, ν⟩|^p)^{1/p}, with a jackknife
/// standard error over replicas.
pub fn estimate_distance(
    replicas: &[EmpiricalMeasure],
    reference: &PathLaw,
    t: f64,
    p: u32,
    dictionary: &[TestFunction],
) -> Result<DistanceEstimate, MetricsError> {
    let ref_vals = reference_values(dictionary, reference, t)?;
    estimate_distance_precomputed(replicas, &ref_vals, p, dictionary)
}

/// Same estimator with the reference integrals already in hand.
pub fn estimate_distance_precomputed(
    replicas: &[EmpiricalMeasure],
    ref_vals: &[f64],
    p: u32,
    dictionary: &[TestFunction],
) -> Result<DistanceEstimate, MetricsError> {
    if replicas.len() < 8 {
        return Err(MetricsError::TooFewReplicas(replicas.len()));
    }
    assert!(p >= 1 && !dictionary.is_empty() && ref_vals.len() == dictionary.len());
    let rows: Vec<(Vec<f64>, usize)> = dictionary
        .par_iter()
        .zip(ref_vals.par_iter())
        .map(|(f, &ref_val)| {
            let mut excluded = 0;
            let row: Vec<f64> = replicas
                .iter()
                .map(|em| {
                    let out = empirical_eval(f, em);
                    excluded += out.excluded;
                    out.value - ref_val
                })
                .collect();
            (row, excluded)
        })
        .collect();
    let excluded = rows.iter().map(|(_, e)| e).sum();
    let diffs: Vec<Vec<f64>> = rows.into_iter().map(|(r, _)| r).collect();
    Ok(assemble_estimate(&diffs, p, replicas.len(), excluded))
}

/// Same estimator between two families of empirical measures, replica r of
/// one paired with replica r of the other.  Exactly symmetric under swap.
pub fn estimate_distance_empirical(
    side_a: &[EmpiricalMeasure],
    side_b: &[EmpiricalMeasure],
    p: u32,
    dictionary: &[TestFunction],
) -> Result<DistanceEstimate, MetricsError> {
    if side_a.len() < 8 || side_b.len() < 8 {
        return Err(MetricsError::TooFewReplicas(side_a.len().min(side_b.len())));
    }
    if side_a.len() != side_b.len() {
        return Err(MetricsError::Incompatible("replica counts differ".into()));
    }
    assert!(p >= 1 && !dictionary.is_empty());
    let rows: Vec<(Vec<f64>, usize)> = dictionary
        .par_iter()
        .map(|f| {
            let mut excluded = 0;
            let row: Vec<f64> = side_a
                .iter()
                .zip(side_b)
                .map(|(ea, eb)| {
                    let oa = empirical_eval(f, ea);
                    let ob = empirical_eval(f, eb);
                    excluded += oa.excluded + ob.excluded;
                    (oa.value - ob.value).abs()
                })
                .collect();
            (row, excluded)
        })
        .collect();
    let excluded = rows.iter().map(|(_, e)| e).sum();
    let diffs: Vec<Vec<f64>> = rows.into_iter().map(|(r, _)| r).collect();
    Ok(assemble_estimate(&diffs, p, side_a.len(), excluded))
}

#[derive(Clone, Copy, Debug)]
pub struct DInfinitySum {
    pub value: f64,
    /// Σ_{K > K_max} 2^{−K}, bounding what the truncation can hide.
    pub truncation_bound: f64,
}

/// Truncated weighted aggregate over grid levels:
///
/// ```text
/// d_∞ = Σ_{K=1}^{K_max} 2^{−K} e^{−C K^{dp/q}} K^{−2d} (d_K ∧ 1)
/// ```
///
/// with q the conjugate exponent of p.  `d_k[i]` is the level-(i+1)
/// estimate.
pub fn d_infinity(d_k: &[f64], dim: usize, p: u32, c: f64) -> DInfinitySum {
    assert!(p >= 2 && !d_k.is_empty());
    let q = p as f64 / (p as f64 - 1.0);
    let expo = dim as f64 * p as f64 / q;
    let mut value = 0.0;
    for (i, &dk) in d_k.iter().enumerate() {
        let k = (i + 1) as f64;
        value += 0.5f64.powf(k) * (-c * k.powf(expo)).exp() / k.powi(2 * dim as i32)
            * dk.min(1.0);
    }
    DInfinitySum { value, truncation_bound: 0.5f64.powi(d_k.len() as i32) }
}

type Rat = Ratio<i128>;

fn rat_min(a: Rat, b: Rat) -> Rat {
    if a < b {
        a
    } else {
        b
    }
}

fn rat_max(a: Rat, b: Rat) -> Rat {
    if a > b {
        a
    } else {
        b
    }
}

/// 𝓘(a) = |[a−R, a+R] ∩ [−1/2, 1/2]| / (2R), exactly.
pub fn coverage_ratio(a: Rat, r: Rat) -> Rat {
    let half = Rat::new(1, 2);
    let lo = rat_max(a - r, -half);
    let hi = rat_min(a + r, half);
    if hi <= lo {
        Rat::from_integer(0)
    } else {
        (hi - lo) / (Rat::from_integer(2) * r)
    }
}

/// 𝓘_N(a) = (1/(2N+1)) Σ_{|j| ≤ N} (2R)^{−1} 1_{|j/(2N) − a| ≤ R}, exactly.
pub fn lattice_coverage_ratio(a: Rat, r: Rat, n: i128) -> Rat {
    let two_n = Rat::from_integer(2 * n);
    let j_min = rat_max(((a - r) * two_n).ceil(), Rat::from_integer(-n)).to_integer();
    let j_max = rat_min(((a + r) * two_n).floor(), Rat::from_integer(n)).to_integer();
    let count = (j_max - j_min + 1).max(0);
    Rat::from_integer(count) / (Rat::from_integer(2 * n + 1) * Rat::from_integer(2) * r)
}

#[derive(Clone, Debug)]
pub struct RiemannViolation {
    pub a_num: i64,
    pub a_den: i64,
    pub n: usize,
    pub gap: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct RiemannReport {
    pub checked: usize,
    pub violations: Vec<RiemannViolation>,
    /// max over the sweep of |𝓘_N − 𝓘| · 2N.
    pub max_scaled_gap: f64,
    pub pass: bool,
}

/// Exact rational sweep of the Riemann-sum bound |𝓘_N(a) − 𝓘(a)| ≤ 1/(2N)
/// for the box weight with radius R = r_num/r_den.  Reports every (a, N)
/// where the bound fails; no float tolerance anywhere.
pub fn riemann_discretization_check(
    r_num: i64,
    r_den: i64,
    anchors: &[GridPoint],
    n_sweep: &[usize],
) -> RiemannReport {
    assert!(r_num > 0 && r_den > 0);
    let r = Rat::new(r_num as i128, r_den as i128);
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut max_scaled_gap = 0.0f64;
    for anchor in anchors {
        debug_assert_eq!(anchor.indices.len(), 1);
        let a = Rat::new(anchor.indices[0] as i128, 2 * anchor.level as i128);
        let exact = coverage_ratio(a, r);
        for &n in n_sweep {
            checked += 1;
            let discrete = lattice_coverage_ratio(a, r, n as i128);
            let gap = if discrete > exact { discrete - exact } else { exact - discrete };
            let bound = Rat::new(1, 2 * n as i128);
            let gap_f = *gap.numer() as f64 / *gap.denom() as f64;
            max_scaled_gap = max_scaled_gap.max(gap_f * 2.0 * n as f64);
            if gap > bound {
                violations.push(RiemannViolation {
                    a_num: anchor.indices[0],
                    a_den: 2 * anchor.level as i64,
                    n,
                    gap: gap_f,
                    bound: 1.0 / (2.0 * n as f64),
                });
            }
        }
    }
    RiemannReport { checked, pass: violations.is_empty(), violations, max_scaled_gap }
}
