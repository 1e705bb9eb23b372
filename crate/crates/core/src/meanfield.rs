//! The mean-field limit as a Picard fixed point.
//!
//! The limiting measure ν solves, in weak form,
//!
//! ```text
//! dθ(t) = c(θ, ω) dt + ∫ Γ(θ, ω, θ̄, ω̄) Ψ(x, x̄) m_t(dθ̄, dω̄, dx̄) dt + σ dB(t)
//! ```
//!
//! and is obtained as the fixed point of the map Θ sending a path law m to
//! the law of the solution driven by the frozen m.  The abstract law space is
//! realized as Monte-Carlo bundles over a product grid: x on the dyadic nodes
//! D_K of [−1/2, 1/2] with trapezoid cell weights, ω on i.i.d. disorder
//! draws, and M sampled paths per node.
//!
//! Spatial quadrature of the singular weight is done cell by cell with the
//! closed-form integrals from the lattice module, so the x-discretization
//! error stays O(mesh) even for power-law kernels.  Brownian increments are
//! keyed by (node, sample, step) and reused across Picard iterations; the
//! contraction proxy δ̂ between consecutive iterates is therefore a
//! synchronous-coupling upper bound with very low variance, mirroring the
//! same-noise coupling used in the contraction proof.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    chi_cell_integral, power_cell_integral, torus_chi_cell_integral, torus_power_cell_integral,
    Boundary, GridPoint, KernelKind, WeightKernel,
};
use crate::models::{norm, CoordLaw, Law, ModelSpec};
use crate::rng::{fill_normals, Domain, Stream};
use crate::simulate::Scheme;

#[derive(Debug, Error)]
pub enum MfError {
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("time {0} has no stored snapshot")]
    OffGrid(f64),
    #[error("path laws are incompatible: {0}")]
    Mismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// x-grid level: nodes at l/(2 k_ref).
    pub k_ref: u32,
    /// Disorder quadrature sample count (1 suffices for point-mass laws).
    pub omega_samples: usize,
    /// Monte-Carlo paths per (ω, x) node.
    pub path_samples: usize,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(k_ref: u32, omega_samples: usize, path_samples: usize, boundary: Boundary) -> Self {
        assert!(k_ref >= 1 && omega_samples >= 1 && path_samples >= 1);
        GridSpec { k_ref, omega_samples, path_samples, boundary }
    }
}

/// One x-quadrature cell; `weight` is the designed cell length (dyadic for
/// power-of-two grids, so the weights sum to exactly 1).
#[derive(Clone, Copy, Debug)]
pub struct XCell {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub weight: f64,
}

/// Trapezoid nodes and cells of D_K on [−1/2, 1/2] (free) or the 2K uniform
/// torus nodes (periodic).
pub fn x_grid(k_ref: u32, boundary: Boundary) -> (Vec<GridPoint>, Vec<XCell>) {
    let k = k_ref as i64;
    let h = 1.0 / (2.0 * k_ref as f64);
    let mut nodes = Vec::new();
    let mut cells = Vec::new();
    match boundary {
        Boundary::Free => {
            for l in -k..=k {
                let center = l as f64 * h;
                nodes.push(GridPoint::new(vec![l], k_ref).unwrap());
                let (lo, hi, weight) = if l == -k {
                    (-0.5, -0.5 + h / 2.0, h / 2.0)
                } else if l == k {
                    (0.5 - h / 2.0, 0.5, h / 2.0)
                } else {
                    (center - h / 2.0, center + h / 2.0, h)
                };
                cells.push(XCell { lo, hi, center, weight });
            }
        }
        Boundary::Periodic => {
            for l in -k..k {
                let center = l as f64 * h;
                nodes.push(GridPoint::new(vec![l], k_ref).unwrap());
                cells.push(XCell { lo: center - h / 2.0, hi: center + h / 2.0, center, weight: h });
            }
        }
    }
    (nodes, cells)
}

/// ∫_cell Ψ(x, u) du for one target x and one cell, exact in the radial
/// factor; translation-variant modifiers are frozen at the cell center.
pub fn psi_cell_weight(kernel: &WeightKernel, x: f64, cell: &XCell, boundary: Boundary) -> f64 {
    let base = match (&kernel.kind, boundary) {
        (KernelKind::PNearest { r }, Boundary::Free) => chi_cell_integral(x, cell.lo, cell.hi, *r),
        (KernelKind::PNearest { r }, Boundary::Periodic) => {
            torus_chi_cell_integral(x, cell.lo, cell.hi, *r)
        }
        (KernelKind::PowerLaw { alpha, .. }, Boundary::Free) => {
            power_cell_integral(x, cell.lo, cell.hi, *alpha)
        }
        (KernelKind::PowerLaw { alpha, .. }, Boundary::Periodic) => {
            torus_power_cell_integral(x, cell.lo, cell.hi, *alpha)
        }
    };
    let modif = match &kernel.kind {
        KernelKind::PowerLaw { modifier: Some(m), .. } => m.eval(&[x], &[cell.center]),
        _ => 1.0,
    };
    base * modif
}

#[derive(Clone, Copy, Debug)]
pub struct RefConfig {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Cap on the per-evaluation sample count when the frozen field must be
    /// averaged literally (non-separable couplings); 0 means all samples.
    pub field_subsample: usize,
}

impl RefConfig {
    pub fn new(dt: f64, t_final: f64, seed: u64) -> Self {
        RefConfig { dt, t_final, seed, scheme: Scheme::EulerMaruyama, field_subsample: 0 }
    }

    pub fn step_count(&self) -> u64 {
        assert!(self.dt > 0.0 && self.t_final > 0.0 && self.dt <= self.t_final);
        (self.t_final / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    pub fn resolved_dt(&self) -> f64 {
        self.t_final / self.step_count() as f64
    }

    /// 33 equispaced snapshot times, clipped onto the step grid.
    pub fn sample_times(&self) -> Vec<f64> {
        let steps = self.step_count();
        let dt = self.resolved_dt();
        let mut out: Vec<u64> = (0..=32).map(|j| (steps * j + 16) / 32).collect();
        out.dedup();
        out.into_iter().map(|k| k as f64 * dt).collect()
    }
}

/// Monte-Carlo realization of a path law: snapshots of every sampled path at
/// the stored times, plus whatever the next Θ application needs to evaluate
/// the frozen interaction (per-step feature means for separable couplings,
/// full paths otherwise).
#[derive(Clone, Debug)]
pub struct PathLaw {
    pub grid: GridSpec,
    pub x_nodes: Vec<GridPoint>,
    pub x_cells: Vec<XCell>,
    /// Disorder draws, sample-major, length omega_samples * disorder_dim.
    pub omegas: Vec<f64>,
    pub state_dim: usize,
    pub disorder_dim: usize,
    pub dt: f64,
    pub steps: u64,
    /// Stored snapshot times (subset of the step grid, first 0, last T).
    pub times: Vec<f64>,
    /// Per stored time: states laid out [ω][x][sample][component].
    pub snapshots: Vec<Vec<f64>>,
    /// Separable couplings: per step k <= steps, channel-major feature means
    /// over each x-node, layout [k][channel][x].
    pub feature_means: Option<Vec<f64>>,
    /// Non-separable couplings: full paths, layout [node*M+s][k][component]
    /// with node = ω-index * X + x-index.
    pub literal_paths: Option<Vec<f64>>,
    pub iteration: u32,
    pub seed: u64,
}

impl PathLaw {
    pub fn x_count(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.grid.omega_samples * self.x_nodes.len()
    }

    pub fn snapshot_index(&self, t: f64) -> Result<usize, MfError> {
        let tol = 1e-9 * self.times.last().copied().unwrap_or(1.0).max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(MfError::OffGrid(t))
    }

    pub fn omega(&self, w: usize) -> &[f64] {
        &self.omegas[w * self.disorder_dim..(w + 1) * self.disorder_dim]
    }

    /// State of path (ω-index w, x-index x, sample s) in snapshot `t_idx`.
    pub fn state(&self, t_idx: usize, w: usize, x: usize, s: usize) -> &[f64] {
        let m = self.state_dim;
        let xc = self.x_nodes.len();
        let mc = self.grid.path_samples;
        let base = ((w * xc + x) * mc + s) * m;
        &self.snapshots[t_idx][base..base + m]
    }

    fn compatible(&self, other: &PathLaw) -> Result<(), MfError> {
        if self.grid != other.grid
            || self.steps != other.steps
            || self.state_dim != other.state_dim
            || self.times.len() != other.times.len()
        {
            return Err(MfError::Mismatch("grids or step grids differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PicardReport {
    /// δ̂_T(m^(k+1), m^(k)) for k = 0, 1, ...
    pub deltas: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
    pub kappa: f64,
    pub p: f64,
}

/// Product-form integrand f(θ, ω, x) = g(θ, ω) s(x).  The spatial factor is
/// integrated in closed form over each quadrature cell, which keeps singular
/// anchors (s(x) = ‖x − a‖^{−α}...) well behaved.
pub trait Integrand {
    fn g(&self, theta: &[f64], omega: &[f64]) -> f64;
    /// ∫_cell s(x) dx; for s ≡ 1 return cell.weight so constants integrate
    /// to exactly 1.
    fn spatial_cell(&self, cell: &XCell, boundary: Boundary) -> f64;
}

/// Plain state integrand, s ≡ 1.
pub struct StateIntegrand<G: Fn(&[f64], &[f64]) -> f64>(pub G);

impl<G: Fn(&[f64], &[f64]) -> f64> Integrand for StateIntegrand<G> {
    fn g(&self, theta: &[f64], omega: &[f64]) -> f64 {
        (self.0)(theta, omega)
    }

    fn spatial_cell(&self, cell: &XCell, _boundary: Boundary) -> f64 {
        cell.weight
    }
}

/// ⟨f, ν_t⟩ by cell-exact x-quadrature times Monte-Carlo averages over
/// (ω, path) samples.
pub fn measure_integrate(f: &dyn Integrand, law: &PathLaw, t: f64) -> Result<f64, MfError> {
    Ok(measure_integrate_with_stderr(f, law, t)?.0)
}

/// Same as `measure_integrate` plus a block standard error over 8 sample
/// blocks.
pub fn measure_integrate_with_stderr(
    f: &dyn Integrand,
    law: &PathLaw,
    t: f64,
) -> Result<(f64, f64), MfError> {
    let t_idx = law.snapshot_index(t)?;
    let xc = law.x_count();
    let wc = law.grid.omega_samples;
    let mc = law.grid.path_samples;
    let blocks = 8.min(mc);
    let mut block_vals = vec![0.0; blocks];
    let mut block_counts = vec![0usize; blocks];
    let mut total = 0.0;
    for (x, cell) in law.x_cells.iter().enumerate() {
        let spatial = f.spatial_cell(cell, law.grid.boundary);
        if spatial == 0.0 {
            continue;
        }
        for w in 0..wc {
            let omega = law.omega(w);
            let mut mean = 0.0;
            for s in 0..mc {
                let val = f.g(law.state(t_idx, w, x, s), omega);
                mean += val;
                block_vals[s % blocks] += spatial * val / wc as f64;
                block_counts[s % blocks] += 1;
            }
            total += spatial * mean / (wc * mc) as f64;
        }
    }
    // Per-block estimates of the same integral, then spread of the blocks.
    let per_node = (wc * xc) as f64;
    let est: Vec<f64> = block_vals
        .iter()
        .zip(&block_counts)
        .map(|(&v, &c)| v / (c as f64 / per_node).max(1.0))
        .collect();
    let mean_est = est.iter().sum::<f64>() / blocks as f64;
    let var = est.iter().map(|e| (e - mean_est).powi(2)).sum::<f64>() / (blocks.max(2) - 1) as f64;
    Ok((total, (var / blocks as f64).sqrt()))
}

enum FieldSource<'a> {
    Zero,
    /// Precomputed H[k][channel][x] = Σ_cells ψ(x, cell) meanB[k][channel][cell].
    Table(&'a [f64]),
    /// Literal paths of the frozen law plus per-target ψ rows.
    Literal { paths: &'a [f64], law: &'a PathLaw, sub: usize },
}

struct Workspace {
    a_buf: Vec<f64>,
    gamma: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn eval_field(
    source: &FieldSource,
    model: &ModelSpec,
    theta: &[f64],
    omega: &[f64],
    x_idx: usize,
    k: u64,
    geom: &Geometry,
    ws: &mut Workspace,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match source {
        FieldSource::Zero => {}
        FieldSource::Table(h) => {
            let sep = model.separable.as_ref().expect("feature table requires separable coupling");
            let m = model.state_dim;
            let channels = sep.n_terms * m;
            let xc = geom.cells.len();
            sep.eval_a(theta, omega, &mut ws.a_buf);
            let base = (k as usize) * channels * xc;
            for ch in 0..channels {
                out[ch % m] += ws.a_buf[ch] * h[base + ch * xc + x_idx];
            }
        }
        FieldSource::Literal { paths, law, sub } => {
            let m = model.state_dim;
            let xc = law.x_count();
            let wc = law.grid.omega_samples;
            let mc = law.grid.path_samples;
            let take = if *sub == 0 { mc } else { (*sub).min(mc) };
            let stride = (law.steps as usize + 1) * m;
            let off = (k as usize) * m;
            for xb in 0..xc {
                let psi = geom.psi[x_idx * xc + xb];
                if psi == 0.0 {
                    continue;
                }
                for w in 0..wc {
                    let omega_bar = law.omega(w);
                    let node = w * xc + xb;
                    let mut acc = vec![0.0; m];
                    for s in 0..take {
                        let path = &paths[(node * mc + s) * stride + off..];
                        model.coupling_into(theta, omega, &path[..m], omega_bar, &mut ws.gamma);
                        for c in 0..m {
                            acc[c] += ws.gamma[c];
                        }
                    }
                    let scale = psi / (wc * take) as f64;
                    for c in 0..m {
                        out[c] += acc[c] * scale;
                    }
                }
            }
        }
    }
    // The frozen-measure interaction can never exceed ‖Γ‖_∞ S(Ψ).
    debug_assert!(
        norm(out) <= model.gamma_sup * geom.row_sum[x_idx] * (1.0 + 1e-9) + 1e-12,
        "interaction bound violated"
    );
}

struct Geometry {
    cells: Vec<XCell>,
    /// ψ quadrature matrix, target-major: psi[x][cell].
    psi: Vec<f64>,
    row_sum: Vec<f64>,
}

fn build_geometry(kernel: &WeightKernel, cells: &[XCell], boundary: Boundary) -> Geometry {
    let xc = cells.len();
    let mut psi = vec![0.0; xc * xc];
    let mut row_sum = vec![0.0; xc];
    for x in 0..xc {
        let target = cells[x].center;
        let mut acc = 0.0;
        for (b, cell) in cells.iter().enumerate() {
            let w = psi_cell_weight(kernel, target, cell, boundary);
            psi[x * xc + b] = w;
            acc += w;
        }
        row_sum[x] = acc;
    }
    Geometry { cells: cells.to_vec(), psi, row_sum }
}

/// H[k][channel][x] from the stored feature means of the frozen law.
fn field_table(law: &PathLaw, geom: &Geometry, channels: usize) -> Vec<f64> {
    let mean_b = law.feature_means.as_ref().expect("separable law stores feature means");
    let xc = law.x_count();
    let steps = law.steps as usize;
    let mut h = vec![0.0; (steps + 1) * channels * xc];
    for k in 0..=steps {
        for ch in 0..channels {
            let src = &mean_b[(k * channels + ch) * xc..(k * channels + ch + 1) * xc];
            let dst_base = (k * channels + ch) * xc;
            for x in 0..xc {
                let mut acc = 0.0;
                for (b, &mb) in src.iter().enumerate() {
                    acc += geom.psi[x * xc + b] * mb;
                }
                h[dst_base + x] = acc;
            }
        }
    }
    h
}

struct PassOutput {
    snapshots: Vec<Vec<f64>>,
    feature_means: Option<Vec<f64>>,
    literal_paths: Option<Vec<f64>>,
    delta: Option<(f64, f64)>,
}

/// Simulates all node bundles once under `field_new`.  When `field_old` is
/// given, the previous iterate is re-simulated in lockstep under the same
/// noise and the synchronous-coupling distance between the two outputs is
/// accumulated (per node: (1/M Σ sup_t ‖Δ‖^κ)^{1/κ}, then the weighted
/// L^p aggregate over nodes).
#[allow(clippy::too_many_arguments)]
fn run_pass(
    model: &ModelSpec,
    geom: &Geometry,
    grid: &GridSpec,
    omegas: &[f64],
    zeta: &Law,
    cfg: &RefConfig,
    field_new: &FieldSource,
    field_old: Option<&FieldSource>,
    kappa: f64,
    p: f64,
) -> PassOutput {
    let m = model.state_dim;
    let xc = geom.cells.len();
    let wc = grid.omega_samples;
    let mc = grid.path_samples;
    let steps = cfg.step_count();
    let dt = cfg.resolved_dt();
    let sqrt_dt = dt.sqrt();
    let separable = model.separable.is_some();
    let channels = model.separable.as_ref().map_or(0, |s| s.n_terms) * m;

    let sample_times = cfg.sample_times();
    let snap_steps: Vec<u64> = sample_times.iter().map(|&t| (t / dt).round() as u64).collect();

    let mut snapshots = vec![vec![0.0; wc * xc * mc * m]; snap_steps.len()];
    let mut feature_means =
        if separable { Some(vec![0.0; (steps as usize + 1) * channels * xc]) } else { None };
    let mut literal_paths = if separable {
        None
    } else {
        let len = wc * xc * mc * (steps as usize + 1) * m;
        assert!(len <= 80_000_000, "literal path storage too large");
        Some(vec![0.0; len])
    };

    let blocks = 8.min(mc);
    // sup_t ‖Δ‖ accumulators per (node, block): Σ sup^κ and count.
    let mut delta_acc = vec![0.0; wc * xc * blocks];

    let mut ws = Workspace { a_buf: vec![0.0; channels.max(1)], gamma: vec![0.0; m] };
    let mut b_buf = vec![0.0; channels.max(1)];
    let mut noise = vec![0.0; m];
    let mut field = vec![0.0; m];
    let mut drift = vec![0.0; m];
    let mut kick = vec![0.0; m];
    let mut theta_a = vec![0.0; m];
    let mut theta_b = vec![0.0; m];

    for w in 0..wc {
        let omega = &omegas[w * model.disorder_dim..(w + 1) * model.disorder_dim];
        for x in 0..xc {
            let node = w * xc + x;
            for s in 0..mc {
                let mut stream =
                    Stream::new(cfg.seed, Domain::RefTheta0, s as u32, node as u32, 0);
                zeta.sample_into(&mut stream, &mut theta_a);
                theta_b.copy_from_slice(&theta_a);
                let mut sup: f64 = 0.0;

                let mut record = |k: u64, state: &[f64]| {
                    for (slot, &target) in snap_steps.iter().enumerate() {
                        if target == k {
                            let base = (node * mc + s) * m;
                            snapshots[slot][base..base + m].copy_from_slice(state);
                        }
                    }
                };

                for k in 0..=steps {
                    record(k, &theta_a);
                    if let Some(mb) = feature_means.as_mut() {
                        let sep = model.separable.as_ref().unwrap();
                        sep.eval_b(&theta_a, omega, &mut b_buf);
                        let base = (k as usize) * channels * xc;
                        for ch in 0..channels {
                            mb[base + ch * xc + x] += b_buf[ch] / (wc * mc) as f64;
                        }
                    }
                    if let Some(paths) = literal_paths.as_mut() {
                        let stride = (steps as usize + 1) * m;
                        let base = (node * mc + s) * stride + (k as usize) * m;
                        paths[base..base + m].copy_from_slice(&theta_a);
                    }
                    if k == steps {
                        break;
                    }

                    fill_normals(
                        cfg.seed,
                        Domain::RefStep,
                        s as u32,
                        node as u32,
                        k as u32,
                        &mut noise,
                    );
                    model.sigma_apply(&noise, &mut kick);

                    let mut advance =
                        |theta: &mut [f64], source: &FieldSource, ws: &mut Workspace| {
                            eval_field(source, model, theta, omega, x, k, geom, ws, &mut field);
                            model.drift_into(theta, omega, &mut drift);
                            for c in 0..m {
                                drift[c] += field[c];
                            }
                            let factor = match cfg.scheme {
                                Scheme::EulerMaruyama => dt,
                                Scheme::TamedEuler => dt / (1.0 + dt * norm(&drift)),
                            };
                            for c in 0..m {
                                theta[c] += drift[c] * factor + sqrt_dt * kick[c];
                            }
                        };
                    advance(&mut theta_a, field_new, &mut ws);
                    if let Some(old) = field_old {
                        advance(&mut theta_b, old, &mut ws);
                        let mut d2 = 0.0;
                        for c in 0..m {
                            d2 += (theta_a[c] - theta_b[c]).powi(2);
                        }
                        sup = sup.max(d2.sqrt());
                    }
                }
                if field_old.is_some() {
                    delta_acc[node * blocks + s % blocks] += sup.powf(kappa);
                }
            }
        }
    }

    let delta = field_old.map(|_| {
        let aggregate = |block: Option<usize>| -> f64 {
            let mut acc = 0.0;
            for w in 0..wc {
                for x in 0..xc {
                    let node = w * xc + x;
                    let mean_sup_kappa = match block {
                        Some(b) => {
                            let count = (mc / blocks) + usize::from(b < mc % blocks);
                            delta_acc[node * blocks + b] / count.max(1) as f64
                        }
                        None => {
                            delta_acc[node * blocks..(node + 1) * blocks].iter().sum::<f64>()
                                / mc as f64
                        }
                    };
                    let delta_x = mean_sup_kappa.powf(1.0 / kappa);
                    acc += geom.cells[x].weight / wc as f64 * delta_x.powf(p);
                }
            }
            acc.powf(1.0 / p)
        };
        let full = aggregate(None);
        let block_vals: Vec<f64> = (0..blocks).map(|b| aggregate(Some(b))).collect();
        let mean_b = block_vals.iter().sum::<f64>() / blocks as f64;
        let var =
            block_vals.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / (blocks - 1).max(1) as f64;
        (full, (var / blocks as f64).sqrt())
    });

    PassOutput { snapshots, feature_means, literal_paths, delta }
}

fn make_law(
    model: &ModelSpec,
    grid: &GridSpec,
    nodes: Vec<GridPoint>,
    cells: Vec<XCell>,
    omegas: Vec<f64>,
    cfg: &RefConfig,
    out: PassOutput,
    iteration: u32,
) -> PathLaw {
    PathLaw {
        grid: *grid,
        x_nodes: nodes,
        x_cells: cells,
        omegas,
        state_dim: model.state_dim,
        disorder_dim: model.disorder_dim,
        dt: cfg.resolved_dt(),
        steps: cfg.step_count(),
        times: cfg.sample_times(),
        snapshots: out.snapshots,
        feature_means: out.feature_means,
        literal_paths: out.literal_paths,
        iteration,
        seed: cfg.seed,
    }
}

fn kappa_exponent(model: &ModelSpec) -> f64 {
    model.poly_bound.kappa.max(2.0)
}

/// Disorder draws shared by every iterate.
/// Disorder quadrature nodes.  Point coordinates are exact and Gaussian
/// coordinates stay iid, but Uniform coordinates are stratified with one
/// randomized draw per stratum, strata assigned by an independent shuffle
/// per coordinate (a Latin hypercube).  That keeps the draw unbiased while
/// dropping the uniform-coordinate quadrature error from M^{-1/2} to M^{-1},
/// which would otherwise dominate the reference bias of every rate study.
fn draw_omegas(mu: &Law, grid: &GridSpec, seed: u64, disorder_dim: usize) -> Vec<f64> {
    let samples = grid.omega_samples;
    let strata: Vec<Option<Vec<u32>>> = mu
        .coords
        .iter()
        .enumerate()
        .map(|(c, law)| match law {
            CoordLaw::Uniform { .. } => {
                let mut perm: Vec<u32> = (0..samples as u32).collect();
                let mut stream = Stream::new(seed, Domain::RefOmega, 1, c as u32, 0);
                for i in (1..samples).rev() {
                    let j = (stream.next_uniform() * (i + 1) as f64) as usize;
                    perm.swap(i, j.min(i));
                }
                Some(perm)
            }
            _ => None,
        })
        .collect();
    let mut omegas = vec![0.0; samples * disorder_dim];
    for w in 0..samples {
        let mut stream = Stream::new(seed, Domain::RefOmega, 0, w as u32, 0);
        let out = &mut omegas[w * disorder_dim..(w + 1) * disorder_dim];
        for (c, law) in mu.coords.iter().enumerate() {
            out[c] = match (law, &strata[c]) {
                (CoordLaw::Uniform { lo, hi }, Some(perm)) => {
                    let u = (perm[w] as f64 + stream.next_uniform()) / samples as f64;
                    lo + (hi - lo) * u
                }
                (CoordLaw::Point(v), _) => *v,
                (CoordLaw::Gaussian { mean, std }, _) => mean + std * stream.next_normal(),
                (CoordLaw::Uniform { lo, hi }, None) => stream.next_range(*lo, *hi),
            };
        }
    }
    omegas
}

fn field_source<'a>(law: &'a PathLaw, h: Option<&'a [f64]>, sub: usize) -> FieldSource<'a> {
    match (h, law.literal_paths.as_ref()) {
        (Some(table), _) => FieldSource::Table(table),
        (None, Some(paths)) => FieldSource::Literal { paths, law, sub },
        (None, None) => FieldSource::Zero,
    }
}

fn check_supported(model: &ModelSpec, kernel: &WeightKernel) -> Result<(), MfError> {
    if kernel.dim != 1 {
        return Err(MfError::Unsupported("path laws are implemented for d = 1".into()));
    }
    let _ = model;
    Ok(())
}

/// The decoupled law m^(0): Γ switched off, paths driven by drift and noise
/// only.
pub fn decoupled_law(
    model: &ModelSpec,
    kernel: &WeightKernel,
    mu: &Law,
    zeta: &Law,
    grid: &GridSpec,
    cfg: &RefConfig,
) -> Result<PathLaw, MfError> {
    check_supported(model, kernel)?;
    let (nodes, cells) = x_grid(grid.k_ref, grid.boundary);
    let geom = build_geometry(kernel, &cells, grid.boundary);
    let omegas = draw_omegas(mu, grid, cfg.seed, model.disorder_dim);
    let out = run_pass(
        model,
        &geom,
        grid,
        &omegas,
        zeta,
        cfg,
        &FieldSource::Zero,
        None,
        kappa_exponent(model),
        2.0,
    );
    Ok(make_law(model, grid, nodes, cells, omegas, cfg, out, 0))
}

/// One application of Θ: simulates fresh bundles against the frozen measure
/// `current`.  Node labels (ω draws, x nodes) and noise keys carry over.
pub fn theta_map(
    current: &PathLaw,
    model: &ModelSpec,
    kernel: &WeightKernel,
    zeta: &Law,
    cfg: &RefConfig,
) -> Result<PathLaw, MfError> {
    check_supported(model, kernel)?;
    let geom = build_geometry(kernel, &current.x_cells, current.grid.boundary);
    let channels = model.separable.as_ref().map_or(0, |s| s.n_terms) * model.state_dim;
    let h = current.feature_means.as_ref().map(|_| field_table(current, &geom, channels));
    let source = field_source(current, h.as_deref(), cfg.field_subsample);
    let out = run_pass(
        model,
        &geom,
        &current.grid,
        &current.omegas,
        zeta,
        cfg,
        &source,
        None,
        kappa_exponent(model),
        2.0,
    );
    Ok(make_law(
        model,
        &current.grid,
        current.x_nodes.clone(),
        current.x_cells.clone(),
        current.omegas.clone(),
        cfg,
        out,
        current.iteration + 1,
    ))
}

/// Picard iteration m^(k+1) = Θ(m^(k)) from the decoupled start, reporting
/// the synchronous-coupling contraction proxies δ̂_T(m^(k+1), m^(k)).
#[allow(clippy::too_many_arguments)]
pub fn picard_solve(
    model: &ModelSpec,
    kernel: &WeightKernel,
    mu: &Law,
    zeta: &Law,
    grid: &GridSpec,
    cfg: &RefConfig,
    tol: f64,
    max_iter: u32,
) -> Result<(PathLaw, PicardReport), MfError> {
    check_supported(model, kernel)?;
    assert!(tol > 0.0);
    let kappa = kappa_exponent(model);
    let p = kernel.p as f64;
    let (nodes, cells) = x_grid(grid.k_ref, grid.boundary);
    let geom = build_geometry(kernel, &cells, grid.boundary);
    let omegas = draw_omegas(mu, grid, cfg.seed, model.disorder_dim);
    let channels = model.separable.as_ref().map_or(0, |s| s.n_terms) * model.state_dim;

    let mut prev = {
        let out = run_pass(
            model, &geom, grid, &omegas, zeta, cfg, &FieldSource::Zero, None, kappa, p,
        );
        make_law(model, grid, nodes.clone(), cells.clone(), omegas.clone(), cfg, out, 0)
    };
    // H table of the iterate before `prev` (zero field for m^(0)).
    let mut h_before: Option<Vec<f64>> = None;

    let mut deltas = Vec::new();
    let mut stderrs = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        let h_cur = prev.feature_means.as_ref().map(|_| field_table(&prev, &geom, channels));
        let source_new = field_source(&prev, h_cur.as_deref(), cfg.field_subsample);
        // Re-simulate the previous iterate under the same noise for δ̂.
        let source_old = match (&h_before, prev.iteration) {
            (_, 0) => FieldSource::Zero,
            (Some(h), _) => FieldSource::Table(h),
            (None, _) => FieldSource::Zero,
        };
        let out = run_pass(
            model,
            &geom,
            grid,
            &omegas,
            zeta,
            cfg,
            &source_new,
            Some(&source_old),
            kappa,
            p,
        );
        let (delta, stderr) = out.delta.unwrap();
        deltas.push(delta);
        stderrs.push(stderr);
        let next = make_law(
            model,
            grid,
            nodes.clone(),
            cells.clone(),
            omegas.clone(),
            cfg,
            out,
            iter + 1,
        );
        h_before = h_cur;
        prev = next;
        iterations = iter + 1;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok((prev, PicardReport { deltas, stderrs, converged, iterations, kappa, p }))
}

/// Synchronous-coupling path distance between two compatible laws:
/// per node (1/M Σ_s sup_t ‖Δ‖^κ)^{1/κ}, aggregated in L^p over node
/// weights.  `pairing` permutes the sample pairing (identity = synchronous).
pub fn coupled_path_distance(
    law_a: &PathLaw,
    law_b: &PathLaw,
    kappa: f64,
    p: f64,
    pairing: Option<&[usize]>,
) -> Result<f64, MfError> {
    law_a.compatible(law_b)?;
    let xc = law_a.x_count();
    let wc = law_a.grid.omega_samples;
    let mc = law_a.grid.path_samples;
    let m = law_a.state_dim;
    if let Some(perm) = pairing {
        if perm.len() != mc {
            return Err(MfError::Mismatch("pairing length != sample count".into()));
        }
    }
    let mut acc = 0.0;
    for x in 0..xc {
        let weight = law_a.x_cells[x].weight;
        for w in 0..wc {
            let mut mean = 0.0;
            for s in 0..mc {
                let s_b = pairing.map_or(s, |perm| perm[s]);
                let mut sup: f64 = 0.0;
                for t_idx in 0..law_a.times.len() {
                    let a = law_a.state(t_idx, w, x, s);
                    let b = law_b.state(t_idx, w, x, s_b);
                    let mut d2 = 0.0;
                    for c in 0..m {
                        d2 += (a[c] - b[c]).powi(2);
                    }
                    sup = sup.max(d2.sqrt());
                }
                mean += sup.powf(kappa);
            }
            let delta_x = (mean / mc as f64).powf(1.0 / kappa);
            acc += weight / wc as f64 * delta_x.powf(p);
        }
    }
    Ok(acc.powf(1.0 / p))
}

#[derive(Clone, Debug)]
pub struct ProbePair {
    pub theta_a: Vec<f64>,
    pub omega_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub omega_b: Vec<f64>,
    pub x_index: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub max_quotient: f64,
    pub pairs: usize,
    pub c_constant: f64,
    pub pass: bool,
}

/// Gronwall probe for the frozen mean-field flow: paired initial data are
/// driven through Φ_t^T under shared noise and the observed quotient
///
/// ```text
/// (‖ΔΦ(u)‖² + ‖Δω‖²) / ( e^{C (u − t)} (‖Δθ(t)‖² + ‖Δω‖²) ),
/// C = 2L + 3 ‖Γ‖_Lip S(Ψ)
/// ```
///
/// is maximized over pairs and intermediate times; PASS when <= 1.05.
pub fn propagator_lipschitz_probe(
    model: &ModelSpec,
    kernel: &WeightKernel,
    law: &PathLaw,
    pairs: &[ProbePair],
    t_start: f64,
    cfg: &RefConfig,
) -> Result<ProbeReport, MfError> {
    check_supported(model, kernel)?;
    let geom = build_geometry(kernel, &law.x_cells, law.grid.boundary);
    let channels = model.separable.as_ref().map_or(0, |s| s.n_terms) * model.state_dim;
    let h = law.feature_means.as_ref().map(|_| field_table(law, &geom, channels));
    let source = field_source(law, h.as_deref(), cfg.field_subsample);

    let s_psi = geom.row_sum.iter().copied().fold(0.0, f64::max);
    let c_const = 2.0 * model.one_sided_l + 3.0 * model.gamma_lip * s_psi;

    let m = model.state_dim;
    let dt = cfg.resolved_dt();
    let steps = cfg.step_count();
    let k_start = (t_start / dt).round() as u64;
    if ((k_start as f64 * dt) - t_start).abs() > 1e-9 {
        return Err(MfError::OffGrid(t_start));
    }
    let mut ws = Workspace { a_buf: vec![0.0; channels.max(1)], gamma: vec![0.0; m] };
    let mut noise = vec![0.0; m];
    let mut kick = vec![0.0; m];
    let mut field = vec![0.0; m];
    let mut drift = vec![0.0; m];
    let mut max_quotient: f64 = 0.0;

    for (pi, pair) in pairs.iter().enumerate() {
        let mut th_a = pair.theta_a.clone();
        let mut th_b = pair.theta_b.clone();
        let d_omega2: f64 =
            pair.omega_a.iter().zip(&pair.omega_b).map(|(a, b)| (a - b).powi(2)).sum();
        let d_theta0: f64 =
            pair.theta_a.iter().zip(&pair.theta_b).map(|(a, b)| (a - b).powi(2)).sum();
        let denom0 = d_theta0 + d_omega2;
        if denom0 == 0.0 {
            continue;
        }
        let mut advance = |theta: &mut [f64], omega: &[f64], k: u64, kick: &[f64]| {
            eval_field(&source, model, theta, omega, pair.x_index, k, &geom, &mut ws, &mut field);
            model.drift_into(theta, omega, &mut drift);
            let factor = match cfg.scheme {
                Scheme::EulerMaruyama => dt,
                Scheme::TamedEuler => {
                    let mut total = 0.0;
                    for c in 0..m {
                        total += (drift[c] + field[c]).powi(2);
                    }
                    dt / (1.0 + dt * total.sqrt())
                }
            };
            for c in 0..m {
                theta[c] += (drift[c] + field[c]) * factor + dt.sqrt() * kick[c];
            }
        };
        for k in k_start..steps {
            fill_normals(cfg.seed, Domain::PropagatorProbe, pi as u32, 0, k as u32, &mut noise);
            model.sigma_apply(&noise, &mut kick);
            let kick_c = kick.clone();
            advance(&mut th_a, &pair.omega_a, k, &kick_c);
            advance(&mut th_b, &pair.omega_b, k, &kick_c);
            let elapsed = (k + 1 - k_start) as f64 * dt;
            let mut d2 = d_omega2;
            for c in 0..m {
                d2 += (th_a[c] - th_b[c]).powi(2);
            }
            let quotient = d2 / ((c_const * elapsed).exp() * denom0);
            max_quotient = max_quotient.max(quotient);
        }
    }
    Ok(ProbeReport {
        max_quotient,
        pairs: pairs.len(),
        c_constant: c_const,
        pass: max_quotient <= 1.05,
    })
}
