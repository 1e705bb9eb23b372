//! Lattice geometry and interaction weights.
//!
//! Sites live on Λ_N = ⟦−N..N⟧^d with renormalized positions x_j = j/(2N) in
//! [−1/2, 1/2]^d.  With periodic boundary the endpoints −N and N are
//! identified, so the axis holds 2N distinct sites and displacements use the
//! minimal image on the unit torus.
//!
//! Two weight families:
//!
//! ```text
//! P-nearest neighbour   Ψ(x, y) = (2R)^{-d} 1_{[-R,R]^d}(x − y),   0 < R <= 1
//! power law             Ψ(x, y) = ‖x − y‖^{-α} ψ(x, y),            0 <= α < d
//! ```
//!
//! and the derived exponents used by the distance machinery:
//! γ = max(α, d/2 − ε) for α < d/2 and d/2 otherwise; p = 2 for α < d/2 and
//! otherwise the smallest integer strictly greater than d/(d − α), which keeps
//! q α < d for the conjugate exponent q.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular weight evaluation at coincident points")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Free,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeConfig {
    pub dim: usize,
    pub half_width: usize,
    pub boundary: Boundary,
}

impl LatticeConfig {
    pub fn new(dim: usize, half_width: usize, boundary: Boundary) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::InvalidParameter("dim must be >= 1".into()));
        }
        if boundary == Boundary::Periodic && half_width == 0 {
            return Err(LatticeError::InvalidParameter("periodic lattice needs N >= 1".into()));
        }
        Ok(LatticeConfig { dim, half_width, boundary })
    }

    /// Number of distinct index values per axis.
    pub fn axis_len(&self) -> usize {
        let n = self.half_width;
        match self.boundary {
            Boundary::Free => 2 * n + 1,
            Boundary::Periodic => 2 * n,
        }
    }

    /// Smallest index on an axis.
    fn axis_origin(&self) -> i64 {
        -(self.half_width as i64)
    }

    pub fn site_count(&self) -> usize {
        self.axis_len().pow(self.dim as u32)
    }

    /// Index vector of the site with the given flat index (row-major over
    /// axes, coordinates ascending from −N).
    pub fn coords(&self, flat: usize) -> Vec<i64> {
        let len = self.axis_len();
        let mut rem = flat;
        let mut out = vec![0i64; self.dim];
        for c in (0..self.dim).rev() {
            out[c] = self.axis_origin() + (rem % len) as i64;
            rem /= len;
        }
        out
    }

    pub fn flat_index(&self, coords: &[i64]) -> usize {
        let len = self.axis_len();
        let mut flat = 0usize;
        for &j in coords {
            let off = (j - self.axis_origin()) as usize;
            debug_assert!(off < len);
            flat = flat * len + off;
        }
        flat
    }

    /// Renormalized position x_j = j/(2N); the degenerate N = 0 lattice has a
    /// single site at the origin.
    pub fn position_into(&self, flat: usize, out: &mut [f64]) {
        let scale = if self.half_width == 0 { 0.0 } else { 1.0 / (2.0 * self.half_width as f64) };
        let len = self.axis_len();
        let mut rem = flat;
        for c in (0..self.dim).rev() {
            let j = self.axis_origin() + (rem % len) as i64;
            rem /= len;
            out[c] = j as f64 * scale;
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.site_count() * d];
        for i in 0..self.site_count() {
            let (lo, hi) = (i * d, (i + 1) * d);
            self.position_into(i, &mut out[lo..hi]);
        }
        out
    }

    /// Componentwise index displacement i − j, wrapped to the minimal image
    /// for periodic boundaries (in units of 1/(2N)).
    pub fn displacement_units(&self, i: usize, j: usize, out: &mut [i64]) {
        let ci = self.coords(i);
        let cj = self.coords(j);
        let period = 2 * self.half_width as i64;
        for c in 0..self.dim {
            let mut du = ci[c] - cj[c];
            if self.boundary == Boundary::Periodic {
                du = du.rem_euclid(period);
                if du >= period / 2 {
                    du -= period;
                }
            }
            out[c] = du;
        }
    }
}

/// Dyadic-style anchor a = l/(2K) with exact integer bookkeeping, so that
/// coincidence with lattice sites is decided without floating comparisons:
/// l/(2K) = j/(2N)  iff  l N = j K.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridPoint {
    pub indices: Vec<i64>,
    pub level: u32,
}

impl GridPoint {
    pub fn new(indices: Vec<i64>, level: u32) -> Result<Self, LatticeError> {
        if level == 0 {
            return Err(LatticeError::InvalidParameter("grid level must be >= 1".into()));
        }
        if indices.iter().any(|&l| l.unsigned_abs() > level as u64) {
            return Err(LatticeError::InvalidParameter("grid index outside [-K, K]".into()));
        }
        Ok(GridPoint { indices, level })
    }

    pub fn position(&self) -> Vec<f64> {
        let s = 1.0 / (2.0 * self.level as f64);
        self.indices.iter().map(|&l| l as f64 * s).collect()
    }

    /// Flat index of the coinciding lattice site, if any.
    pub fn lattice_site(&self, lattice: &LatticeConfig) -> Option<usize> {
        let n = lattice.half_width as i64;
        let k = self.level as i64;
        if n == 0 {
            return if self.indices.iter().all(|&l| l == 0) { Some(0) } else { None };
        }
        let mut coords = Vec::with_capacity(self.indices.len());
        for &l in &self.indices {
            if (l * n) % k != 0 {
                return None;
            }
            let j = l * n / k;
            let in_range = match lattice.boundary {
                Boundary::Free => (-n..=n).contains(&j),
                Boundary::Periodic => (-n..n).contains(&j),
            };
            if !in_range {
                return None;
            }
            coords.push(j);
        }
        Some(lattice.flat_index(&coords))
    }

    /// All points of D_K in dimension `dim` (2K+1 per axis).
    pub fn full_grid(level: u32, dim: usize) -> Vec<GridPoint> {
        let k = level as i64;
        let mut out = Vec::new();
        let per_axis: Vec<i64> = (-k..=k).collect();
        let mut idx = vec![0usize; dim];
        loop {
            out.push(GridPoint { indices: idx.iter().map(|&i| per_axis[i]).collect(), level });
            let mut c = dim;
            loop {
                if c == 0 {
                    return out;
                }
                c -= 1;
                idx[c] += 1;
                if idx[c] < per_axis.len() {
                    break;
                }
                idx[c] = 0;
            }
        }
    }
}

/// γ = max(α, d/2 − ε) when α < d/2, and d/2 otherwise.
pub fn choose_gamma(alpha: f64, dim: usize, epsilon: f64) -> Result<f64, LatticeError> {
    let d = dim as f64;
    if !(0.0..d).contains(&alpha) {
        return Err(LatticeError::InvalidParameter(format!("alpha {alpha} outside [0, d)")));
    }
    if !(epsilon > 0.0 && epsilon < d / 2.0) {
        return Err(LatticeError::InvalidParameter(format!("epsilon {epsilon} outside (0, d/2)")));
    }
    Ok(if alpha < d / 2.0 { alpha.max(d / 2.0 - epsilon) } else { d / 2.0 })
}

/// p = 2 for α < d/2; otherwise the smallest integer strictly greater than
/// d/(d − α).  The conjugate exponent then satisfies q α < d.
pub fn choose_p(alpha: f64, dim: usize) -> Result<u32, LatticeError> {
    let d = dim as f64;
    if !(0.0..d).contains(&alpha) {
        return Err(LatticeError::InvalidParameter(format!("alpha {alpha} outside [0, d)")));
    }
    if alpha < d / 2.0 {
        return Ok(2);
    }
    let x = d / (d - alpha);
    let nearest = x.round();
    let p = if (x - nearest).abs() < 1e-9 {
        // x is (numerically) an integer; "strictly greater" bumps it by one.
        nearest as u32 + 1
    } else {
        x.ceil() as u32
    };
    debug_assert!(p as f64 > x);
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Modifier {
    /// ψ(x, y) = 1 + amp Π_c cos(π (x_c + y_c)), bounded and Lipschitz but
    /// not translation invariant, so it forces the direct field engine.
    Cosine { amp: f64 },
}

impl Modifier {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Modifier::Cosine { amp } => {
                let mut prod = 1.0;
                for (a, b) in x.iter().zip(y) {
                    prod *= (std::f64::consts::PI * (a + b)).cos();
                }
                1.0 + amp * prod
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum KernelKind {
    PNearest { r: f64 },
    PowerLaw { alpha: f64, modifier: Option<Modifier> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightKernel {
    pub kind: KernelKind,
    pub dim: usize,
    pub gamma: f64,
    pub p: u32,
    pub q: f64,
    pub epsilon_gamma: f64,
}

pub const DEFAULT_EPSILON_GAMMA: f64 = 0.01;

impl WeightKernel {
    pub fn p_nearest(dim: usize, r: f64) -> Result<Self, LatticeError> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(LatticeError::InvalidParameter(format!("R {r} outside (0, 1]")));
        }
        Ok(WeightKernel {
            kind: KernelKind::PNearest { r },
            dim,
            gamma: dim as f64 / 2.0,
            p: 2,
            q: 2.0,
            epsilon_gamma: DEFAULT_EPSILON_GAMMA,
        })
    }

    pub fn power_law(dim: usize, alpha: f64) -> Result<Self, LatticeError> {
        Self::power_law_with(dim, alpha, DEFAULT_EPSILON_GAMMA, None)
    }

    pub fn power_law_with(
        dim: usize,
        alpha: f64,
        epsilon_gamma: f64,
        modifier: Option<Modifier>,
    ) -> Result<Self, LatticeError> {
        let gamma = choose_gamma(alpha, dim, epsilon_gamma)?;
        let p = choose_p(alpha, dim)?;
        let q = p as f64 / (p as f64 - 1.0);
        debug_assert!(q * alpha < dim as f64);
        Ok(WeightKernel {
            kind: KernelKind::PowerLaw { alpha, modifier },
            dim,
            gamma,
            p,
            q,
            epsilon_gamma,
        })
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            KernelKind::PowerLaw { alpha, .. } => Some(alpha),
            KernelKind::PNearest { .. } => None,
        }
    }

    /// Translation-invariant kernels can be evaluated from the displacement
    /// alone, which is what the convolution engine requires.
    pub fn is_translation_invariant(&self) -> bool {
        match &self.kind {
            KernelKind::PNearest { .. } => true,
            KernelKind::PowerLaw { modifier, .. } => modifier.is_none(),
        }
    }

    /// φ(δ) for a displacement vector; self-interaction (δ = 0) is singular
    /// for α > 0 and excluded by every field engine regardless.
    pub fn phi(&self, delta: &[f64]) -> Result<f64, LatticeError> {
        match &self.kind {
            KernelKind::PNearest { r } => {
                let inside = delta.iter().all(|&dc| dc.abs() <= *r);
                Ok(if inside { (2.0 * r).powi(-(self.dim as i32)) } else { 0.0 })
            }
            KernelKind::PowerLaw { alpha, .. } => {
                let r2: f64 = delta.iter().map(|&dc| dc * dc).sum();
                if r2 == 0.0 {
                    if *alpha > 0.0 {
                        return Err(LatticeError::Singular);
                    }
                    return Ok(1.0);
                }
                Ok(r2.sqrt().powf(-alpha))
            }
        }
    }
}

/// Componentwise displacement y → x with periodic minimal image.
pub fn displacement(x: &[f64], y: &[f64], boundary: Boundary, out: &mut [f64]) {
    for c in 0..x.len() {
        let mut dc = x[c] - y[c];
        if boundary == Boundary::Periodic {
            dc -= dc.round();
        }
        out[c] = dc;
    }
}

/// Ψ(x, y) with boundary-aware displacement and optional modifier.
pub fn weight_eval(kernel: &WeightKernel, x: &[f64], y: &[f64], boundary: Boundary) -> Result<f64, LatticeError> {
    let mut delta = [0.0; 8];
    if x.len() > 8 {
        return Err(LatticeError::InvalidParameter("dim > 8 unsupported".into()));
    }
    displacement(x, y, boundary, &mut delta[..x.len()]);
    let base = kernel.phi(&delta[..x.len()])?;
    let modif = match &kernel.kind {
        KernelKind::PowerLaw { modifier: Some(m), .. } => m.eval(x, y),
        _ => 1.0,
    };
    Ok(base * modif)
}

// ---------------------------------------------------------------------------
// Closed-form cell integrals on [−1/2, 1/2] used by the quadrature layers.

/// ∫_lo^hi |u − x|^{−α} du for α < 1, valid whether or not x lies inside.
pub fn power_cell_integral(x: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    debug_assert!(alpha < 1.0);
    let g = |u: f64| {
        let t = u - x;
        t.signum() * t.abs().powf(1.0 - alpha) / (1.0 - alpha)
    };
    g(hi) - g(lo)
}

/// ∫_lo^hi (2R)^{−1} 1_{|u − x| <= R} du.
pub fn chi_cell_integral(x: f64, lo: f64, hi: f64, r: f64) -> f64 {
    let a = (x - r).max(lo);
    let b = (x + r).min(hi);
    (b - a).max(0.0) / (2.0 * r)
}

/// Coverage integral 𝓘(a) = ∫ (2R)^{−d} 1_{‖x − a‖_∞ <= R} dx over the unit
/// box, i.e. the product over axes of the clipped overlap.
pub fn box_coverage(a: &[f64], r: f64) -> f64 {
    let mut prod = 1.0;
    for &ac in a {
        prod *= chi_cell_integral(ac, -0.5, 0.5, r);
    }
    prod
}

/// Splits the displacement interval x − [lo, hi] into minimal-image pieces on
/// the unit torus and applies `piece` to each.
fn torus_pieces(x: f64, lo: f64, hi: f64, piece: &mut impl FnMut(f64, f64)) {
    debug_assert!(hi - lo <= 1.0 + 1e-12);
    let (a, b) = (x - hi, x - lo);
    let shift = (a + 0.5).div_euclid(1.0);
    let (a, b) = (a - shift, b - shift);
    if b <= 0.5 {
        piece(a, b);
    } else {
        piece(a, 0.5);
        piece(-0.5, b - 1.0);
    }
}

/// ∫_lo^hi d(x, u)^{−α} du with d the torus distance, α < 1.
pub fn torus_power_cell_integral(x: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    let mut acc = 0.0;
    torus_pieces(x, lo, hi, &mut |a, b| acc += power_cell_integral(0.0, a, b, alpha));
    acc
}

/// ∫_lo^hi (2R)^{−1} 1_{d(x, u) <= R} du with d the torus distance; for
/// R >= 1/2 the indicator is identically 1 but the (2R)^{−1} weight stays.
pub fn torus_chi_cell_integral(x: f64, lo: f64, hi: f64, r: f64) -> f64 {
    let clip = r.min(0.5);
    let mut acc = 0.0;
    torus_pieces(x, lo, hi, &mut |a, b| {
        acc += ((b.min(clip) - a.max(-clip)).max(0.0)) / (2.0 * r);
    });
    acc
}

// ---------------------------------------------------------------------------
// Kernel constants.

#[derive(Clone, Debug)]
pub struct KernelConstants {
    /// S(Ψ) = sup_x ∫ Ψ(x, x̄) dx̄.
    pub s_psi: f64,
    /// sup ‖x − y‖^α Ψ(x, y); exactly 1 for a pure power law.
    pub i1: f64,
    /// sup_{x≠y} ∫ |Ψ(x, ·) − Ψ(y, ·)| / ‖x − y‖^{(d−α)∧1}.
    pub i2: f64,
    /// sup over anchors of the ‖·‖^{2γ}-weighted Hölder quotient.
    pub i3: f64,
    pub grid_resolution: usize,
}

/// ∫ Ψ(x, x̄) dx̄ over the unit box; exact for pure d = 1 kernels, cell
/// quadrature with singular-cell refinement otherwise.
pub fn int_psi(kernel: &WeightKernel, x: &[f64]) -> f64 {
    match (&kernel.kind, kernel.dim) {
        (KernelKind::PNearest { r }, _) => box_coverage(x, *r),
        (KernelKind::PowerLaw { alpha, modifier: None }, 1) => power_cell_integral(x[0], -0.5, 0.5, *alpha),
        (KernelKind::PowerLaw { alpha, modifier }, 1) => {
            // Exact radial factor per cell, modifier frozen at cell midpoints.
            let g = 512;
            let h = 1.0 / g as f64;
            let mut acc = 0.0;
            for c in 0..g {
                let lo = -0.5 + c as f64 * h;
                let mid = lo + h / 2.0;
                let m = modifier.as_ref().map_or(1.0, |m| m.eval(x, &[mid]));
                acc += power_cell_integral(x[0], lo, lo + h, *alpha) * m;
            }
            acc
        }
        (KernelKind::PowerLaw { alpha, modifier }, 2) => {
            let g = 96;
            let h = 1.0 / g as f64;
            let mut acc = 0.0;
            for cx in 0..g {
                for cy in 0..g {
                    let mx = -0.5 + (cx as f64 + 0.5) * h;
                    let my = -0.5 + (cy as f64 + 0.5) * h;
                    let contains = (mx - x[0]).abs() <= h / 2.0 && (my - x[1]).abs() <= h / 2.0;
                    if !contains {
                        let r = ((mx - x[0]).powi(2) + (my - x[1]).powi(2)).sqrt();
                        let m = modifier.as_ref().map_or(1.0, |m| m.eval(x, &[mx, my]));
                        acc += r.powf(-alpha) * m * h * h;
                    } else {
                        // Singular cell: exact integral over the inscribed
                        // disc plus midpoint estimates on the corners.
                        let rho = h / 2.0;
                        let disc = std::f64::consts::TAU * rho.powf(2.0 - alpha) / (2.0 - alpha);
                        let corner_area = h * h - std::f64::consts::PI * rho * rho;
                        let corner_r = rho * 1.2;
                        let m = modifier.as_ref().map_or(1.0, |m| m.eval(x, &[mx, my]));
                        acc += (disc + corner_area * corner_r.powf(-alpha)) * m;
                    }
                }
            }
            acc
        }
        _ => unimplemented!("kernel constants implemented for d <= 2"),
    }
}

/// Grid estimates of the weight-kernel constants.  These are suprema over
/// finite probe sets, hence lower bounds, tight for the pure d = 1 kernels
/// where the inner integrals are exact.
pub fn kernel_constants(kernel: &WeightKernel, grid_resolution: usize) -> KernelConstants {
    let g = grid_resolution.max(8);
    let d = kernel.dim;
    assert!(d <= 2, "kernel constants implemented for d <= 2");

    let axis: Vec<f64> = (0..=g).map(|i| -0.5 + i as f64 / g as f64).collect();
    let probes: Vec<Vec<f64>> = if d == 1 {
        axis.iter().map(|&x| vec![x]).collect()
    } else {
        let coarse: Vec<f64> = (0..=24).map(|i| -0.5 + i as f64 / 24.0).collect();
        let mut v = Vec::new();
        for &x in &coarse {
            for &y in &coarse {
                v.push(vec![x, y]);
            }
        }
        v
    };

    let s_psi = probes.iter().map(|x| int_psi(kernel, x)).fold(f64::NEG_INFINITY, f64::max);

    let (alpha, pure_power) = match &kernel.kind {
        KernelKind::PowerLaw { alpha, modifier } => (*alpha, modifier.is_none()),
        KernelKind::PNearest { .. } => (0.0, false),
    };

    // I1: sup r^α Ψ.
    let i1 = if pure_power {
        1.0
    } else {
        let mut sup: f64 = 0.0;
        for (ia, xa) in probes.iter().enumerate() {
            for xb in probes.iter().skip(ia + 1) {
                let r: f64 = xa.iter().zip(xb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if r > 0.0 {
                    if let Ok(w) = weight_eval(kernel, xa, xb, Boundary::Free) {
                        sup = sup.max(r.powf(alpha) * w);
                    }
                }
            }
        }
        sup
    };

    // I2: sup over pairs of the integrated difference quotient.
    let hexp = (d as f64 - alpha).min(1.0);
    let pair_axis: Vec<f64> = (0..=48).map(|i| -0.5 + i as f64 / 48.0).collect();
    let mut i2: f64 = 0.0;
    if d == 1 {
        for (ia, &xa) in pair_axis.iter().enumerate() {
            for &xb in pair_axis.iter().skip(ia + 1) {
                let dist = (xa - xb).abs();
                let integral = match &kernel.kind {
                    KernelKind::PNearest { r } => {
                        // (2R)^{-1} | box(xa) Δ box(xb) ∩ domain |
                        let seg = |x: f64| ((x + r).min(0.5) - (x - r).max(-0.5)).max(0.0);
                        let inter = {
                            let lo = (xa - r).max(xb - r).max(-0.5);
                            let hi = (xa + r).min(xb + r).min(0.5);
                            (hi - lo).max(0.0)
                        };
                        (seg(xa) + seg(xb) - 2.0 * inter) / (2.0 * r)
                    }
                    KernelKind::PowerLaw { alpha, .. } => {
                        // Sign split at the midpoint where the two radial
                        // profiles cross; each piece integrates exactly.
                        let (lo, hi) = if xa < xb { (xa, xb) } else { (xb, xa) };
                        let mid = 0.5 * (lo + hi);
                        let part = |c: f64, a: f64, b: f64| power_cell_integral(c, a, b, *alpha);
                        ((part(lo, -0.5, mid) - part(hi, -0.5, mid)) + (part(hi, mid, 0.5) - part(lo, mid, 0.5))).abs()
                    }
                };
                i2 = i2.max(integral / dist.powf(hexp));
            }
        }
    } else {
        for (ia, xa) in probes.iter().enumerate().step_by(3) {
            for xb in probes.iter().skip(ia + 1).step_by(3) {
                let dist: f64 = xa.iter().zip(xb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if dist < 1e-12 {
                    continue;
                }
                let shifted: Vec<f64> = xa.clone();
                let mut integral = 0.0;
                let gg = 24;
                let h = 1.0 / gg as f64;
                for cx in 0..gg {
                    for cy in 0..gg {
                        let u = [-0.5 + (cx as f64 + 0.5) * h, -0.5 + (cy as f64 + 0.5) * h];
                        let wa = weight_eval(kernel, &shifted, &u, Boundary::Free).unwrap_or(0.0);
                        let wb = weight_eval(kernel, xb, &u, Boundary::Free).unwrap_or(0.0);
                        integral += (wa - wb).abs() * h * h;
                    }
                }
                i2 = i2.max(integral / dist.powf(hexp));
            }
        }
    }

    // I3: pointwise weighted Hölder quotient over (anchor, x, y) triples.
    let two_gamma = 2.0 * kernel.gamma;
    let hexp3 = (two_gamma - alpha).min(1.0);
    let mut i3: f64 = 0.0;
    let tri_axis: Vec<f64> = (0..=40).map(|i| -0.5 + i as f64 / 40.0).collect();
    if d == 1 {
        for &a in &tri_axis {
            for &x in &tri_axis {
                for &y in &tri_axis {
                    if (x - y).abs() < 1e-12 {
                        continue;
                    }
                    let wx = if (x - a).abs() == 0.0 {
                        0.0
                    } else {
                        (x - a).abs().powf(two_gamma) * weight_eval(kernel, &[x], &[a], Boundary::Free).unwrap_or(0.0)
                    };
                    let wy = if (y - a).abs() == 0.0 {
                        0.0
                    } else {
                        (y - a).abs().powf(two_gamma) * weight_eval(kernel, &[y], &[a], Boundary::Free).unwrap_or(0.0)
                    };
                    i3 = i3.max((wx - wy).abs() / (x - y).abs().powf(hexp3));
                }
            }
        }
    } else {
        for t in 0..200_000u32 {
            let (u1, u2) = crate::rng::uniforms2(0xC0FFEE, crate::rng::Domain::Scratch, 0, t, 0, 0);
            let (u3, u4) = crate::rng::uniforms2(0xC0FFEE, crate::rng::Domain::Scratch, 0, t, 0, 1);
            let (u5, u6) = crate::rng::uniforms2(0xC0FFEE, crate::rng::Domain::Scratch, 0, t, 0, 2);
            let a = [u1 - 0.5, u2 - 0.5];
            let x = [u3 - 0.5, u4 - 0.5];
            let y = [u5 - 0.5, u6 - 0.5];
            let dist: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            if dist < 1e-9 {
                continue;
            }
            let rad = |p: &[f64]| p.iter().zip(&a).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt();
            let wx = rad(&x).powf(two_gamma) * weight_eval(kernel, &x, &a, Boundary::Free).unwrap_or(0.0);
            let wy = rad(&y).powf(two_gamma) * weight_eval(kernel, &y, &a, Boundary::Free).unwrap_or(0.0);
            i3 = i3.max((wx - wy).abs() / dist.powf(hexp3));
        }
    }

    KernelConstants { s_psi, i1, i2, i3, grid_resolution: g }
}

// ---------------------------------------------------------------------------
// Discrete Riesz sums.

/// Direct sum Σ_{j : x_j ≠ a} ‖j/(2N) − a‖^{−β} over the lattice, with the
/// coincident site (decided exactly in integers) excluded.
pub fn lattice_sum(beta: f64, a: &GridPoint, config: &LatticeConfig) -> Result<f64, LatticeError> {
    if a.indices.len() != config.dim {
        return Err(LatticeError::InvalidParameter("anchor dimension mismatch".into()));
    }
    if beta < 0.0 {
        return Err(LatticeError::InvalidParameter("beta must be >= 0".into()));
    }
    let n = config.half_width as i64;
    let k = a.level as i64;
    if n == 0 {
        return Ok(0.0);
    }
    let scale = 1.0 / (2.0 * n as f64 * k as f64);
    let period_units = 2 * n * k; // one torus circumference in 1/(2NK) units
    let mut acc = 0.0;
    let len = config.axis_len();
    let origin = config.axis_origin();
    let mut coords = vec![0i64; config.dim];
    let site_count = config.site_count();
    for flat in 0..site_count {
        let mut rem = flat;
        for c in (0..config.dim).rev() {
            coords[c] = origin + (rem % len) as i64;
            rem /= len;
        }
        let mut r2 = 0.0f64;
        let mut coincide = true;
        for c in 0..config.dim {
            let mut num = coords[c] * k - a.indices[c] * n; // displacement in 1/(2NK) units
            if config.boundary == Boundary::Periodic {
                num = num.rem_euclid(period_units);
                if num >= period_units / 2 {
                    num -= period_units;
                }
            }
            if num != 0 {
                coincide = false;
            }
            let dc = num as f64 * scale;
            r2 += dc * dc;
        }
        if coincide {
            continue;
        }
        acc += r2.sqrt().powf(-beta);
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct ScalingRow {
    pub n: usize,
    pub sum: f64,
    pub predicted: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub beta: f64,
    pub dim: usize,
    pub anchor_in_lattice: Vec<bool>,
    pub rows: Vec<ScalingRow>,
    pub max_min_ratio: f64,
    pub pass: bool,
}

/// Predicted growth of the Riesz sums:
///
/// ```text
/// β < d :  N^d          (extra factor K^d   off-lattice anchors)
/// β = d :  N^d ln N     (extra factor K^d)
/// β > d :  N^β          (extra factor K^β)
/// ```
///
/// The check sweeps N, divides by the prediction, and passes when the ratios
/// stay within a bounded band (max/min <= threshold).
pub fn lattice_sum_bound_check(
    beta: f64,
    dim: usize,
    boundary: Boundary,
    n_sweep: &[usize],
    a: &GridPoint,
    threshold: f64,
) -> Result<ScalingReport, LatticeError> {
    if n_sweep.iter().any(|&n| n < 2) {
        return Err(LatticeError::InvalidParameter("sweep requires N >= 2".into()));
    }
    let d = dim as f64;
    let kf = a.level as f64;
    let mut rows = Vec::new();
    let mut membership = Vec::new();
    for &n in n_sweep {
        let config = LatticeConfig::new(dim, n, boundary)?;
        let in_dn = a.lattice_site(&config).is_some();
        membership.push(in_dn);
        let nf = n as f64;
        let base = if beta < d {
            nf.powf(d)
        } else if (beta - d).abs() < 1e-12 {
            nf.powf(d) * nf.ln()
        } else {
            nf.powf(beta)
        };
        let kfac = if in_dn {
            1.0
        } else if beta <= d {
            kf.powf(d)
        } else {
            kf.powf(beta)
        };
        let sum = lattice_sum(beta, a, &config)?;
        let predicted = base * kfac;
        rows.push(ScalingRow { n, sum, predicted, ratio: sum / predicted });
    }
    let max = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_min_ratio = max / min;
    Ok(ScalingReport {
        beta,
        dim,
        anchor_in_lattice: membership,
        rows,
        max_min_ratio,
        pass: max_min_ratio <= threshold && min > 0.0,
    })
}
