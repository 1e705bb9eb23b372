//! Counter-based random streams built on Philox 4x32-10.
//!
//! Every random quantity in the crate is addressed by a key
//! `(seed, domain, replica, unit, step, block)` and produced by one Philox
//! block evaluation.  Draws therefore depend only on their key, never on
//! scheduling or on how many threads the caller uses, which is what makes
//! byte-identical reruns possible.
//!
//! `domain` separates independent uses (particle noise, disorder draws,
//! dictionary sampling, ...), `unit` is a site or node index, `step` a time
//! step, and `block` a sub-index when more than two values are needed.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Independent stream families.  The numeric value enters the counter, so
/// two domains never share a Philox block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    ParticleTheta0 = 0,
    ParticleOmega = 1,
    ParticleStep = 2,
    RefOmega = 3,
    RefTheta0 = 4,
    RefStep = 5,
    Dictionary = 6,
    RegularityProbe = 7,
    PropagatorProbe = 8,
    YosidaProbe = 9,
    Scratch = 10,
}

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One Philox 4x32 block with 10 rounds.
#[inline]
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(M0, ctr[0]);
        let (hi1, lo1) = mulhilo(M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
        key[0] = key[0].wrapping_add(W0);
        key[1] = key[1].wrapping_add(W1);
    }
    ctr
}

#[inline]
fn keyed_block(seed: u64, domain: Domain, replica: u32, unit: u32, step: u32, block: u32) -> [u32; 4] {
    debug_assert!(block < 1 << 24, "block index exhausted");
    let ctr = [step, unit, replica, ((domain as u32) << 24) | block];
    philox4x32(ctr, [seed as u32, (seed >> 32) as u32])
}

#[inline]
fn to_open_unit(hi: u32, lo: u32) -> f64 {
    // 53-bit uniform in (0, 1): never returns 0, safe under log().
    let bits = ((hi as u64) << 32) | lo as u64;
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Two independent uniforms in (0, 1) for one key.
#[inline]
pub fn uniforms2(seed: u64, domain: Domain, replica: u32, unit: u32, step: u32, block: u32) -> (f64, f64) {
    let b = keyed_block(seed, domain, replica, unit, step, block);
    (to_open_unit(b[0], b[1]), to_open_unit(b[2], b[3]))
}

/// Two independent standard normals for one key (Box-Muller).
#[inline]
pub fn normals2(seed: u64, domain: Domain, replica: u32, unit: u32, step: u32, block: u32) -> (f64, f64) {
    let (u1, u2) = uniforms2(seed, domain, replica, unit, step, block);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fills `out` with standard normals keyed by `(seed, domain, replica, unit, step)`.
pub fn fill_normals(seed: u64, domain: Domain, replica: u32, unit: u32, step: u32, out: &mut [f64]) {
    let mut block = 0;
    let mut i = 0;
    while i < out.len() {
        let (a, b) = normals2(seed, domain, replica, unit, step, block);
        out[i] = a;
        if i + 1 < out.len() {
            out[i + 1] = b;
        }
        i += 2;
        block += 1;
    }
}

/// Incremental draw cursor over one key prefix; the block counter advances as
/// values are consumed.  The draw sequence is part of the key contract: a
/// caller must always consume the same kinds in the same order.
pub struct Stream {
    seed: u64,
    domain: Domain,
    replica: u32,
    unit: u32,
    step: u32,
    block: u32,
    spare_uniform: Option<f64>,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, replica: u32, unit: u32, step: u32) -> Self {
        Stream { seed, domain, replica, unit, step, block: 0, spare_uniform: None, spare_normal: None }
    }

    pub fn next_uniform(&mut self) -> f64 {
        if let Some(u) = self.spare_uniform.take() {
            return u;
        }
        let (a, b) = uniforms2(self.seed, self.domain, self.replica, self.unit, self.step, self.block);
        self.block += 1;
        self.spare_uniform = Some(b);
        a
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(n) = self.spare_normal.take() {
            return n;
        }
        let (a, b) = normals2(self.seed, self.domain, self.replica, self.unit, self.step, self.block);
        self.block += 1;
        self.spare_normal = Some(b);
        a
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}
