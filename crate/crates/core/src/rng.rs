//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, purpose, epoch, coordinates)`, so
//! trajectories, probes and oracle samples can be generated in any order (or on
//! any number of workers) and still reproduce bit-for-bit. The block function
//! is Philox4x32-10.

use crate::math;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with ten rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    ParamInit = 1,
    InitialState = 2,
    Brownian = 3,
    Evaluation = 4,
    EvaluationInitial = 5,
    Oracle = 6,
    Probe = 7,
    Test = 255,
}

/// A keyed family of random blocks addressed by `(row, column, block)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: [u32; 2],
}

impl Stream {
    pub fn new(seed: u64, purpose: Purpose, epoch: u64) -> Self {
        let mixed = splitmix64(seed ^ splitmix64(((purpose as u64) << 56) ^ epoch));
        Self { key: [mixed as u32, (mixed >> 32) as u32] }
    }

    #[inline]
    pub fn block(&self, row: u64, col: u32, block: u32) -> [u32; 4] {
        philox4x32_10([block, col, row as u32, (row >> 32) as u32], self.key)
    }

    /// Two uniforms in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn uniform_pair(&self, row: u64, col: u32, block: u32) -> (f64, f64) {
        let x = self.block(row, col, block);
        (to_unit(x[0], x[1]), to_unit(x[2], x[3]))
    }

    /// Fills `out` with independent standard normals (Box-Muller).
    pub fn fill_normal(&self, row: u64, col: u32, out: &mut [f64]) {
        for (j, pair) in out.chunks_mut(2).enumerate() {
            let (u1, u2) = self.uniform_pair(row, col, j as u32);
            let r = math::sqrt(-2.0 * math::ln(1.0 - u1));
            let angle = 2.0 * math::PI * u2;
            pair[0] = r * math::cos(angle);
            if pair.len() > 1 {
                pair[1] = r * math::sin(angle);
            }
        }
    }

    pub fn fill_uniform(&self, row: u64, col: u32, out: &mut [f64]) {
        for (j, pair) in out.chunks_mut(2).enumerate() {
            let (u1, u2) = self.uniform_pair(row, col, j as u32);
            pair[0] = u1;
            if pair.len() > 1 {
                pair[1] = u2;
            }
        }
    }

    /// Fills `out` with independent +-1 signs.
    pub fn fill_rademacher(&self, row: u64, col: u32, out: &mut [f64]) {
        for (j, chunk) in out.chunks_mut(128).enumerate() {
            let bits = self.block(row, col, j as u32);
            for (b, v) in chunk.iter_mut().enumerate() {
                let word = bits[b / 32];
                *v = if (word >> (b % 32)) & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
    }
}

#[inline]
fn to_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 21) ^ ((lo as u64) >> 11);
    (bits & ((1u64 << 53) - 1)) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Brownian increment `dW ~ N(0, ds I_d)` for one trajectory step.
pub fn brownian_increments(stream: &Stream, trajectory: u64, step: u32, ds: f64, out: &mut [f64]) {
    stream.fill_normal(trajectory, step, out);
    let scale = math::sqrt(ds);
    for v in out.iter_mut() {
        *v *= scale;
    }
}
