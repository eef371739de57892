//! `GDACKPT1` checkpoints of a [`MixtureState`].
//!
//! ```text
//! offset  size  field
//!      0     8  magic "GDACKPT1"
//!      8     4  version (u32, currently 1)
//!     12     4  d (u32)
//!     16     4  K (u32)
//!     20     4  flags (u32, reserved, 0)
//!     24     8  updates_since_refactor (u64)
//!     32     8  weighted_total (f64)
//!     40     8  ridge (f64)
//!     48     8  ridge_epsilon (f64)
//!     56        means K×d, soft_counts K, priors K, covariance d×d,
//!               Cholesky factor d×d (upper, row-major); all f64
//! ```
//!
//! Little-endian throughout; doubles are stored verbatim so a round trip is
//! bit-exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, SquareMatrix};
use crate::state::MixtureState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GDACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const FIXED_LEN: usize = 56;

fn payload_len(d: usize, k: usize) -> usize {
    8 * (k * d + 2 * k + 2 * d * d)
}

pub fn checkpoint_state(state: &MixtureState) -> Vec<u8> {
    let d = state.dim();
    let k = state.num_classes();
    let mut out = Vec::with_capacity(FIXED_LEN + payload_len(d, k));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&state.updates_since_refactor.to_le_bytes());
    for v in [state.weighted_total, state.ridge, state.ridge_epsilon] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |values: &[f64]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for mean in &state.means {
        put(mean);
    }
    put(&state.soft_counts);
    put(&state.priors);
    put(state.covariance.as_slice());
    put(state.factor.upper().as_slice());
    out
}

pub fn write_checkpoint<W: Write>(mut out: W, state: &MixtureState) -> Result<()> {
    out.write_all(&checkpoint_state(state))?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MixtureState> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    restore_state(&bytes)
}

pub fn restore_state(bytes: &[u8]) -> Result<MixtureState> {
    if bytes.len() < FIXED_LEN {
        return Err(Error::format("checkpoint shorter than its fixed header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let d = u32_at(12) as usize;
    let k = u32_at(16) as usize;
    if d == 0 || k < 2 {
        return Err(Error::format(format!(
            "invalid checkpoint shape d={d}, K={k}"
        )));
    }
    if u32_at(20) != 0 {
        return Err(Error::format("unknown checkpoint flags"));
    }
    let expected = FIXED_LEN + payload_len(d, k);
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "checkpoint is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let updates_since_refactor = u64::from_le_bytes(bytes[24..32].try_into().unwrap());

    let mut cursor = FIXED_LEN;
    let mut take = |n: usize| {
        let values: Vec<f64> = (0..n).map(|i| f64_at(cursor + 8 * i)).collect();
        cursor += 8 * n;
        values
    };
    let means: Vec<Vec<f64>> = (0..k).map(|_| take(d)).collect();
    let soft_counts = take(k);
    let priors = take(k);
    let covariance = SquareMatrix::from_row_major(d, take(d * d))?;
    let upper = SquareMatrix::from_row_major(d, take(d * d))?;

    Ok(MixtureState {
        means,
        soft_counts,
        priors,
        covariance,
        factor: CholeskyFactor::from_upper(upper),
        ridge: f64_at(40),
        ridge_epsilon: f64_at(48),
        weighted_total: f64_at(32),
        updates_since_refactor,
    })
}
