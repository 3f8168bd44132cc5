//! Data pipeline, evaluation harness and real-time discussion service built
//! on `discuss-core`.

pub mod backend;
pub mod bench;
pub mod clock;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod policy;
pub mod server;
pub mod session;

/// 64-bit FNV-1a over the concatenation of `parts`. Stable across builds,
/// unlike `std`'s default hasher.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in *part {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
