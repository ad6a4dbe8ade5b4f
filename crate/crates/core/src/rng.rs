//! Counter-based random streams.
//!
//! Every noise source draws from its own ChaCha8 stream keyed by
//! (master seed, stream id, step index), so sensor synthesis and filter
//! propagation are bit-reproducible regardless of call order or parallel
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent noise sources within a run.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StreamId {
    Accel = 1,
    Gyro = 2,
    PointCloud = 3,
    RadarAlt = 4,
    Baro = 5,
    /// True initial INS error draw.
    InitTruth = 6,
    MpfInit = 7,
    MpfPropagate = 8,
    MpfResample = 9,
    Bench = 10,
    Terrain = 11,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream for (seed, source, step).
pub fn stream(seed: u64, id: StreamId, step: u64) -> ChaCha8Rng {
    let mut z = mix(seed ^ 0x9E37_79B9_7F4A_7C15);
    z = mix(z ^ (id as u64).wrapping_mul(0xD605_0B58_7E49_70DD));
    z = mix(z ^ step.wrapping_mul(0xCA5A_8263_9512_1157));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        z = mix(z.wrapping_add(0x9E37_79B9_7F4A_7C15));
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
