//! Shared plumbing: deterministic RNG, stable content hashing, JSONL I/O.
//!
//! Everything here is deliberately self-contained so that pipeline outputs
//! are byte-identical across platforms and toolchain versions.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Deterministic 64-bit RNG (splitmix64 core).
///
/// Not cryptographic. Used for sampling, shuffles, and the MinHash
/// permutation family, where cross-platform reproducibility matters more
/// than statistical sophistication.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Derive an independent stream, e.g. one per pipeline stage.
    pub fn derive(&self, label: &str) -> DetRng {
        let mut h = self.state;
        for b in label.as_bytes() {
            h = splitmix64(h ^ u64::from(*b));
        }
        DetRng::new(splitmix64(h))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        splitmix64(self.state)
    }

    /// Uniform in `[0, bound)`. `bound` must be nonzero.
    pub fn gen_range(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Rejection sampling to avoid modulo bias.
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn gen_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from `0..n`, in selection order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        self.shuffle(&mut pool);
        pool.truncate(k.min(n));
        pool
    }
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a over bytes. Used for shingle hashing and band keys.
pub fn hash64(bytes: &[u8]) -> u64 {
    hash64_seeded(bytes, 0xCBF2_9CE4_8422_2325)
}

pub fn hash64_seeded(bytes: &[u8], seed: u64) -> u64 {
    let mut h = seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    // Final mix for better avalanche on short inputs.
    splitmix64(h)
}

/// 128-bit content fingerprint (two independently seeded 64-bit lanes),
/// rendered as 32 lowercase hex chars. Used for exact-dedup identity and
/// stage provenance.
pub fn content_fingerprint(bytes: &[u8]) -> String {
    let a = hash64_seeded(bytes, 0xCBF2_9CE4_8422_2325);
    let b = hash64_seeded(bytes, 0x9AE1_6A3B_2F90_404F);
    format!("{a:016x}{b:016x}")
}

/// Write `bytes` atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize items as JSON Lines and write atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Read a JSON Lines file, one item per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let f = fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Pairwise (tree-shaped) sum with a fixed reduction order, so batched
/// losses are bit-stable regardless of how the work is scheduled.
pub fn pairwise_sum<F: num_traits::Float>(values: &[F]) -> F {
    match values.len() {
        0 => F::zero(),
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}
