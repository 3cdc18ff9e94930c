//! Small shared utilities: hashing, seed derivation, thread-pool setup.

use std::sync::OnceLock;

/// FNV-1a 64-bit offset basis.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a 64-bit prime.
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a 64-bit hasher used for payload digests and
/// reproducibility fingerprints.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let mut h = self.0;
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.0 = h;
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// FNV-1a digest of a byte slice in one call.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

/// One round of the splitmix64 output function. Used to whiten and combine
/// seed material; the full 64-bit avalanche makes structurally close seeds
/// (seed, seed+1) produce unrelated streams.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed, a domain tag, and an
/// index. Different tags give unrelated streams for the same base seed, so the
/// batch sampler, encoder draws, and initialization never share randomness.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Fnv1a::new();
    h.update(tag.as_bytes());
    splitmix64(base ^ splitmix64(h.finish()) ^ splitmix64(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "HDD_THREADS";

static POOL_INIT: OnceLock<usize> = OnceLock::new();

/// Initializes the global worker pool once, honoring `HDD_THREADS` (unset or
/// `0` means one worker per available core), and returns the worker count.
/// Later calls return the count chosen by the first one.
pub fn init_thread_pool() -> usize {
    *POOL_INIT.get_or_init(|| {
        let requested = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        let threads = requested.unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        });
        // Ignore the error: another component may already have installed a
        // global pool, in which case its size wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        rayon::current_num_threads()
    })
}
