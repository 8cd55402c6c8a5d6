/// Key-to-bucket hashing. The table takes `hash(key) % bucket_count` as the
/// home bucket, so anything deterministic with decent diffusion works; the
/// default is FNV-1a 64 which is cheap and has a well-known reference output
/// we can test against.
pub trait KeyHasher: Send + Sync + 'static {
    fn hash(&self, key: &[u8]) -> u64;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325; // 14695981039346656037
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3; // 1099511628211

#[derive(Debug, Clone, Copy, Default)]
pub struct Fnv1a64;

impl KeyHasher for Fnv1a64 {
    fn hash(&self, key: &[u8]) -> u64 {
        let mut h = FNV_OFFSET;
        for &b in key {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }
}
