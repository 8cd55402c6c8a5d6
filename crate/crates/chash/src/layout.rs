//! Byte layout of the table.
//!
//! Buckets come in pairs. A pair owns two home buckets (even- and
//! odd-numbered), three shared SBuckets usable by both, and one 8-byte
//! indicator word whose bits say which slots hold a live item. In memory a
//! pair is packed as:
//!
//! ```text
//! even bucket (128) | indicator (8) | 3 shared SBuckets (384) | odd bucket (128)
//! ```
//!
//! so the "segment" a reader needs — home bucket + indicator + shared
//! SBuckets, 520 bytes — is one contiguous range for either home bucket and
//! can be fetched with a single one-sided read. The indicator is the only
//! commit point: an 8-byte store of it publishes (or retracts) any set of
//! slots at once.
//!
//! Slots within a pair are numbered canonically: 0-3 even bucket, 4-15
//! shared SBuckets, 16-19 odd bucket, 20-31 the optional added SBucket
//! group (a separately allocated 384-byte extent). Indicator bit i covers
//! canonical slot i. Even-homed keys probe slots 0..15 left to right;
//! odd-homed keys probe 19 down to 4, so the two homes grow toward each
//! other through the shared region. Both probe the added group 20..31
//! forward, after the primary slots.

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 16;
pub const VALUE_MAX: usize = 15;
pub const SLOT_LEN: usize = 32; // key | value len byte | payload, zero padded
pub const SLOTS_PER_BUCKET: usize = 4;
pub const BUCKET_LEN: usize = SLOTS_PER_BUCKET * SLOT_LEN; // 128
pub const INDICATOR_LEN: usize = 8;
pub const SHARED_SBUCKETS: usize = 3;
pub const SHARED_LEN: usize = SHARED_SBUCKETS * BUCKET_LEN; // 384

/// Home bucket + indicator + shared SBuckets: what one read must cover.
pub const SEGMENT_LEN: usize = BUCKET_LEN + INDICATOR_LEN + SHARED_LEN; // 520
/// Full pair footprint: segment plus the other home bucket.
pub const PAIR_STRIDE: usize = SEGMENT_LEN + BUCKET_LEN; // 648

/// Added SBucket group: three more SBuckets, allocated on demand.
pub const GROUP_SBUCKETS: usize = 3;
pub const GROUP_LEN: usize = GROUP_SBUCKETS * BUCKET_LEN; // 384
pub const GROUP_SLOTS: usize = GROUP_SBUCKETS * SLOTS_PER_BUCKET; // 12

/// Canonical slot indices within a pair.
pub const PRIMARY_SLOTS: usize = 20; // 0..20: even bucket, shared, odd bucket
pub const PAIR_SLOTS: usize = PRIMARY_SLOTS + GROUP_SLOTS; // 32 with added group
pub const ADDED_FIRST: usize = PRIMARY_SLOTS; // 20
pub const PRIMARY_MASK: u64 = (1 << PRIMARY_SLOTS) - 1;
pub const ADDED_MASK: u64 = ((1u64 << PAIR_SLOTS) - 1) & !PRIMARY_MASK;

pub const fn bit(idx: usize) -> u64 {
    1u64 << idx
}

pub fn is_set(indicator: u64, idx: usize) -> bool {
    indicator & bit(idx) != 0
}

/// Probe order over the primary slots for a key homed in this pair.
/// Even homes walk 0..=15; odd homes walk 19 down to 4.
pub fn primary_scan(even_home: bool) -> impl Iterator<Item = usize> {
    let mut order = [0usize; 16];
    for (i, slot) in order.iter_mut().enumerate() {
        *slot = if even_home { i } else { 19 - i };
    }
    order.into_iter()
}

pub fn added_scan() -> std::ops::Range<usize> {
    ADDED_FIRST..PAIR_SLOTS
}

/// 16-byte key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(pub [u8; KEY_LEN]);

impl Key {
    pub fn from_slice(bytes: &[u8]) -> Result<Key> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| Error::Config(format!("key must be {KEY_LEN} bytes, got {}", bytes.len())))?;
        Ok(Key(arr))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

// Keys are often printable ASCII in tests; show them as such, else hex.
impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.iter().all(|b| b.is_ascii_graphic()) {
            write!(f, "Key({})", std::str::from_utf8(&self.0).unwrap())
        } else {
            write!(f, "Key(0x")?;
            for b in self.0 {
                write!(f, "{b:02x}")?;
            }
            write!(f, ")")
        }
    }
}

/// Variable-length value, at most 15 bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value {
    len: u8,
    bytes: [u8; VALUE_MAX],
}

impl Value {
    pub fn new(data: &[u8]) -> Result<Value> {
        if data.len() > VALUE_MAX {
            return Err(Error::ValueTooLarge(data.len()));
        }
        let mut bytes = [0u8; VALUE_MAX];
        bytes[..data.len()].copy_from_slice(data);
        Ok(Value {
            len: data.len() as u8,
            bytes,
        })
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Value(0x")?;
        for b in self.as_slice() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

pub fn encode_slot(key: &Key, value: &Value) -> [u8; SLOT_LEN] {
    let mut out = [0u8; SLOT_LEN];
    out[..KEY_LEN].copy_from_slice(&key.0);
    out[KEY_LEN] = value.len;
    out[KEY_LEN + 1..KEY_LEN + 1 + VALUE_MAX].copy_from_slice(&value.bytes);
    out
}

pub fn decode_slot(raw: &[u8]) -> Result<(Key, Value)> {
    if raw.len() != SLOT_LEN {
        return Err(Error::Integrity(format!("slot must be {SLOT_LEN} bytes")));
    }
    let key = Key(raw[..KEY_LEN].try_into().unwrap());
    let len = raw[KEY_LEN];
    if len as usize > VALUE_MAX {
        return Err(Error::Integrity(format!("slot value length {len} out of range")));
    }
    let mut bytes = [0u8; VALUE_MAX];
    bytes.copy_from_slice(&raw[KEY_LEN + 1..KEY_LEN + 1 + VALUE_MAX]);
    Ok((key, Value { len, bytes }))
}

/// Placement of one table (a bucket array of `buckets` homes) inside a
/// region, starting at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableGeometry {
    pub base: usize,
    pub buckets: usize,
}

impl TableGeometry {
    pub fn new(base: usize, buckets: usize) -> Result<TableGeometry> {
        if buckets == 0 || !buckets.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bucket count {buckets} must be positive and even"
            )));
        }
        Ok(TableGeometry { base, buckets })
    }

    pub fn pairs(&self) -> usize {
        self.buckets / 2
    }

    /// Fixed-array footprint, excluding added groups.
    pub fn fixed_len(&self) -> usize {
        self.pairs() * PAIR_STRIDE
    }

    pub fn bucket_for_hash(&self, hash: u64) -> usize {
        (hash % self.buckets as u64) as usize
    }

    pub fn pair_of_bucket(&self, bucket: usize) -> usize {
        bucket / 2
    }

    pub fn pair_base(&self, pair: usize) -> usize {
        self.base + pair * PAIR_STRIDE
    }

    pub fn indicator_offset(&self, pair: usize) -> usize {
        self.pair_base(pair) + BUCKET_LEN
    }

    /// The 520-byte range one read must cover for this home bucket:
    /// `[home bucket | indicator | shared]` for even homes,
    /// `[indicator | shared | home bucket]` for odd ones.
    pub fn segment_of_bucket(&self, bucket: usize) -> (usize, usize) {
        let pair = self.pair_of_bucket(bucket);
        let off = if bucket.is_multiple_of(2) {
            self.pair_base(pair)
        } else {
            self.pair_base(pair) + BUCKET_LEN
        };
        (off, SEGMENT_LEN)
    }

    /// Region offset of a primary canonical slot (0..20).
    pub fn slot_offset(&self, pair: usize, canonical: usize) -> usize {
        let base = self.pair_base(pair);
        match canonical {
            0..=3 => base + canonical * SLOT_LEN,
            4..=15 => base + BUCKET_LEN + INDICATOR_LEN + (canonical - 4) * SLOT_LEN,
            16..=19 => base + SEGMENT_LEN + (canonical - 16) * SLOT_LEN,
            _ => panic!("canonical {canonical} is not a primary slot"),
        }
    }

    /// Offset of an added canonical slot (20..32) inside its group extent.
    pub fn added_slot_offset(group_base: usize, canonical: usize) -> usize {
        assert!((ADDED_FIRST..PAIR_SLOTS).contains(&canonical));
        group_base + (canonical - ADDED_FIRST) * SLOT_LEN
    }

    /// Global slot index used for lock ordering across pairs.
    pub fn lock_index(&self, pair: usize, canonical: usize) -> usize {
        pair * PAIR_SLOTS + canonical
    }
}

/// Byte offset of a canonical slot within a fetched 520-byte segment, or
/// None if that slot is not covered (the far home bucket never is).
pub fn segment_slot_offset(even_home: bool, canonical: usize) -> Option<usize> {
    if even_home {
        match canonical {
            0..=3 => Some(canonical * SLOT_LEN),
            4..=15 => Some(BUCKET_LEN + INDICATOR_LEN + (canonical - 4) * SLOT_LEN),
            _ => None,
        }
    } else {
        match canonical {
            4..=15 => Some(INDICATOR_LEN + (canonical - 4) * SLOT_LEN),
            16..=19 => Some(INDICATOR_LEN + SHARED_LEN + (canonical - 16) * SLOT_LEN),
            _ => None,
        }
    }
}

/// Byte offset of the indicator within a fetched segment.
pub fn segment_indicator_offset(even_home: bool) -> usize {
    if even_home {
        BUCKET_LEN
    } else {
        0
    }
}
