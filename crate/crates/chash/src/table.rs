//! The persistent hash table.
//!
//! All durability flows through one rule: a slot's bytes are staged first
//! (store, flush, fence), and only then does a single 8-byte store of the
//! pair's indicator word publish them. Deletes clear a bit, updates write
//! the new copy to a free slot and swap both bits in one indicator store.
//! Any crash therefore lands on a state where every published slot holds
//! fully durable bytes — no log, no undo.
//!
//! Per committed operation the flush+fence sequence counts are fixed:
//! insert 2 (slot, indicator), update 2 (new slot, indicator), delete 1
//! (indicator).
//!
//! Region layout:
//!
//! ```text
//! 0    magic
//! 8    meta word: bit0 resizing, bit1 active bank, bits 32.. epoch
//! 16   bank 0 descriptor (64 B)
//! 80   bank 1 descriptor (64 B)
//! 192  arena: table arrays, group directories, added SBucket groups
//! ```
//!
//! The meta word is the only cell that decides global state, so table
//! creation, resize start, and resize completion each commit with one
//! atomic store. A resize allocates the doubled table plus its directory
//! in the arena, persists the inactive bank descriptor, sets the resizing
//! bit, migrates pair by pair (insert into the new table, then clear the
//! old bit), and finishes by flipping active bank + epoch + resizing bit
//! in one store. Recovery of an interrupted resize replays the migration;
//! a membership probe on the first items makes the replay idempotent.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{Fnv1a64, KeyHasher};
use crate::layout::{
    added_scan, bit, decode_slot, encode_slot, is_set, primary_scan, Key, TableGeometry, Value,
    ADDED_MASK, GROUP_LEN, INDICATOR_LEN, PAIR_SLOTS, PRIMARY_SLOTS, SLOT_LEN,
};
use crate::pm::{OpTag, PmRegion};
use crate::sync::{LatchMap, PairLatch, SlotLocks};

const MAGIC_OFF: usize = 0;
const META_OFF: usize = 8;
const BANK_OFF: [usize; 2] = [16, 80];
const BANK_LEN: usize = 64;
pub const ARENA_BASE: usize = 192;

const MAGIC: u64 = u64::from_le_bytes(*b"CHTBL\x01\0\0");

const META_RESIZING: u64 = 1;
const META_BANK1: u64 = 2;

fn pack_meta(resizing: bool, bank: usize, epoch: u64) -> u64 {
    (epoch << 32) | if bank == 1 { META_BANK1 } else { 0 } | if resizing { META_RESIZING } else { 0 }
}

fn unpack_meta(word: u64) -> (bool, usize, u64) {
    (
        word & META_RESIZING != 0,
        usize::from(word & META_BANK1 != 0),
        word >> 32,
    )
}

/// How many added SBucket groups an epoch may allocate, as a fraction of
/// its pair count (`ceil(pairs * num / den)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedRatio {
    pub num: u64,
    pub den: u64,
}

impl AddedRatio {
    pub const NONE: AddedRatio = AddedRatio { num: 0, den: 1 };

    pub fn quota(&self, pairs: usize) -> u64 {
        if self.num == 0 {
            0
        } else {
            (pairs as u64 * self.num).div_ceil(self.den)
        }
    }
}

impl FromStr for AddedRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<AddedRatio> {
        let bad = || Error::Config(format!("added ratio must be 0 or a fraction like 1/10, got {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den: u64 = d.trim().parse().map_err(|_| bad())?;
            if den == 0 {
                return Err(bad());
            }
            Ok(AddedRatio { num, den })
        } else if s.trim() == "0" {
            Ok(AddedRatio::NONE)
        } else {
            Err(bad())
        }
    }
}

impl std::fmt::Display for AddedRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.num == 0 {
            write!(f, "0")
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Duplicate,
    /// No free slot in the key's pair; caller may add a group or resize.
    Full { pair: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    Absent,
    Full { pair: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    Deleted,
    Absent,
}

/// One bank descriptor: where an epoch's table array and group directory
/// live. 64 bytes on-region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BankDesc {
    table_base: u64,
    buckets: u64,
    dir_base: u64,
    dir_cap: u64,
    quota: u64,
    ratio_num: u64,
    ratio_den: u64,
}

impl BankDesc {
    fn write(&self, pm: &PmRegion, off: usize, tag: OpTag) -> Result<()> {
        let fields = [
            self.table_base,
            self.buckets,
            self.dir_base,
            self.dir_cap,
            self.quota,
            self.ratio_num,
            self.ratio_den,
            0,
        ];
        let mut raw = [0u8; BANK_LEN];
        for (i, v) in fields.iter().enumerate() {
            raw[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
        }
        pm.store(off, &raw, tag)?;
        pm.flush_range(off, BANK_LEN, tag)?;
        Ok(())
    }

    fn read(pm: &PmRegion, off: usize) -> Result<BankDesc> {
        let f = |i: usize| pm.read_u64(off + i * 8);
        Ok(BankDesc {
            table_base: f(0)?,
            buckets: f(1)?,
            dir_base: f(2)?,
            dir_cap: f(3)?,
            quota: f(4)?,
            ratio_num: f(5)?,
            ratio_den: f(6)?,
        })
    }

    fn validate(&self, capacity: usize) -> Result<(TableGeometry, AddedRatio)> {
        let geo = TableGeometry::new(self.table_base as usize, self.buckets as usize)?;
        let end = geo.base + geo.fixed_len();
        let dir_end = self.dir_base as usize + self.dir_cap as usize * 8;
        if geo.base < ARENA_BASE
            || end > capacity
            || (self.dir_base as usize) < ARENA_BASE
            || dir_end > capacity
            || self.dir_cap as usize != geo.pairs()
            || self.ratio_den == 0
        {
            return Err(Error::Integrity("bank descriptor out of range".into()));
        }
        Ok((
            geo,
            AddedRatio {
                num: self.ratio_num,
                den: self.ratio_den,
            },
        ))
    }
}

struct DirCache {
    /// Added-group extent address per pair, 0 = none.
    addrs: Vec<usize>,
    used: u64,
}

/// DRAM-side view of one table generation.
struct EpochState {
    epoch: u64,
    geo: TableGeometry,
    dir_base: usize,
    quota: u64,
    latches: Vec<Arc<PairLatch>>,
    slots: SlotLocks,
    dir: RwLock<DirCache>,
}

impl EpochState {
    fn build(
        pm: &PmRegion,
        latch_map: &LatchMap,
        epoch: u64,
        geo: TableGeometry,
        dir_base: usize,
        quota: u64,
    ) -> Result<EpochState> {
        let pairs = geo.pairs();
        let latches: Vec<Arc<PairLatch>> = (0..pairs).map(|_| Arc::new(PairLatch::new())).collect();
        for (pair, latch) in latches.iter().enumerate() {
            let base = geo.pair_base(pair);
            latch_map.insert(base, base + crate::layout::PAIR_STRIDE, Arc::clone(latch));
        }
        let mut addrs = Vec::with_capacity(pairs);
        let mut used = 0;
        for (pair, latch) in latches.iter().enumerate() {
            let addr = pm.read_u64(dir_base + pair * 8)? as usize;
            if addr != 0 {
                used += 1;
                latch_map.insert(addr, addr + GROUP_LEN, Arc::clone(latch));
            }
            addrs.push(addr);
        }
        Ok(EpochState {
            epoch,
            geo,
            dir_base,
            quota,
            slots: SlotLocks::new(pairs * PAIR_SLOTS),
            latches,
            dir: RwLock::new(DirCache { addrs, used }),
        })
    }
}

/// What a client needs to address one table generation directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableMeta {
    pub base: usize,
    pub buckets: usize,
    /// Added-group extent address per pair, 0 = none.
    pub groups: Vec<usize>,
}

/// Connection metadata the server pushes to clients: bumped on every group
/// add and at both edges of a resize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaSnapshot {
    pub version: u64,
    pub epoch: u64,
    pub resizing: bool,
    pub active: TableMeta,
    /// The migration source, present only while `resizing`.
    pub old: Option<TableMeta>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Occupancy {
    pub items: u64,
    /// Slot capacity including added groups.
    pub capacity: u64,
    pub primary_capacity: u64,
    pub groups: u64,
}

impl Occupancy {
    pub fn load_factor(&self) -> f64 {
        self.items as f64 / self.capacity as f64
    }
}

struct Probe {
    ind_off: usize,
    ind: u64,
    group: usize,
    existing: Option<(usize, Value)>,
    free: Option<usize>,
}

/// Migration destination during resize/recovery (state lock held
/// exclusively, so plain fields instead of the epoch's RwLock).
struct Target {
    geo: TableGeometry,
    dir_base: usize,
    quota: u64,
    dir: DirCache,
    latches: Vec<Arc<PairLatch>>,
}

pub struct HashTable<H: KeyHasher = Fnv1a64> {
    pm: Arc<PmRegion>,
    hasher: H,
    added_ratio: AddedRatio,
    latch_map: Arc<LatchMap>,
    state: RwLock<EpochState>,
    alloc: Mutex<usize>,
    meta_version: AtomicU64,
    published: RwLock<MetaSnapshot>,
    resizes: AtomicU64,
    trigger_lfs: Mutex<Vec<f64>>,
}

impl HashTable<Fnv1a64> {
    pub fn create(pm: Arc<PmRegion>, buckets: usize, ratio: AddedRatio) -> Result<Self> {
        Self::create_with_hasher(pm, buckets, ratio, Fnv1a64)
    }

    pub fn recover(pm: Arc<PmRegion>) -> Result<Self> {
        Self::recover_with_hasher(pm, Fnv1a64)
    }
}

impl<H: KeyHasher> HashTable<H> {
    pub fn create_with_hasher(
        pm: Arc<PmRegion>,
        buckets: usize,
        ratio: AddedRatio,
        hasher: H,
    ) -> Result<Self> {
        let geo_probe = TableGeometry::new(ARENA_BASE, buckets)?;
        let pairs = geo_probe.pairs();
        let tag = OpTag::Setup;

        let mut cursor = ARENA_BASE;
        let table_base = alloc_zeroed(&pm, &mut cursor, geo_probe.fixed_len(), tag)?;
        let dir_base = alloc_zeroed(&pm, &mut cursor, pairs * 8, tag)?;
        let geo = TableGeometry::new(table_base, buckets)?;

        let desc = BankDesc {
            table_base: table_base as u64,
            buckets: buckets as u64,
            dir_base: dir_base as u64,
            dir_cap: pairs as u64,
            quota: ratio.quota(pairs),
            ratio_num: ratio.num,
            ratio_den: ratio.den,
        };
        desc.write(&pm, BANK_OFF[0], tag)?;
        pm.store(MAGIC_OFF, &MAGIC.to_le_bytes(), tag)?;
        pm.flush_range(MAGIC_OFF, 8, tag)?;
        pm.fence(tag);

        pm.atomic_store_8(META_OFF, pack_meta(false, 0, 0), tag)?;
        pm.flush_range(META_OFF, 8, tag)?;
        pm.fence(tag);

        let latch_map = Arc::new(LatchMap::new());
        let state = EpochState::build(&pm, &latch_map, 0, geo, dir_base, desc.quota)?;
        let table = HashTable {
            pm,
            hasher,
            added_ratio: ratio,
            latch_map,
            state: RwLock::new(state),
            alloc: Mutex::new(cursor),
            meta_version: AtomicU64::new(0),
            published: RwLock::new(MetaSnapshot {
                version: 0,
                epoch: 0,
                resizing: false,
                active: TableMeta {
                    base: 0,
                    buckets: 0,
                    groups: Vec::new(),
                },
                old: None,
            }),
            resizes: AtomicU64::new(0),
            trigger_lfs: Mutex::new(Vec::new()),
        };
        table.republish(&table.state.read(), false, None);
        Ok(table)
    }

    pub fn recover_with_hasher(pm: Arc<PmRegion>, hasher: H) -> Result<Self> {
        if pm.read_u64(MAGIC_OFF)? != MAGIC {
            return Err(Error::Integrity("region has no table magic".into()));
        }
        let (resizing, bank, epoch) = unpack_meta(pm.read_u64(META_OFF)?);
        let desc = BankDesc::read(&pm, BANK_OFF[bank])?;
        let (geo, ratio) = desc.validate(pm.capacity())?;

        let latch_map = Arc::new(LatchMap::new());
        let state = EpochState::build(&pm, &latch_map, epoch, geo, desc.dir_base as usize, desc.quota)?;

        let mut cursor = ARENA_BASE;
        extend_cursor(&mut cursor, &geo, desc.dir_base as usize, &state.dir.read().addrs);

        let table = HashTable {
            pm,
            hasher,
            added_ratio: ratio,
            latch_map,
            state: RwLock::new(state),
            alloc: Mutex::new(cursor),
            meta_version: AtomicU64::new(0),
            published: RwLock::new(MetaSnapshot {
                version: 0,
                epoch,
                resizing: false,
                active: TableMeta {
                    base: 0,
                    buckets: 0,
                    groups: Vec::new(),
                },
                old: None,
            }),
            resizes: AtomicU64::new(0),
            trigger_lfs: Mutex::new(Vec::new()),
        };

        if resizing {
            table.finish_interrupted_resize(bank)?;
        } else {
            table.republish(&table.state.read(), false, None);
        }
        // Decode every published slot so corruption surfaces here, not on
        // some later lookup.
        table.entries()?;
        Ok(table)
    }

    /// Roll an interrupted migration forward and commit the bank flip.
    fn finish_interrupted_resize(&self, old_bank: usize) -> Result<()> {
        let tag = OpTag::Recovery;
        let new_bank = 1 - old_bank;
        let desc = BankDesc::read(&self.pm, BANK_OFF[new_bank])?;
        let (new_geo, _) = desc.validate(self.pm.capacity())?;

        let mut st = self.state.write();
        let new_pairs = new_geo.pairs();
        let latches: Vec<Arc<PairLatch>> =
            (0..new_pairs).map(|_| Arc::new(PairLatch::new())).collect();
        for (pair, latch) in latches.iter().enumerate() {
            let base = new_geo.pair_base(pair);
            self.latch_map
                .insert(base, base + crate::layout::PAIR_STRIDE, Arc::clone(latch));
        }
        let dir_base = desc.dir_base as usize;
        let mut addrs = Vec::with_capacity(new_pairs);
        let mut used = 0;
        for (pair, latch) in latches.iter().enumerate() {
            let addr = self.pm.read_u64(dir_base + pair * 8)? as usize;
            if addr != 0 {
                used += 1;
                self.latch_map
                    .insert(addr, addr + GROUP_LEN, Arc::clone(latch));
            }
            addrs.push(addr);
        }
        {
            let mut cur = self.alloc.lock();
            extend_cursor(&mut cur, &new_geo, dir_base, &addrs);
        }

        let mut target = Target {
            geo: new_geo,
            dir_base,
            quota: desc.quota,
            dir: DirCache { addrs, used },
            latches,
        };
        self.republish_resizing(&st, &target);
        self.migrate(&st, &mut target, tag, true)?;

        let next_epoch = st.epoch + 1;
        self.pm
            .atomic_store_8(META_OFF, pack_meta(false, new_bank, next_epoch), tag)?;
        self.pm.flush_range(META_OFF, 8, tag)?;
        self.pm.fence(tag);

        *st = EpochState {
            epoch: next_epoch,
            geo: target.geo,
            dir_base: target.dir_base,
            quota: target.quota,
            slots: SlotLocks::new(new_pairs * PAIR_SLOTS),
            latches: target.latches,
            dir: RwLock::new(target.dir),
        };
        self.republish(&st, false, None);
        Ok(())
    }

    fn alloc_zeroed(&self, len: usize, tag: OpTag) -> Result<usize> {
        let mut cur = self.alloc.lock();
        alloc_zeroed(&self.pm, &mut cur, len, tag)
    }

    fn probe(&self, geo: &TableGeometry, group: usize, bucket: usize, key: &Key) -> Result<Probe> {
        let pair = geo.pair_of_bucket(bucket);
        let even = bucket.is_multiple_of(2);
        let ind_off = geo.indicator_offset(pair);
        let ind = self.pm.read_u64(ind_off)?;
        let mut existing = None;
        let mut free = None;
        let mut raw = [0u8; SLOT_LEN];

        let mut visit = |c: usize| -> Result<bool> {
            if is_set(ind, c) {
                let off = slot_addr(geo, pair, c, group);
                self.pm.read_into(off, &mut raw)?;
                let (k, v) = decode_slot(&raw)?;
                if k == *key {
                    existing = Some((c, v));
                }
            } else if free.is_none() {
                free = Some(c);
            }
            Ok(existing.is_some() && free.is_some())
        };

        'scan: {
            for c in primary_scan(even) {
                if visit(c)? {
                    break 'scan;
                }
            }
            if group != 0 {
                for c in added_scan() {
                    if visit(c)? {
                        break 'scan;
                    }
                }
            }
        }

        Ok(Probe {
            ind_off,
            ind,
            group,
            existing,
            free,
        })
    }

    pub fn insert(&self, key: Key, value: Value) -> Result<InsertOutcome> {
        let st = self.state.read();
        let bucket = st.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let pair = st.geo.pair_of_bucket(bucket);
        let latch = Arc::clone(&st.latches[pair]);
        let _op = latch.lock_op();

        let group = st.dir.read().addrs[pair];
        let p = self.probe(&st.geo, group, bucket, &key)?;
        if p.existing.is_some() {
            return Ok(InsertOutcome::Duplicate);
        }
        let Some(c) = p.free else {
            return Ok(InsertOutcome::Full { pair });
        };

        let tag = OpTag::Insert;
        let slot_off = slot_addr(&st.geo, pair, c, p.group);
        let _slots = st.slots.acquire(&[st.geo.lock_index(pair, c)]);
        let _w = latch.seq_write();
        self.pm.store(slot_off, &encode_slot(&key, &value), tag)?;
        self.pm.flush_range(slot_off, SLOT_LEN, tag)?;
        self.pm.fence(tag);
        self.pm.atomic_store_8(p.ind_off, p.ind | bit(c), tag)?;
        self.pm.flush_range(p.ind_off, INDICATOR_LEN, tag)?;
        self.pm.fence(tag);
        Ok(InsertOutcome::Inserted)
    }

    pub fn update(&self, key: Key, value: Value) -> Result<UpdateOutcome> {
        let st = self.state.read();
        let bucket = st.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let pair = st.geo.pair_of_bucket(bucket);
        let latch = Arc::clone(&st.latches[pair]);
        let _op = latch.lock_op();

        let group = st.dir.read().addrs[pair];
        let p = self.probe(&st.geo, group, bucket, &key)?;
        let Some((c_old, _)) = p.existing else {
            return Ok(UpdateOutcome::Absent);
        };
        let Some(c_new) = p.free else {
            return Ok(UpdateOutcome::Full { pair });
        };

        let tag = OpTag::Update;
        let slot_off = slot_addr(&st.geo, pair, c_new, p.group);
        let _slots = st.slots.acquire(&[
            st.geo.lock_index(pair, c_old),
            st.geo.lock_index(pair, c_new),
        ]);
        let _w = latch.seq_write();
        self.pm.store(slot_off, &encode_slot(&key, &value), tag)?;
        self.pm.flush_range(slot_off, SLOT_LEN, tag)?;
        self.pm.fence(tag);
        let ind = (p.ind & !bit(c_old)) | bit(c_new);
        self.pm.atomic_store_8(p.ind_off, ind, tag)?;
        self.pm.flush_range(p.ind_off, INDICATOR_LEN, tag)?;
        self.pm.fence(tag);
        Ok(UpdateOutcome::Updated)
    }

    pub fn delete(&self, key: Key) -> Result<DeleteOutcome> {
        let st = self.state.read();
        let bucket = st.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let pair = st.geo.pair_of_bucket(bucket);
        let latch = Arc::clone(&st.latches[pair]);
        let _op = latch.lock_op();

        let group = st.dir.read().addrs[pair];
        let p = self.probe(&st.geo, group, bucket, &key)?;
        let Some((c, _)) = p.existing else {
            return Ok(DeleteOutcome::Absent);
        };

        let tag = OpTag::Delete;
        let _slots = st.slots.acquire(&[st.geo.lock_index(pair, c)]);
        let _w = latch.seq_write();
        self.pm.atomic_store_8(p.ind_off, p.ind & !bit(c), tag)?;
        self.pm.flush_range(p.ind_off, INDICATOR_LEN, tag)?;
        self.pm.fence(tag);
        Ok(DeleteOutcome::Deleted)
    }

    /// Server-side lookup (tests, internal checks). Clients resolve gets
    /// from one-sided segment reads instead.
    pub fn lookup(&self, key: Key) -> Result<Option<Value>> {
        let st = self.state.read();
        let bucket = st.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let pair = st.geo.pair_of_bucket(bucket);
        let latch = Arc::clone(&st.latches[pair]);
        let _op = latch.lock_op();
        let group = st.dir.read().addrs[pair];
        let p = self.probe(&st.geo, group, bucket, &key)?;
        Ok(p.existing.map(|(_, v)| v))
    }

    /// Whether `pair` already has its added group. A stale pair index from
    /// before a resize reads as `false`; callers re-derive and retry.
    pub fn pair_has_group(&self, pair: usize) -> bool {
        let st = self.state.read();
        let has = st.dir.read().addrs.get(pair).is_some_and(|a| *a != 0);
        has
    }

    /// Allocate, zero, and publish the added SBucket group for `pair`.
    pub fn add_sbucket_group(&self, pair: usize) -> Result<usize> {
        let tag = OpTag::AddGroup;
        let st = self.state.read();
        if pair >= st.geo.pairs() {
            return Err(Error::Config(format!("pair {pair} out of range")));
        }
        let mut dir = st.dir.write();
        if dir.addrs[pair] != 0 {
            return Err(Error::GroupAlreadyAdded(pair as u64));
        }
        if dir.used >= st.quota {
            return Err(Error::QuotaExhausted);
        }
        let addr = self.alloc_zeroed(GROUP_LEN, tag)?;
        self.pm
            .atomic_store_8(st.dir_base + pair * 8, addr as u64, tag)?;
        self.pm.flush_range(st.dir_base + pair * 8, 8, tag)?;
        self.pm.fence(tag);
        dir.addrs[pair] = addr;
        dir.used += 1;
        self.latch_map
            .insert(addr, addr + GROUP_LEN, Arc::clone(&st.latches[pair]));
        drop(dir);
        self.republish(&st, false, None);
        Ok(addr)
    }

    /// Double the table if its epoch still equals `observed_epoch` (so
    /// concurrent callers that both saw a full pair trigger one resize, not
    /// two). Blocks until in-flight operations drain.
    pub fn resize(&self, observed_epoch: u64) -> Result<()> {
        let tag = OpTag::Resize;
        let mut st = self.state.write();
        if st.epoch != observed_epoch {
            return Ok(());
        }
        self.trigger_lfs
            .lock()
            .push(self.occupancy_of(&st)?.load_factor());

        let new_buckets = st.geo.buckets * 2;
        let new_pairs = new_buckets / 2;
        let fixed = TableGeometry::new(ARENA_BASE, new_buckets)?.fixed_len();
        let table_base = self.alloc_zeroed(fixed, tag)?;
        let dir_base = self.alloc_zeroed(new_pairs * 8, tag)?;
        let new_geo = TableGeometry::new(table_base, new_buckets)?;
        let quota = self.added_ratio.quota(new_pairs);

        let new_bank = 1 - active_bank(&self.pm)?;
        BankDesc {
            table_base: table_base as u64,
            buckets: new_buckets as u64,
            dir_base: dir_base as u64,
            dir_cap: new_pairs as u64,
            quota,
            ratio_num: self.added_ratio.num,
            ratio_den: self.added_ratio.den,
        }
        .write(&self.pm, BANK_OFF[new_bank], tag)?;
        self.pm.fence(tag);

        // Commit point: from here a crash recovers by finishing the
        // migration instead of discarding it.
        self.pm
            .atomic_store_8(META_OFF, pack_meta(true, 1 - new_bank, st.epoch), tag)?;
        self.pm.flush_range(META_OFF, 8, tag)?;
        self.pm.fence(tag);

        let latches: Vec<Arc<PairLatch>> =
            (0..new_pairs).map(|_| Arc::new(PairLatch::new())).collect();
        for (pair, latch) in latches.iter().enumerate() {
            let base = new_geo.pair_base(pair);
            self.latch_map
                .insert(base, base + crate::layout::PAIR_STRIDE, Arc::clone(latch));
        }
        let mut target = Target {
            geo: new_geo,
            dir_base,
            quota,
            dir: DirCache {
                addrs: vec![0; new_pairs],
                used: 0,
            },
            latches,
        };
        self.republish_resizing(&st, &target);

        self.migrate(&st, &mut target, tag, false)?;

        let next_epoch = st.epoch + 1;
        self.pm
            .atomic_store_8(META_OFF, pack_meta(false, new_bank, next_epoch), tag)?;
        self.pm.flush_range(META_OFF, 8, tag)?;
        self.pm.fence(tag);

        *st = EpochState {
            epoch: next_epoch,
            geo: target.geo,
            dir_base: target.dir_base,
            quota: target.quota,
            slots: SlotLocks::new(new_pairs * PAIR_SLOTS),
            latches: target.latches,
            dir: RwLock::new(target.dir),
        };
        self.resizes.fetch_add(1, Ordering::Relaxed);
        self.republish(&st, false, None);
        Ok(())
    }

    /// Move every item of the source epoch into `target`: insert into the
    /// new table, fence, then clear the old indicator bit. With
    /// `check_membership` (recovery) each item is first probed in the
    /// target; once one item is found unmigrated, everything after it is
    /// too, and the probes stop.
    fn migrate(
        &self,
        src: &EpochState,
        target: &mut Target,
        tag: OpTag,
        check_membership: bool,
    ) -> Result<()> {
        let src_dir = src.dir.read().addrs.clone();
        let mut checking = check_membership;
        let mut raw = [0u8; SLOT_LEN];
        for (pair, &src_group) in src_dir.iter().enumerate() {
            let ind_off = src.geo.indicator_offset(pair);
            let mut ind = self.pm.read_u64(ind_off)?;
            for c in 0..PAIR_SLOTS {
                if !is_set(ind, c) {
                    continue;
                }
                let off = slot_addr(&src.geo, pair, c, src_group);
                self.pm.read_into(off, &mut raw)?;
                let (key, value) = decode_slot(&raw)?;

                let mut already = false;
                if checking {
                    let bucket = target.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
                    let tp = target.geo.pair_of_bucket(bucket);
                    let p = self.probe(&target.geo, target.dir.addrs[tp], bucket, &key)?;
                    already = p.existing.is_some();
                    if !already {
                        checking = false;
                    }
                }
                if !already {
                    self.insert_into_target(target, key, value, tag)?;
                }

                ind &= !bit(c);
                let _w = src.latches[pair].seq_write();
                self.pm.atomic_store_8(ind_off, ind, tag)?;
                self.pm.flush_range(ind_off, INDICATOR_LEN, tag)?;
                self.pm.fence(tag);
            }
        }
        Ok(())
    }

    fn insert_into_target(&self, target: &mut Target, key: Key, value: Value, tag: OpTag) -> Result<()> {
        let bucket = target.geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let pair = target.geo.pair_of_bucket(bucket);
        let mut p = self.probe(&target.geo, target.dir.addrs[pair], bucket, &key)?;
        debug_assert!(p.existing.is_none(), "migrating a key that already moved");
        if p.free.is_none() {
            // The doubled pair overflowed; extend it with its added group.
            self.add_group_to_target(target, pair, tag)?;
            p = self.probe(&target.geo, target.dir.addrs[pair], bucket, &key)?;
        }
        let Some(c) = p.free else {
            return Err(Error::ResizeOverflow);
        };
        let slot_off = slot_addr(&target.geo, pair, c, p.group);
        let _w = target.latches[pair].seq_write();
        self.pm.store(slot_off, &encode_slot(&key, &value), tag)?;
        self.pm.flush_range(slot_off, SLOT_LEN, tag)?;
        self.pm.fence(tag);
        self.pm.atomic_store_8(p.ind_off, p.ind | bit(c), tag)?;
        self.pm.flush_range(p.ind_off, INDICATOR_LEN, tag)?;
        self.pm.fence(tag);
        Ok(())
    }

    fn add_group_to_target(&self, target: &mut Target, pair: usize, tag: OpTag) -> Result<usize> {
        if target.dir.addrs[pair] != 0 {
            return Err(Error::GroupAlreadyAdded(pair as u64));
        }
        if target.dir.used >= target.quota {
            return Err(Error::QuotaExhausted);
        }
        let addr = self.alloc_zeroed(GROUP_LEN, tag)?;
        self.pm
            .atomic_store_8(target.dir_base + pair * 8, addr as u64, tag)?;
        self.pm.flush_range(target.dir_base + pair * 8, 8, tag)?;
        self.pm.fence(tag);
        target.dir.addrs[pair] = addr;
        target.dir.used += 1;
        self.latch_map
            .insert(addr, addr + GROUP_LEN, Arc::clone(&target.latches[pair]));
        Ok(addr)
    }

    /// Every live item, pair by pair, canonical slot order.
    pub fn entries(&self) -> Result<Vec<(Key, Value)>> {
        let st = self.state.read();
        let mut out = Vec::new();
        let mut raw = [0u8; SLOT_LEN];
        for pair in 0..st.geo.pairs() {
            let _op = st.latches[pair].lock_op();
            let group = st.dir.read().addrs[pair];
            let ind = self.pm.read_u64(st.geo.indicator_offset(pair))?;
            for c in 0..PAIR_SLOTS {
                if !is_set(ind, c) {
                    continue;
                }
                if c >= PRIMARY_SLOTS && group == 0 {
                    return Err(Error::Integrity(format!(
                        "pair {pair} has added bits but no group"
                    )));
                }
                self.pm.read_into(slot_addr(&st.geo, pair, c, group), &mut raw)?;
                out.push(decode_slot(&raw)?);
            }
        }
        Ok(out)
    }

    pub fn occupancy(&self) -> Result<Occupancy> {
        let st = self.state.read();
        self.occupancy_of(&st)
    }

    fn occupancy_of(&self, st: &EpochState) -> Result<Occupancy> {
        let mut items = 0u64;
        let mut groups = 0u64;
        for pair in 0..st.geo.pairs() {
            let ind = self.pm.read_u64(st.geo.indicator_offset(pair))?;
            items += (ind & (crate::layout::PRIMARY_MASK | ADDED_MASK)).count_ones() as u64;
            if st.dir.read().addrs[pair] != 0 {
                groups += 1;
            }
        }
        let primary_capacity = (st.geo.pairs() * PRIMARY_SLOTS) as u64;
        Ok(Occupancy {
            items,
            capacity: primary_capacity + groups * crate::layout::GROUP_SLOTS as u64,
            primary_capacity,
            groups,
        })
    }

    /// Load factor measured at each resize that actually ran, in order.
    pub fn resize_trigger_load_factors(&self) -> Vec<f64> {
        self.trigger_lfs.lock().clone()
    }

    pub fn epoch(&self) -> u64 {
        self.state.read().epoch
    }

    pub fn buckets(&self) -> usize {
        self.state.read().geo.buckets
    }

    pub fn resizes(&self) -> u64 {
        self.resizes.load(Ordering::Relaxed)
    }

    pub fn added_groups(&self) -> u64 {
        self.state.read().dir.read().used
    }

    pub fn quota(&self) -> u64 {
        self.state.read().quota
    }

    pub fn pm(&self) -> &Arc<PmRegion> {
        &self.pm
    }

    pub fn latch_map(&self) -> &Arc<LatchMap> {
        &self.latch_map
    }

    pub fn hash_of(&self, key: &Key) -> u64 {
        self.hasher.hash(key.as_bytes())
    }

    pub fn meta_version(&self) -> u64 {
        self.meta_version.load(Ordering::SeqCst)
    }

    pub fn meta_snapshot(&self) -> MetaSnapshot {
        self.published.read().clone()
    }

    fn table_meta(geo: &TableGeometry, groups: Vec<usize>) -> TableMeta {
        TableMeta {
            base: geo.base,
            buckets: geo.buckets,
            groups,
        }
    }

    fn republish(&self, st: &EpochState, resizing: bool, old: Option<TableMeta>) {
        let active = Self::table_meta(&st.geo, st.dir.read().addrs.clone());
        let version = self.meta_version.fetch_add(1, Ordering::SeqCst) + 1;
        *self.published.write() = MetaSnapshot {
            version,
            epoch: st.epoch,
            resizing,
            active,
            old,
        };
    }

    /// During migration the new table is "active" (searched second by
    /// clients, but the insert destination) and the source is `old`.
    fn republish_resizing(&self, src: &EpochState, target: &Target) {
        let old = Self::table_meta(&src.geo, src.dir.read().addrs.clone());
        let active = Self::table_meta(&target.geo, target.dir.addrs.clone());
        let version = self.meta_version.fetch_add(1, Ordering::SeqCst) + 1;
        *self.published.write() = MetaSnapshot {
            version,
            epoch: src.epoch,
            resizing: true,
            active,
            old: Some(old),
        };
    }
}

fn active_bank(pm: &PmRegion) -> Result<usize> {
    Ok(unpack_meta(pm.read_u64(META_OFF)?).1)
}

fn slot_addr(geo: &TableGeometry, pair: usize, canonical: usize, group: usize) -> usize {
    if canonical < PRIMARY_SLOTS {
        geo.slot_offset(pair, canonical)
    } else {
        debug_assert_ne!(group, 0, "added slot without a group");
        TableGeometry::added_slot_offset(group, canonical)
    }
}

/// Bump `cursor` past every extent reachable from one bank.
fn extend_cursor(cursor: &mut usize, geo: &TableGeometry, dir_base: usize, addrs: &[usize]) {
    let mut max = *cursor;
    max = max.max(geo.base + geo.fixed_len());
    max = max.max(dir_base + addrs.len() * 8);
    for &a in addrs {
        if a != 0 {
            max = max.max(a + GROUP_LEN);
        }
    }
    *cursor = max;
}

/// Monotone 64-aligned arena allocation; the extent is zeroed, flushed and
/// fenced before it is handed out, so linking it is always safe.
fn alloc_zeroed(pm: &PmRegion, cursor: &mut usize, len: usize, tag: OpTag) -> Result<usize> {
    const CHUNK: usize = 4096;
    static ZEROS: [u8; CHUNK] = [0u8; CHUNK];
    let start = (*cursor + 63) & !63;
    let end = start
        .checked_add(len)
        .ok_or(Error::AllocFailed { need: len as u64, free: 0 })?;
    if end > pm.capacity() {
        return Err(Error::AllocFailed {
            need: len as u64,
            free: (pm.capacity() - start.min(pm.capacity())) as u64,
        });
    }
    *cursor = end;
    let mut off = start;
    while off < end {
        let n = CHUNK.min(end - off);
        pm.store(off, &ZEROS[..n], tag)?;
        pm.flush_range(off, n, tag)?;
        off += n;
    }
    pm.fence(tag);
    Ok(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pm::Trip;

    fn region(kib: usize) -> Arc<PmRegion> {
        Arc::new(PmRegion::new(kib * 1024).unwrap())
    }

    fn key_from_id(id: u64) -> Key {
        let s = format!("{id:016x}");
        Key(s.as_bytes().try_into().unwrap())
    }

    fn keys_for_bucket(buckets: usize, bucket: usize, n: usize) -> Vec<Key> {
        let h = Fnv1a64;
        (0u64..)
            .map(key_from_id)
            .filter(|k| h.hash(k.as_bytes()) % buckets as u64 == bucket as u64)
            .take(n)
            .collect()
    }

    fn val(data: &[u8]) -> Value {
        Value::new(data).unwrap()
    }

    #[test]
    fn added_ratio_parsing_and_quota() {
        assert_eq!("0".parse::<AddedRatio>().unwrap(), AddedRatio::NONE);
        let r: AddedRatio = "1/10".parse().unwrap();
        assert_eq!(r.quota(10), 1);
        assert_eq!(r.quota(7), 1);
        assert_eq!(r.quota(11), 2);
        assert_eq!(r.quota(20), 2);
        let r: AddedRatio = "1/20".parse().unwrap();
        assert_eq!(r.quota(10), 1);
        assert_eq!(r.quota(40), 2);
        assert_eq!(AddedRatio::NONE.quota(1000), 0);
        assert!("x/3".parse::<AddedRatio>().is_err());
        assert!("1/0".parse::<AddedRatio>().is_err());
        assert!("0.1".parse::<AddedRatio>().is_err());
    }

    #[test]
    fn insert_lookup_update_delete_roundtrip() {
        let t = HashTable::create(region(64), 20, AddedRatio::NONE).unwrap();
        let k = key_from_id(7);
        assert_eq!(t.lookup(k).unwrap(), None);
        assert_eq!(t.insert(k, val(b"hello")).unwrap(), InsertOutcome::Inserted);
        assert_eq!(t.insert(k, val(b"other")).unwrap(), InsertOutcome::Duplicate);
        assert_eq!(t.lookup(k).unwrap().unwrap().as_slice(), b"hello");
        assert_eq!(t.update(k, val(b"world!")).unwrap(), UpdateOutcome::Updated);
        assert_eq!(t.lookup(k).unwrap().unwrap().as_slice(), b"world!");
        assert_eq!(t.delete(k).unwrap(), DeleteOutcome::Deleted);
        assert_eq!(t.delete(k).unwrap(), DeleteOutcome::Absent);
        assert_eq!(t.update(k, val(b"x")).unwrap(), UpdateOutcome::Absent);
        assert_eq!(t.lookup(k).unwrap(), None);
    }

    #[test]
    fn committed_ops_have_exact_flush_fence_counts() {
        let pm = region(256);
        let t = HashTable::create(Arc::clone(&pm), 64, AddedRatio::NONE).unwrap();
        let keys: Vec<Key> = (0..40).map(key_from_id).collect();

        let before = pm.stats();
        for k in &keys {
            assert_eq!(t.insert(*k, val(b"v1")).unwrap(), InsertOutcome::Inserted);
        }
        let after = pm.stats();
        assert_eq!(
            after.tag(OpTag::Insert).flush_fence_sequences
                - before.tag(OpTag::Insert).flush_fence_sequences,
            80
        );
        assert_eq!(
            after.tag(OpTag::Insert).atomic_stores - before.tag(OpTag::Insert).atomic_stores,
            40
        );

        let before = pm.stats();
        for k in &keys {
            assert_eq!(t.update(*k, val(b"v2")).unwrap(), UpdateOutcome::Updated);
        }
        let after = pm.stats();
        assert_eq!(
            after.tag(OpTag::Update).flush_fence_sequences
                - before.tag(OpTag::Update).flush_fence_sequences,
            80
        );

        let before = pm.stats();
        for k in &keys {
            assert_eq!(t.delete(*k).unwrap(), DeleteOutcome::Deleted);
        }
        let after = pm.stats();
        assert_eq!(
            after.tag(OpTag::Delete).flush_fence_sequences
                - before.tag(OpTag::Delete).flush_fence_sequences,
            40
        );
        // Probe-only outcomes write nothing.
        let before = pm.stats();
        assert_eq!(t.delete(keys[0]).unwrap(), DeleteOutcome::Absent);
        assert_eq!(t.update(keys[0], val(b"x")).unwrap(), UpdateOutcome::Absent);
        let after = pm.stats();
        assert_eq!(after.tag(OpTag::Delete), before.tag(OpTag::Delete));
        assert_eq!(after.tag(OpTag::Update), before.tag(OpTag::Update));
    }

    #[test]
    fn pair_fills_then_group_extends_then_quota_runs_out() {
        let pm = region(64);
        let t = HashTable::create(pm, 20, "1/10".parse().unwrap()).unwrap();
        assert_eq!(t.quota(), 1);
        // Even-homed keys of bucket 6 probe slots 0..16 of pair 3.
        let keys = keys_for_bucket(20, 6, 30);
        for k in &keys[..16] {
            assert_eq!(t.insert(*k, val(b"v")).unwrap(), InsertOutcome::Inserted);
        }
        assert_eq!(
            t.insert(keys[16], val(b"v")).unwrap(),
            InsertOutcome::Full { pair: 3 }
        );
        t.add_sbucket_group(3).unwrap();
        assert!(matches!(
            t.add_sbucket_group(3),
            Err(Error::GroupAlreadyAdded(3))
        ));
        for k in &keys[16..28] {
            assert_eq!(t.insert(*k, val(b"v")).unwrap(), InsertOutcome::Inserted);
        }
        assert_eq!(
            t.insert(keys[28], val(b"v")).unwrap(),
            InsertOutcome::Full { pair: 3 }
        );
        assert!(matches!(t.add_sbucket_group(4), Err(Error::QuotaExhausted)));
        // Everything stored through the group is still found.
        for k in &keys[..28] {
            assert!(t.lookup(*k).unwrap().is_some());
        }
        assert_eq!(t.added_groups(), 1);
    }

    #[test]
    fn both_homes_share_the_pair_slots() {
        let t = HashTable::create(region(64), 20, AddedRatio::NONE).unwrap();
        let even = keys_for_bucket(20, 8, 10);
        let odd = keys_for_bucket(20, 9, 10);
        for k in even.iter().chain(odd.iter()) {
            assert_eq!(t.insert(*k, val(b"v")).unwrap(), InsertOutcome::Inserted);
        }
        // 20 items fill the pair completely.
        let extra = keys_for_bucket(20, 8, 11);
        assert_eq!(
            t.insert(extra[10], val(b"v")).unwrap(),
            InsertOutcome::Full { pair: 4 }
        );
        for k in even.iter().chain(odd.iter()) {
            assert!(t.lookup(*k).unwrap().is_some());
        }
    }

    #[test]
    fn update_moves_the_item_and_frees_the_old_slot() {
        let t = HashTable::create(region(64), 20, AddedRatio::NONE).unwrap();
        let keys = keys_for_bucket(20, 2, 16);
        for k in &keys[..15] {
            t.insert(*k, val(b"a")).unwrap();
        }
        // One free slot left; update uses it and releases the old one.
        t.update(keys[0], val(b"b")).unwrap();
        assert_eq!(t.lookup(keys[0]).unwrap().unwrap().as_slice(), b"b");
        assert_eq!(t.insert(keys[15], val(b"c")).unwrap(), InsertOutcome::Inserted);
        let o = t.occupancy().unwrap();
        assert_eq!(o.items, 16);
    }

    #[test]
    fn resize_doubles_and_preserves_items() {
        let pm = region(256);
        let t = HashTable::create(pm, 20, "1/10".parse().unwrap()).unwrap();
        let mut items = std::collections::BTreeMap::new();
        for i in 0..120u64 {
            let k = key_from_id(i);
            let v = val(format!("{i:x}").as_bytes());
            match t.insert(k, v).unwrap() {
                InsertOutcome::Inserted => {
                    items.insert(k, v);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(t.buckets(), 20);
        t.resize(0).unwrap();
        assert_eq!(t.buckets(), 40);
        assert_eq!(t.epoch(), 1);
        assert_eq!(t.resizes(), 1);
        // Stale-epoch resize is a no-op.
        t.resize(0).unwrap();
        assert_eq!(t.buckets(), 40);

        let mut got = t.entries().unwrap();
        got.sort_by_key(|(k, _)| *k);
        let want: Vec<(Key, Value)> = items.iter().map(|(k, v)| (*k, *v)).collect();
        assert_eq!(got, want);
        for (k, v) in &items {
            assert_eq!(t.lookup(*k).unwrap().unwrap(), *v);
        }
        // The table still works after the swap.
        let k = key_from_id(10_000);
        t.insert(k, val(b"post")).unwrap();
        assert_eq!(t.lookup(k).unwrap().unwrap().as_slice(), b"post");
    }

    #[test]
    fn resize_migrates_group_items_and_resets_quota() {
        let pm = region(256);
        let t = HashTable::create(pm, 20, "1/10".parse().unwrap()).unwrap();
        let keys = keys_for_bucket(20, 6, 20);
        for k in &keys[..16] {
            t.insert(*k, val(b"v")).unwrap();
        }
        t.add_sbucket_group(3).unwrap();
        for k in &keys[16..20] {
            t.insert(*k, val(b"v")).unwrap();
        }
        assert_eq!(t.added_groups(), 1);
        t.resize(0).unwrap();
        assert_eq!(t.buckets(), 40);
        // Fresh epoch: directory starts empty unless migration overflowed.
        assert_eq!(t.added_groups(), 0);
        assert_eq!(t.quota(), 2);
        for k in &keys {
            assert!(t.lookup(*k).unwrap().is_some(), "{k:?} lost in resize");
        }
    }

    #[test]
    fn clean_recovery_restores_everything() {
        let pm = region(256);
        let t = HashTable::create(Arc::clone(&pm), 20, "1/10".parse().unwrap()).unwrap();
        for i in 0..100u64 {
            t.insert(key_from_id(i), val(&i.to_le_bytes()[..6])).unwrap();
        }
        t.resize(0).unwrap();
        for i in 100..140u64 {
            t.insert(key_from_id(i), val(&i.to_le_bytes()[..6])).unwrap();
        }
        for i in 0..20u64 {
            t.delete(key_from_id(i)).unwrap();
        }
        let mut want = t.entries().unwrap();
        want.sort_by_key(|(k, _)| *k);

        // Nothing is in flight, so any seed recovers the same bytes.
        let img = pm.crash(41);
        let t2 = HashTable::recover(Arc::new(PmRegion::from_image(&img))).unwrap();
        let mut got = t2.entries().unwrap();
        got.sort_by_key(|(k, _)| *k);
        assert_eq!(got, want);
        assert_eq!(t2.epoch(), 1);
        assert_eq!(t2.buckets(), 40);
        // And it keeps working.
        t2.insert(key_from_id(999), val(b"late")).unwrap();
        assert!(t2.lookup(key_from_id(999)).unwrap().is_some());
    }

    #[test]
    fn staged_bytes_without_indicator_bit_stay_invisible() {
        let pm = region(64);
        let t = HashTable::create(Arc::clone(&pm), 20, AddedRatio::NONE).unwrap();
        t.insert(key_from_id(1), val(b"keep")).unwrap();
        // Stage a second item's bytes the way insert would, then "crash"
        // before the indicator store.
        let k = key_from_id(2);
        let st_geo = TableGeometry::new(ARENA_BASE, 20).unwrap();
        let bucket = st_geo.bucket_for_hash(Fnv1a64.hash(k.as_bytes()));
        let pair = st_geo.pair_of_bucket(bucket);
        let free = (0..PRIMARY_SLOTS)
            .find(|c| {
                let ind = pm.read_u64(st_geo.indicator_offset(pair)).unwrap();
                !is_set(ind, *c)
            })
            .unwrap();
        let off = st_geo.slot_offset(pair, free);
        pm.store(off, &encode_slot(&k, &val(b"lost")), OpTag::Insert).unwrap();
        pm.flush_range(off, SLOT_LEN, OpTag::Insert).unwrap();
        pm.fence(OpTag::Insert);

        for seed in [1u64, 2, 3, 99] {
            let t2 = HashTable::recover(Arc::new(PmRegion::from_image(&pm.crash(seed)))).unwrap();
            assert!(t2.lookup(key_from_id(1)).unwrap().is_some());
            assert_eq!(t2.lookup(k).unwrap(), None);
            assert_eq!(t2.entries().unwrap().len(), 1);
        }
    }

    #[test]
    fn interrupted_resize_recovers_to_the_new_epoch() {
        // Deterministic script, run twice: first to find the resize's event
        // span, then re-run with trips armed inside the migration window.
        let build = |pm: &Arc<PmRegion>| {
            let t = HashTable::create(Arc::clone(pm), 20, "1/10".parse().unwrap()).unwrap();
            for i in 0..90u64 {
                t.insert(key_from_id(i), val(&[i as u8; 5])).unwrap();
            }
            t
        };
        let pm = region(256);
        let t = build(&pm);
        let e0 = pm.event_count();
        t.resize(0).unwrap();
        let e1 = pm.event_count();
        assert!(e1 > e0 + 100, "resize span too small to probe");

        let mut epochs_seen = std::collections::BTreeSet::new();
        for frac in [5, 10, 25, 40, 50, 60, 75, 90, 99] {
            let at = e0 + (e1 - e0) * frac / 100;
            for seed in [5u64, 6] {
                let pm2 = region(256);
                let t2 = build(&pm2);
                pm2.arm_trips(&[Trip { at_event: at, seed }]);
                t2.resize(0).unwrap();
                let img = pm2.drain_captures().pop().expect("trip did not fire");

                // Before the resizing-flag commit the crash discards the
                // resize; after it, recovery rolls the migration forward.
                // Either way every item survives.
                let rec = HashTable::recover(Arc::new(PmRegion::from_image(&img))).unwrap();
                epochs_seen.insert(rec.epoch());
                match rec.epoch() {
                    0 => assert_eq!(rec.buckets(), 20),
                    1 => assert_eq!(rec.buckets(), 40),
                    e => panic!("impossible epoch {e}"),
                }
                let got = rec.entries().unwrap();
                assert_eq!(got.len(), 90, "trip at {at} seed {seed} lost items");
                for i in 0..90u64 {
                    let v = rec.lookup(key_from_id(i)).unwrap().expect("missing key");
                    assert_eq!(v.as_slice(), &[i as u8; 5]);
                }
                // The recovered table still takes writes.
                rec.insert(key_from_id(500), val(b"post")).unwrap();
                assert!(rec.lookup(key_from_id(500)).unwrap().is_some());
            }
        }
        // The sweep must straddle the commit point to mean anything.
        assert_eq!(
            epochs_seen.into_iter().collect::<Vec<_>>(),
            vec![0, 1],
            "trips never crossed the resize commit point"
        );
    }

    #[test]
    fn meta_snapshot_tracks_groups_and_resizes() {
        let t = HashTable::create(region(256), 20, "1/10".parse().unwrap()).unwrap();
        let m0 = t.meta_snapshot();
        assert_eq!(m0.epoch, 0);
        assert!(!m0.resizing);
        assert_eq!(m0.active.groups.iter().filter(|&&a| a != 0).count(), 0);

        let keys = keys_for_bucket(20, 6, 17);
        for k in &keys[..16] {
            t.insert(*k, val(b"v")).unwrap();
        }
        t.add_sbucket_group(3).unwrap();
        let m1 = t.meta_snapshot();
        assert!(m1.version > m0.version);
        assert_ne!(m1.active.groups[3], 0);

        t.resize(0).unwrap();
        let m2 = t.meta_snapshot();
        assert!(m2.version > m1.version);
        assert_eq!(m2.epoch, 1);
        assert_eq!(m2.active.buckets, 40);
        assert!(!m2.resizing);
        assert!(m2.old.is_none());
    }

    #[test]
    fn occupancy_and_load_factor() {
        let t = HashTable::create(region(64), 20, AddedRatio::NONE).unwrap();
        for i in 0..50u64 {
            t.insert(key_from_id(i), val(b"v")).unwrap();
        }
        let o = t.occupancy().unwrap();
        assert_eq!(o.items, 50);
        assert_eq!(o.primary_capacity, 200);
        assert_eq!(o.capacity, 200);
        assert!((o.load_factor() - 0.25).abs() < 1e-9);
    }
}
