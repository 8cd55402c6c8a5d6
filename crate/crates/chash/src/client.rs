//! Client side of the store.
//!
//! A get is resolved from the client alone: hash the key, read the home
//! bucket's 520-byte segment in one one-sided round trip, and walk the probe
//! order locally against the indicator bits that came back in the same
//! snapshot. Only when the indicator shows occupied added slots does a
//! second read fetch the pair's added group. All addressing comes from
//! cached connection metadata; the server bumps a version counter whenever
//! the metadata changes (group added, resize started or finished), and the
//! client refreshes its cache off the control channel — no extra fabric
//! round trips.
//!
//! A miss is only trusted when the metadata version did not move while the
//! search ran; otherwise the search re-runs on fresh metadata. While a
//! resize is migrating, the old table is searched first (items move old to
//! new, so a miss there is final only after the new table also misses).
//!
//! Writes are single round trips: a request frame to the server, a
//! completion back after the server's durability fence.

use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hash::{Fnv1a64, KeyHasher};
use crate::layout::{
    added_scan, decode_slot, is_set, primary_scan, segment_indicator_offset, segment_slot_offset,
    Key, TableGeometry, Value, ADDED_FIRST, ADDED_MASK, GROUP_LEN, SLOT_LEN,
};
use crate::server::MetaBus;
use crate::table::{MetaSnapshot, TableMeta};
use crate::transport::{Endpoint, Fabric, OpCode, RequestFrame, Status};

const MAX_GET_ATTEMPTS: usize = 16;

/// Round-trip accounting for gets, as observed by this client.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GetStats {
    pub gets: u64,
    pub reads: u64,
    pub max_reads_one_get: u64,
    /// Gets that took 1, 2, 3, and 4-or-more reads.
    pub hist: [u64; 4],
}

impl GetStats {
    pub fn mean_reads(&self) -> f64 {
        if self.gets == 0 {
            0.0
        } else {
            self.reads as f64 / self.gets as f64
        }
    }

    fn record(&mut self, reads: u64) {
        self.gets += 1;
        self.reads += reads;
        self.max_reads_one_get = self.max_reads_one_get.max(reads);
        let bucket = (reads.clamp(1, 4) - 1) as usize;
        self.hist[bucket] += 1;
    }
}

pub struct Client {
    endpoint: Endpoint,
    rkey: u32,
    qid: u32,
    bus: Arc<MetaBus>,
    client_id: u32,
    next_request_id: u64,
    meta: MetaSnapshot,
    hasher: Fnv1a64,
    pub timeout: Duration,
    stats: GetStats,
}

impl Client {
    pub fn new(fabric: Arc<Fabric>, rkey: u32, qid: u32, bus: Arc<MetaBus>, client_id: u32) -> Client {
        let meta = bus.snapshot();
        Client {
            endpoint: Endpoint::new(fabric),
            rkey,
            qid,
            bus,
            client_id,
            next_request_id: 0,
            meta,
            hasher: Fnv1a64,
            timeout: Duration::from_secs(10),
            stats: GetStats::default(),
        }
    }

    pub fn get(&mut self, key: Key) -> Result<Option<Value>> {
        let mut reads = 0u64;
        for _ in 0..MAX_GET_ATTEMPTS {
            if self.meta.version != self.bus.version() {
                self.meta = self.bus.snapshot();
            }
            let version = self.meta.version;
            let found = if self.meta.resizing {
                let old = self.meta.old.as_ref().expect("resizing without old table");
                match self.search_table(old, key, &mut reads)? {
                    Some(v) => Some(v),
                    None => self.search_table(&self.meta.active, key, &mut reads)?,
                }
            } else {
                self.search_table(&self.meta.active, key, &mut reads)?
            };
            if let Some(v) = found {
                self.stats.record(reads);
                return Ok(Some(v));
            }
            // A miss while the metadata moved under us proves nothing; a
            // miss on stable metadata is a real absence.
            if self.bus.version() == version {
                self.stats.record(reads);
                return Ok(None);
            }
        }
        Err(Error::Protection(
            "metadata kept changing across get retries".into(),
        ))
    }

    fn search_table(&self, tm: &TableMeta, key: Key, reads: &mut u64) -> Result<Option<Value>> {
        let geo = TableGeometry::new(tm.base, tm.buckets)?;
        let bucket = geo.bucket_for_hash(self.hasher.hash(key.as_bytes()));
        let even = bucket % 2 == 0;
        let pair = geo.pair_of_bucket(bucket);
        let (seg_off, seg_len) = geo.segment_of_bucket(bucket);

        let seg = self.endpoint.read(self.rkey, seg_off, seg_len)?;
        *reads += 1;
        let ind_off = segment_indicator_offset(even);
        let ind = u64::from_le_bytes(seg[ind_off..ind_off + 8].try_into().unwrap());

        for c in primary_scan(even) {
            if is_set(ind, c) {
                let off = segment_slot_offset(even, c).expect("probe slot outside segment");
                let (k, v) = decode_slot(&seg[off..off + SLOT_LEN])?;
                if k == key {
                    return Ok(Some(v));
                }
            }
        }

        if ind & ADDED_MASK != 0 {
            let group_addr = tm.groups.get(pair).copied().unwrap_or(0);
            if group_addr == 0 {
                // Added bits with no cached group address: the metadata is
                // stale, and the caller's version check forces a retry.
                return Ok(None);
            }
            let group = self.endpoint.read(self.rkey, group_addr, GROUP_LEN)?;
            *reads += 1;
            for c in added_scan() {
                if is_set(ind, c) {
                    let off = (c - ADDED_FIRST) * SLOT_LEN;
                    let (k, v) = decode_slot(&group[off..off + SLOT_LEN])?;
                    if k == key {
                        return Ok(Some(v));
                    }
                }
            }
        }
        Ok(None)
    }

    pub fn insert(&mut self, key: Key, value: Value) -> Result<Status> {
        self.write_op(OpCode::Insert, key, value)
    }

    pub fn update(&mut self, key: Key, value: Value) -> Result<Status> {
        self.write_op(OpCode::Update, key, value)
    }

    pub fn delete(&mut self, key: Key) -> Result<Status> {
        self.write_op(OpCode::Delete, key, Value::new(b"").unwrap())
    }

    fn write_op(&mut self, opcode: OpCode, key: Key, value: Value) -> Result<Status> {
        let frame = RequestFrame {
            opcode,
            client_id: self.client_id,
            request_id: self.next_request_id,
            key,
            value,
        };
        self.next_request_id += 1;
        Ok(self.endpoint.rpc(self.qid, &frame, self.timeout)?.status)
    }

    pub fn stats(&self) -> GetStats {
        self.stats
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Force the next operation to re-fetch metadata (tests).
    pub fn invalidate_meta(&mut self) {
        self.meta.version = u64::MAX;
    }
}
