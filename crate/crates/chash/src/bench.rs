//! Workload driver: YCSB-style mixes against a running server, plus the
//! load-factor experiment.
//!
//! Runs are deterministic per client: client `i` draws every key, value, and
//! op choice from its own seeded stream, so identical config+seed replays
//! identical op sequences, and the per-op-type flush counts are identical
//! across runs. With more than one client the *interleaving* still varies,
//! which can shift where added groups land; the per-op-type flush and
//! commit counts are unaffected.
//!
//! Latency is reported in simulated round-trip units first (reads per get;
//! every write is one request/completion pair) and wall-clock microseconds
//! second — the wall clock measures this process, not any real fabric.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::client::Client;
use crate::error::{Error, Result};
use crate::hash::{Fnv1a64, KeyHasher};
use crate::layout::{Key, Value, VALUE_MAX};
use crate::pm::{OpTag, PmRegion};
use crate::server::{execute_op, Server};
use crate::table::{AddedRatio, HashTable};
use crate::transport::{Fabric, OpCode, Status};

pub const ZIPF_THETA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Workload {
    /// 50% read / 50% update, zipfian.
    A,
    /// 95% read / 5% update, zipfian.
    B,
    /// 100% read, zipfian.
    C,
    /// 95% read-latest / 5% insert.
    D,
    /// 50% read / 50% read-modify-write, zipfian.
    F,
    /// 100% reads of keys outside the loaded key space.
    Neg,
    UpdateOnly,
    InsertOnly,
    DeleteOnly,
}

impl FromStr for Workload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Workload> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Workload::A),
            "b" => Ok(Workload::B),
            "c" => Ok(Workload::C),
            "d" => Ok(Workload::D),
            "f" => Ok(Workload::F),
            "neg" => Ok(Workload::Neg),
            "update-only" => Ok(Workload::UpdateOnly),
            "insert-only" => Ok(Workload::InsertOnly),
            "delete-only" => Ok(Workload::DeleteOnly),
            other => Err(Error::Config(format!("unknown workload {other:?}"))),
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Workload::A => "A",
            Workload::B => "B",
            Workload::C => "C",
            Workload::D => "D",
            Workload::F => "F",
            Workload::Neg => "neg",
            Workload::UpdateOnly => "update-only",
            Workload::InsertOnly => "insert-only",
            Workload::DeleteOnly => "delete-only",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub workload: Workload,
    /// Keys loaded before the measured phase.
    pub keys: u64,
    /// Operations in the measured phase, split across clients.
    pub ops: u64,
    pub clients: usize,
    pub server_threads: usize,
    pub added_ratio: AddedRatio,
    pub seed: u64,
    pub region_mib: usize,
    pub initial_buckets: usize,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            workload: Workload::C,
            keys: 100_000,
            ops: 1_000_000,
            clients: 4,
            server_threads: 4,
            added_ratio: AddedRatio { num: 1, den: 10 },
            seed: 42,
            region_mib: 64,
            initial_buckets: 2048,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.server_threads == 0 {
            return Err(Error::Config("clients and server threads must be > 0".into()));
        }
        if self.ops == 0 {
            return Err(Error::Config("ops must be > 0".into()));
        }
        if self.keys == 0 && self.workload != Workload::InsertOnly {
            return Err(Error::Config("workload needs a loaded key space".into()));
        }
        if self.workload == Workload::DeleteOnly && self.ops > self.keys {
            return Err(Error::Config(
                "delete-only can delete each loaded key once; ops must be <= keys".into(),
            ));
        }
        Ok(())
    }
}

pub fn key_of_id(id: u64) -> Key {
    let s = format!("{id:016x}");
    Key(s.as_bytes().try_into().unwrap())
}

fn bench_value(rng: &mut ChaCha8Rng) -> Value {
    let len = rng.gen_range(1..=VALUE_MAX);
    let bytes: [u8; VALUE_MAX] = rng.gen();
    Value::new(&bytes[..len]).unwrap()
}

/// YCSB's scrambled zipfian: zipf over ranks, then a hash spreads the hot
/// ranks across the key space.
struct ScrambledZipf {
    zipf: Zipf<f64>,
    n: u64,
}

impl ScrambledZipf {
    fn new(n: u64) -> ScrambledZipf {
        ScrambledZipf {
            zipf: Zipf::new(n, ZIPF_THETA).expect("zipf parameters"),
            n,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let rank = self.zipf.sample(rng) as u64 - 1;
        Fnv1a64.hash(&rank.to_le_bytes()) % self.n
    }
}

/// Read-latest: zipf rank 1 is the most recently acked insert.
fn sample_latest(rng: &mut ChaCha8Rng, acked: u64) -> u64 {
    let n = acked.max(1);
    let rank = Zipf::new(n, ZIPF_THETA).expect("zipf parameters").sample(rng) as u64;
    n - rank
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct OpLatency {
    pub count: u64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn latency_of(mut us: Vec<u64>) -> OpLatency {
    us.sort_unstable();
    OpLatency {
        count: us.len() as u64,
        p50_us: percentile(&us, 0.50),
        p95_us: percentile(&us, 0.95),
        p99_us: percentile(&us, 0.99),
        max_us: us.last().copied().unwrap_or(0),
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FlushRow {
    pub flush_fence_sequences: u64,
    pub committed_ops: u64,
    pub sequences_per_op: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub keys: u64,
    pub ops: u64,
    pub clients: usize,
    pub server_threads: usize,
    pub added_ratio: String,
    pub seed: u64,

    pub load_ms: u64,
    pub run_ms: u64,
    pub throughput_ops_per_s: f64,

    pub gets: u64,
    pub hits: u64,
    pub misses: u64,
    pub inserts: u64,
    pub updates: u64,
    pub deletes: u64,
    pub rmws: u64,
    pub absent: u64,
    pub duplicate: u64,
    pub errors: u64,

    /// Reads per get: mean, max, and counts at 1 / 2 / 3 / ≥4.
    pub get_reads_mean: f64,
    pub get_reads_max: u64,
    pub get_read_hist: [u64; 4],
    /// Round-trip units per write op (request + completion).
    pub write_round_trips: u64,

    pub latency_us: BTreeMap<String, OpLatency>,
    /// Measured-phase flush/fence sequences attributed per op type.
    pub flush_per_op: BTreeMap<String, FlushRow>,

    pub one_sided_reads: u64,
    pub read_retries: u64,
    pub rpcs: u64,

    pub resizes: u64,
    pub added_groups: u64,
    pub trigger_load_factors: Vec<f64>,
    pub items: u64,
    pub load_factor: f64,
}

impl RunReport {
    pub fn append_jsonl(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let line = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "workload {}  keys {}  ops {}  clients {}  server-threads {}  added-ratio {}  seed {}",
            self.workload, self.keys, self.ops, self.clients, self.server_threads,
            self.added_ratio, self.seed
        )?;
        writeln!(
            f,
            "  load {} ms   run {} ms   {:.0} ops/s",
            self.load_ms, self.run_ms, self.throughput_ops_per_s
        )?;
        writeln!(
            f,
            "  ops: get {} (hit {} / miss {})  insert {}  update {}  delete {}  rmw {}",
            self.gets, self.hits, self.misses, self.inserts, self.updates, self.deletes, self.rmws
        )?;
        writeln!(
            f,
            "  statuses: absent {}  duplicate {}  error {}",
            self.absent, self.duplicate, self.errors
        )?;
        writeln!(
            f,
            "  reads/get: mean {:.4}  max {}  hist(1,2,3,4+) {:?}   write RTs/op {}",
            self.get_reads_mean, self.get_reads_max, self.get_read_hist, self.write_round_trips
        )?;
        for (op, l) in &self.latency_us {
            writeln!(
                f,
                "  latency[{op}] us: p50 {}  p95 {}  p99 {}  max {}  (n={})",
                l.p50_us, l.p95_us, l.p99_us, l.max_us, l.count
            )?;
        }
        for (op, r) in &self.flush_per_op {
            writeln!(
                f,
                "  flush[{op}]: {} sequences / {} committed = {:.4} per op",
                r.flush_fence_sequences, r.committed_ops, r.sequences_per_op
            )?;
        }
        writeln!(
            f,
            "  fabric: one-sided reads {}  retries {}  rpcs {}",
            self.one_sided_reads, self.read_retries, self.rpcs
        )?;
        writeln!(
            f,
            "  table: resizes {}  added groups {}  items {}  load factor {:.4}",
            self.resizes, self.added_groups, self.items, self.load_factor
        )?;
        if !self.trigger_load_factors.is_empty() {
            let pts: Vec<String> = self
                .trigger_load_factors
                .iter()
                .map(|lf| format!("{lf:.3}"))
                .collect();
            writeln!(f, "  load factor at resize: [{}]", pts.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    ops: u64,
    gets: u64,
    hits: u64,
    misses: u64,
    inserts: u64,
    updates: u64,
    deletes: u64,
    rmws: u64,
    absent: u64,
    duplicate: u64,
    errors: u64,
    insert_ok: u64,
    update_ok: u64,
    delete_ok: u64,
    lat: BTreeMap<&'static str, Vec<u64>>,
}

impl Tally {
    fn push_lat(&mut self, op: &'static str, us: u64) {
        self.lat.entry(op).or_default().push(us);
    }

    /// Tally a write status; true means the op committed.
    fn status(&mut self, s: Status) -> bool {
        match s {
            Status::Ok => return true,
            Status::Absent => self.absent += 1,
            Status::Duplicate => self.duplicate += 1,
            Status::Error => self.errors += 1,
        }
        false
    }
}

struct ClientPlan {
    idx: usize,
    ops: u64,
    stripe: std::ops::Range<u64>,
}

fn client_seed(seed: u64, idx: usize, phase: u64) -> u64 {
    // splitmix64 over (seed, idx, phase) so streams never collide.
    let mut z = seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (phase << 56);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_workload(cfg: &BenchConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pm = Arc::new(PmRegion::new(cfg.region_mib << 20)?);
    let table = Arc::new(HashTable::create(pm, cfg.initial_buckets, cfg.added_ratio)?);
    let server = Server::start(Arc::clone(&table), Fabric::new(), cfg.server_threads);

    let mut clients: Vec<Client> = (0..cfg.clients).map(|i| server.connect(i as u32)).collect();

    // Load phase: stripe the key space across clients.
    let load_start = Instant::now();
    let per = cfg.keys / cfg.clients as u64;
    let extra = cfg.keys % cfg.clients as u64;
    let mut stripes = Vec::new();
    let mut at = 0u64;
    for i in 0..cfg.clients {
        let len = per + u64::from((i as u64) < extra);
        stripes.push(at..at + len);
        at += len;
    }
    std::thread::scope(|s| -> Result<()> {
        let mut handles = Vec::new();
        for (i, (c, stripe)) in clients.iter_mut().zip(stripes.iter()).enumerate() {
            let stripe = stripe.clone();
            let seed = client_seed(cfg.seed, i, 0);
            handles.push(s.spawn(move || -> Result<()> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for id in stripe {
                    let st = c.insert(key_of_id(id), bench_value(&mut rng))?;
                    if st != Status::Ok {
                        return Err(Error::Config(format!("load insert of {id} got {st:?}")));
                    }
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("load client panicked")?;
        }
        Ok(())
    })?;
    let load_ms = load_start.elapsed().as_millis() as u64;

    let stats_before = table.pm().stats();
    let before: Vec<(u64, u64, u64)> = clients
        .iter()
        .map(|c| (c.endpoint().reads(), c.endpoint().read_retries(), c.endpoint().rpcs()))
        .collect();
    let gets_before: Vec<crate::client::GetStats> = clients.iter().map(|c| c.stats()).collect();

    // Run phase.
    let next_id = AtomicU64::new(cfg.keys);
    let acked_inserts = AtomicU64::new(cfg.keys);
    let per_ops = cfg.ops / cfg.clients as u64;
    let extra_ops = cfg.ops % cfg.clients as u64;
    let plans: Vec<ClientPlan> = stripes
        .iter()
        .enumerate()
        .map(|(i, stripe)| ClientPlan {
            idx: i,
            ops: per_ops + u64::from((i as u64) < extra_ops),
            stripe: stripe.clone(),
        })
        .collect();

    let run_start = Instant::now();
    let tallies: Vec<Tally> = std::thread::scope(|s| -> Result<Vec<Tally>> {
        let mut handles = Vec::new();
        for (c, plan) in clients.iter_mut().zip(plans) {
            let seed = client_seed(cfg.seed, plan.idx, 1);
            let next_id = &next_id;
            let acked = &acked_inserts;
            handles.push(s.spawn(move || -> Result<Tally> {
                run_client(c, cfg, plan, seed, next_id, acked)
            }));
        }
        let mut tallies = Vec::new();
        for h in handles {
            tallies.push(h.join().expect("bench client panicked")?);
        }
        Ok(tallies)
    })?;
    let run_ms = run_start.elapsed().as_millis() as u64;

    // Aggregate.
    let mut total = Tally::default();
    for t in &tallies {
        total.ops += t.ops;
        total.gets += t.gets;
        total.hits += t.hits;
        total.misses += t.misses;
        total.inserts += t.inserts;
        total.updates += t.updates;
        total.deletes += t.deletes;
        total.rmws += t.rmws;
        total.absent += t.absent;
        total.duplicate += t.duplicate;
        total.errors += t.errors;
        total.insert_ok += t.insert_ok;
        total.update_ok += t.update_ok;
        total.delete_ok += t.delete_ok;
    }
    debug_assert_eq!(total.ops, cfg.ops);
    let mut latency_us = BTreeMap::new();
    for op in ["get", "insert", "update", "delete", "rmw"] {
        let mut merged = Vec::new();
        for t in &tallies {
            if let Some(v) = t.lat.get(op) {
                merged.extend_from_slice(v);
            }
        }
        if !merged.is_empty() {
            latency_us.insert(op.to_string(), latency_of(merged));
        }
    }

    let flush_delta = table.pm().stats().delta(&stats_before);
    let mut flush_per_op = BTreeMap::new();
    for (name, tag, committed) in [
        ("insert", OpTag::Insert, total.insert_ok),
        ("update", OpTag::Update, total.update_ok),
        ("delete", OpTag::Delete, total.delete_ok),
    ] {
        let sequences = flush_delta.tag(tag).flush_fence_sequences;
        if sequences == 0 && committed == 0 {
            continue;
        }
        flush_per_op.insert(
            name.to_string(),
            FlushRow {
                flush_fence_sequences: sequences,
                committed_ops: committed,
                sequences_per_op: if committed == 0 {
                    0.0
                } else {
                    sequences as f64 / committed as f64
                },
            },
        );
    }

    let mut get_stats = crate::client::GetStats::default();
    let (mut reads, mut retries, mut rpcs) = (0u64, 0u64, 0u64);
    for (i, c) in clients.iter().enumerate() {
        let now = c.stats();
        let then = gets_before[i];
        get_stats.gets += now.gets - then.gets;
        get_stats.reads += now.reads - then.reads;
        get_stats.max_reads_one_get = get_stats.max_reads_one_get.max(now.max_reads_one_get);
        for b in 0..4 {
            get_stats.hist[b] += now.hist[b] - then.hist[b];
        }
        reads += c.endpoint().reads() - before[i].0;
        retries += c.endpoint().read_retries() - before[i].1;
        rpcs += c.endpoint().rpcs() - before[i].2;
    }

    let occ = table.occupancy()?;
    let report = RunReport {
        workload: cfg.workload.to_string(),
        keys: cfg.keys,
        ops: cfg.ops,
        clients: cfg.clients,
        server_threads: cfg.server_threads,
        added_ratio: format!("{}/{}", cfg.added_ratio.num, cfg.added_ratio.den),
        seed: cfg.seed,
        load_ms,
        run_ms,
        throughput_ops_per_s: cfg.ops as f64 / run_start.elapsed().as_secs_f64().max(1e-9),
        gets: total.gets,
        hits: total.hits,
        misses: total.misses,
        inserts: total.inserts,
        updates: total.updates,
        deletes: total.deletes,
        rmws: total.rmws,
        absent: total.absent,
        duplicate: total.duplicate,
        errors: total.errors,
        get_reads_mean: get_stats.mean_reads(),
        get_reads_max: get_stats.max_reads_one_get,
        get_read_hist: get_stats.hist,
        write_round_trips: 1,
        latency_us,
        flush_per_op,
        one_sided_reads: reads,
        read_retries: retries,
        rpcs,
        resizes: table.resizes(),
        added_groups: table.added_groups(),
        trigger_load_factors: table.resize_trigger_load_factors(),
        items: occ.items,
        load_factor: occ.load_factor(),
    };
    server.shutdown();
    Ok(report)
}

fn run_client(
    c: &mut Client,
    cfg: &BenchConfig,
    plan: ClientPlan,
    seed: u64,
    next_id: &AtomicU64,
    acked_inserts: &AtomicU64,
) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    let zipf = ScrambledZipf::new(cfg.keys.max(1));
    let mut delete_cursor = plan.stripe.start;

    for _ in 0..plan.ops {
        t.ops += 1;
        let roll: u32 = rng.gen_range(0..100);
        match cfg.workload {
            Workload::C | Workload::Neg => {
                let id = if cfg.workload == Workload::Neg {
                    cfg.keys + rng.gen_range(0..cfg.keys.max(1))
                } else {
                    zipf.sample(&mut rng)
                };
                do_get(c, &mut t, id)?;
            }
            Workload::A | Workload::B => {
                let read_pct = if cfg.workload == Workload::A { 50 } else { 95 };
                let id = zipf.sample(&mut rng);
                if roll < read_pct {
                    do_get(c, &mut t, id)?;
                } else {
                    do_update(c, &mut t, id, &mut rng)?;
                }
            }
            Workload::D => {
                if roll < 95 {
                    let id = sample_latest(&mut rng, acked_inserts.load(Ordering::Relaxed));
                    do_get(c, &mut t, id)?;
                } else {
                    let id = next_id.fetch_add(1, Ordering::Relaxed);
                    do_insert(c, &mut t, id, &mut rng)?;
                    acked_inserts.fetch_add(1, Ordering::Relaxed);
                }
            }
            Workload::F => {
                let id = zipf.sample(&mut rng);
                if roll < 50 {
                    do_get(c, &mut t, id)?;
                } else {
                    let start = Instant::now();
                    t.rmws += 1;
                    let cur = c.get(key_of_id(id))?;
                    if cur.is_some() {
                        t.hits += 1;
                    } else {
                        t.misses += 1;
                    }
                    let st = c.update(key_of_id(id), bench_value(&mut rng))?;
                    if t.status(st) {
                        t.update_ok += 1;
                    }
                    t.push_lat("rmw", start.elapsed().as_micros() as u64);
                }
            }
            Workload::UpdateOnly => {
                let id = zipf.sample(&mut rng);
                do_update(c, &mut t, id, &mut rng)?;
            }
            Workload::InsertOnly => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                do_insert(c, &mut t, id, &mut rng)?;
            }
            Workload::DeleteOnly => {
                let id = delete_cursor;
                delete_cursor += 1;
                let start = Instant::now();
                t.deletes += 1;
                let st = c.delete(key_of_id(id))?;
                if t.status(st) {
                    t.delete_ok += 1;
                }
                t.push_lat("delete", start.elapsed().as_micros() as u64);
            }
        }
    }
    Ok(t)
}

fn do_get(c: &mut Client, t: &mut Tally, id: u64) -> Result<()> {
    let start = Instant::now();
    t.gets += 1;
    if c.get(key_of_id(id))?.is_some() {
        t.hits += 1;
    } else {
        t.misses += 1;
    }
    t.push_lat("get", start.elapsed().as_micros() as u64);
    Ok(())
}

fn do_update(c: &mut Client, t: &mut Tally, id: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let start = Instant::now();
    t.updates += 1;
    let st = c.update(key_of_id(id), bench_value(rng))?;
    if t.status(st) {
        t.update_ok += 1;
    }
    t.push_lat("update", start.elapsed().as_micros() as u64);
    Ok(())
}

fn do_insert(c: &mut Client, t: &mut Tally, id: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let start = Instant::now();
    t.inserts += 1;
    let st = c.insert(key_of_id(id), bench_value(rng))?;
    if t.status(st) {
        t.insert_ok += 1;
    }
    t.push_lat("insert", start.elapsed().as_micros() as u64);
    Ok(())
}

/// One point per resize: how full the table was when the doubling ran.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LoadFactorPoint {
    pub resize_index: usize,
    pub buckets_before: usize,
    pub load_factor: f64,
}

/// Insert random keys until `resizes` doublings have happened; report the
/// load factor at each trigger.
pub fn load_factor_experiment(
    initial_buckets: usize,
    resizes: usize,
    ratio: AddedRatio,
    seed: u64,
    region_mib: usize,
) -> Result<Vec<LoadFactorPoint>> {
    let pm = Arc::new(PmRegion::new(region_mib << 20)?);
    let table = HashTable::create(pm, initial_buckets, ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut guard = 0u64;
    while (table.resizes() as usize) < resizes {
        let id: u64 = rng.gen();
        let v = bench_value(&mut rng);
        match execute_op(&table, OpCode::Insert, key_of_id(id), v) {
            Status::Ok | Status::Duplicate => {}
            st => return Err(Error::Config(format!("experiment insert got {st:?}"))),
        }
        guard += 1;
        if guard > 200_000_000 {
            return Err(Error::Config("experiment did not reach resize target".into()));
        }
    }
    Ok(table
        .resize_trigger_load_factors()
        .into_iter()
        .enumerate()
        .map(|(i, lf)| LoadFactorPoint {
            resize_index: i,
            buckets_before: initial_buckets << i,
            load_factor: lf,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(workload: Workload) -> BenchConfig {
        BenchConfig {
            workload,
            keys: 2_000,
            ops: 4_000,
            clients: 2,
            server_threads: 2,
            added_ratio: AddedRatio { num: 1, den: 10 },
            seed: 7,
            region_mib: 8,
            initial_buckets: 512,
        }
    }

    #[test]
    fn workloads_parse_and_display() {
        for w in [
            Workload::A,
            Workload::B,
            Workload::C,
            Workload::D,
            Workload::F,
            Workload::Neg,
            Workload::UpdateOnly,
            Workload::InsertOnly,
            Workload::DeleteOnly,
        ] {
            assert_eq!(w.to_string().parse::<Workload>().unwrap(), w);
        }
        assert!("E".parse::<Workload>().is_err());
    }

    #[test]
    fn update_only_flushes_two_sequences_per_op() {
        let r = run_workload(&small(Workload::UpdateOnly)).unwrap();
        assert_eq!(r.updates, 4_000);
        assert_eq!(r.errors, 0);
        let row = &r.flush_per_op["update"];
        assert_eq!(row.committed_ops, 4_000);
        assert_eq!(row.flush_fence_sequences, 8_000);
        assert_eq!(row.sequences_per_op, 2.0);
    }

    #[test]
    fn delete_only_flushes_one_sequence_per_op() {
        let mut cfg = small(Workload::DeleteOnly);
        cfg.ops = cfg.keys;
        let r = run_workload(&cfg).unwrap();
        assert_eq!(r.deletes, cfg.keys);
        assert_eq!(r.absent, 0);
        let row = &r.flush_per_op["delete"];
        assert_eq!(row.committed_ops, cfg.keys);
        assert_eq!(row.flush_fence_sequences, cfg.keys);
    }

    #[test]
    fn ycsb_c_resolves_every_get_in_one_read_without_groups() {
        let mut cfg = small(Workload::C);
        cfg.added_ratio = AddedRatio::NONE;
        let r = run_workload(&cfg).unwrap();
        assert_eq!(r.gets, 4_000);
        assert_eq!(r.hits, 4_000);
        assert_eq!(r.misses, 0);
        assert_eq!(r.get_reads_max, 1);
        assert_eq!(r.get_read_hist, [4_000, 0, 0, 0]);
    }

    #[test]
    fn negative_searches_miss_in_one_read_without_groups() {
        let mut cfg = small(Workload::Neg);
        cfg.added_ratio = AddedRatio::NONE;
        let r = run_workload(&cfg).unwrap();
        assert_eq!(r.misses, r.gets);
        assert_eq!(r.get_reads_max, 1);
    }

    #[test]
    fn single_client_runs_replay_identically() {
        let mut cfg = small(Workload::A);
        cfg.clients = 1;
        let a = run_workload(&cfg).unwrap();
        let b = run_workload(&cfg).unwrap();
        assert_eq!(
            (a.gets, a.hits, a.updates, a.absent, a.errors),
            (b.gets, b.hits, b.updates, b.absent, b.errors)
        );
        assert_eq!(a.get_read_hist, b.get_read_hist);
        assert_eq!(a.one_sided_reads, b.one_sided_reads);
        assert_eq!(a.rpcs, b.rpcs);
        assert_eq!(
            a.flush_per_op["update"].flush_fence_sequences,
            b.flush_per_op["update"].flush_fence_sequences
        );
    }

    #[test]
    fn load_factor_experiment_records_one_point_per_resize() {
        let ratio = AddedRatio { num: 1, den: 10 };
        let pts = load_factor_experiment(20, 3, ratio, 11, 4).unwrap();
        assert_eq!(pts.len(), 3);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(p.resize_index, i);
            assert_eq!(p.buckets_before, 20 << i);
            assert!(p.load_factor > 0.0 && p.load_factor <= 1.0);
        }
    }
}
