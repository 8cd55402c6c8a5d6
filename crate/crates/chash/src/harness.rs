//! Verification harness: seeded crash sweeps against a reference model, and
//! a linearizability checker for small concurrent histories.
//!
//! The sweep runs a scripted single-threaded workload once per seed to learn
//! which persistence events belong to which op, then replays it with crash
//! captures armed at every event boundary. Each captured image is recovered
//! and compared against the model: the recovered contents must equal the
//! model just before or just after the op the crash interrupted (the
//! in-flight op is the only thing allowed to be undecided, and it must be
//! all-or-nothing), and every visible value must carry a valid checksum.
//! A subset of captures that recover through resize roll-forward get a
//! second, nested crash injected into the recovery itself.
//!
//! Values are self-sealing: 4 nonce bytes plus 4 checksum bytes over
//! (key, nonce), so torn or misplaced slot bytes cannot masquerade as any
//! committed value.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::key_of_id;
use crate::error::{Error, Result};
use crate::hash::{Fnv1a64, KeyHasher};
use crate::layout::{Key, Value};
use crate::pm::{PmRegion, Trip};
use crate::server::execute_op;
use crate::table::{AddedRatio, HashTable};
use crate::transport::{OpCode, Status};

/// 4 nonce bytes ‖ 4 checksum bytes over (key ‖ nonce).
pub fn sealed_value(key: &Key, nonce: u32) -> Value {
    let mut buf = [0u8; 8];
    buf[..4].copy_from_slice(&nonce.to_le_bytes());
    let mut h_in = [0u8; 20];
    h_in[..16].copy_from_slice(key.as_bytes());
    h_in[16..].copy_from_slice(&nonce.to_le_bytes());
    let sum = (Fnv1a64.hash(&h_in) as u32).to_le_bytes();
    buf[4..].copy_from_slice(&sum);
    Value::new(&buf).unwrap()
}

pub fn check_sealed(key: &Key, v: &Value) -> bool {
    if v.len() != 8 {
        return false;
    }
    let nonce = u32::from_le_bytes(v.as_slice()[..4].try_into().unwrap());
    *v == sealed_value(key, nonce)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptOp {
    pub op: OpCode,
    pub id: u64,
    pub nonce: u32,
}

#[derive(Debug, Clone)]
pub struct Script {
    pub ops: Vec<ScriptOp>,
    pub initial_buckets: usize,
    pub ratio: AddedRatio,
    pub region_bytes: usize,
}

pub type Model = BTreeMap<u64, Value>;

/// Apply one op to the reference model with the store's semantics
/// (duplicate inserts and absent updates/deletes are no-ops).
pub fn apply_to_model(model: &mut Model, op: &ScriptOp) {
    let key = key_of_id(op.id);
    match op.op {
        OpCode::Insert => {
            model.entry(op.id).or_insert_with(|| sealed_value(&key, op.nonce));
        }
        OpCode::Update => {
            if let Some(v) = model.get_mut(&op.id) {
                *v = sealed_value(&key, op.nonce);
            }
        }
        OpCode::Delete => {
            model.remove(&op.id);
        }
    }
}

/// A deterministic insert/update/delete mix sized to push a small table
/// through added-group attachment and at least one doubling.
pub fn mixed_script(seed: u64, n_ops: usize, initial_buckets: usize, ratio: AddedRatio) -> Script {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model = BTreeMap::new();
    let mut ops = Vec::with_capacity(n_ops);
    // Key domain ~1.3x the initial primary capacity; the ramp below packs
    // the table to ~95% of primary capacity with distinct inserts, so any
    // script longer than the ramp is certain to cross the resize trigger.
    let domain = (initial_buckets as u64) * 10 * 13 / 10;
    let ramp = (initial_buckets * 10 * 95 / 100).min(n_ops);
    let mut ids: Vec<u64> = (0..domain).collect();
    ids.shuffle(&mut rng);
    for (nonce, &id) in ids[..ramp].iter().enumerate() {
        let op = ScriptOp {
            op: OpCode::Insert,
            id,
            nonce: nonce as u32,
        };
        apply_to_model(&mut model, &op);
        ops.push(op);
    }
    for nonce in ramp as u32..n_ops as u32 {
        let present: Vec<u64> = model.keys().copied().collect();
        let roll: u32 = rng.gen_range(0..100);
        let op = if present.is_empty() || roll < 60 {
            ScriptOp {
                op: OpCode::Insert,
                id: rng.gen_range(0..domain),
                nonce,
            }
        } else if roll < 80 {
            ScriptOp {
                op: OpCode::Update,
                id: present[rng.gen_range(0..present.len())],
                nonce,
            }
        } else {
            ScriptOp {
                op: OpCode::Delete,
                id: present[rng.gen_range(0..present.len())],
                nonce,
            }
        };
        apply_to_model(&mut model, &op);
        ops.push(op);
    }
    Script {
        ops,
        initial_buckets,
        ratio,
        region_bytes: 256 << 10,
    }
}

fn run_script_op(table: &HashTable, op: &ScriptOp) -> Result<()> {
    let key = key_of_id(op.id);
    let value = sealed_value(&key, op.nonce);
    match execute_op(table, op.op, key, value) {
        Status::Ok | Status::Absent | Status::Duplicate => Ok(()),
        Status::Error => Err(Error::Integrity(format!("script op failed: {op:?}"))),
    }
}

#[derive(Debug, Default, Serialize)]
pub struct SweepReport {
    /// Persistence events one scripted run produces (trip sites per seed).
    pub events_in_script: u64,
    /// Resizes the script drives the table through.
    pub resizes_in_script: u64,
    /// Crash injections whose recovered state was checked.
    pub trips: u64,
    /// Injections that interrupted a resize or its roll-forward.
    pub mid_resize_trips: u64,
    /// Second-order injections into recovery itself.
    pub nested_trips: u64,
    pub violations: Vec<String>,
}

impl SweepReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct DryRun {
    /// Event count when table creation finished; crashes before this point
    /// have no committed table to recover.
    created_at: u64,
    total_events: u64,
    /// Per op: events (start, end] it produced, and the model after it.
    spans: Vec<(u64, u64)>,
    models: Vec<Model>,
    /// Ops whose span allocated a resize (events jumped far).
    resizes_seen: u64,
}

fn dry_run(script: &Script) -> Result<DryRun> {
    let pm = Arc::new(PmRegion::new(script.region_bytes)?);
    let table = HashTable::create(Arc::clone(&pm), script.initial_buckets, script.ratio)?;
    let created_at = pm.event_count();
    let mut spans = Vec::with_capacity(script.ops.len());
    let mut models = Vec::with_capacity(script.ops.len());
    let mut model: Model = BTreeMap::new();
    let mut at = created_at;
    for op in &script.ops {
        run_script_op(&table, op)?;
        let now = pm.event_count();
        spans.push((at, now));
        at = now;
        apply_to_model(&mut model, op);
        models.push(model.clone());
    }
    Ok(DryRun {
        created_at,
        total_events: at,
        spans,
        models,
        resizes_seen: table.resizes(),
    })
}

/// Read every visible entry back as (id, value), verifying seals and that
/// no foreign key ever surfaces.
pub fn table_as_model(table: &HashTable) -> Result<(Model, Vec<String>)> {
    let mut got: Model = BTreeMap::new();
    let mut complaints = Vec::new();
    for (key, value) in table.entries()? {
        if !check_sealed(&key, &value) {
            complaints.push(format!("checksum mismatch on visible key {key:?}"));
            continue;
        }
        let id = u64::from_str_radix(std::str::from_utf8(key.as_bytes()).unwrap_or("zz"), 16)
            .map_err(|_| Error::Integrity(format!("foreign key surfaced: {key:?}")))?;
        got.insert(id, value);
    }
    Ok((got, complaints))
}

/// Jitter window for the early nested injection into a roll-forward.
const NESTED_JITTER: u64 = 7;
/// Captures per replay batch; bounds image memory.
const BATCH: usize = 64;

pub fn crash_sweep(script: &Script, seeds: &[u64]) -> Result<SweepReport> {
    let dry = dry_run(script)?;
    let mut report = SweepReport {
        events_in_script: dry.total_events - dry.created_at,
        resizes_in_script: dry.resizes_seen,
        ..SweepReport::default()
    };

    let op_of_event = |e: u64| -> usize {
        debug_assert!(e > dry.created_at && e <= dry.total_events);
        dry.spans.partition_point(|&(_, end)| end < e)
    };

    for &seed in seeds {
        let mut next = dry.created_at + 1;
        while next <= dry.total_events {
            let batch: Vec<Trip> = (0..BATCH as u64)
                .map(|i| next + i)
                .take_while(|&e| e <= dry.total_events)
                .map(|e| Trip { at_event: e, seed })
                .collect();
            next += batch.len() as u64;

            let pm = Arc::new(PmRegion::new(script.region_bytes)?);
            let table = HashTable::create(Arc::clone(&pm), script.initial_buckets, script.ratio)?;
            if pm.event_count() != dry.created_at {
                return Err(Error::Integrity("creation replay diverged".into()));
            }
            pm.arm_trips(&batch);
            let last_needed = batch.last().unwrap().at_event;
            for (k, op) in script.ops.iter().enumerate() {
                run_script_op(&table, op)?;
                if dry.spans[k].1 >= last_needed {
                    break;
                }
            }
            let captures = pm.drain_captures();
            if captures.len() != batch.len() {
                return Err(Error::Integrity(format!(
                    "replay diverged: {} captures for {} armed trips",
                    captures.len(),
                    batch.len()
                )));
            }

            for img in captures {
                let k = op_of_event(img.event_index);
                report.trips += 1;
                check_recovery(
                    &dry,
                    k,
                    &img.bytes,
                    img.event_index,
                    seed,
                    true,
                    &mut report,
                )?;
            }
        }
    }
    Ok(report)
}

/// Recover a crashed image and compare against the model, optionally
/// injecting nested crashes into the recovery when it has work to do.
fn check_recovery(
    dry: &DryRun,
    k: usize,
    bytes: &[u8],
    event: u64,
    seed: u64,
    allow_nested: bool,
    report: &mut SweepReport,
) -> Result<()> {
    let pm = Arc::new(PmRegion::from_bytes(bytes));
    let table = match HashTable::recover(Arc::clone(&pm)) {
        Ok(t) => t,
        Err(e) => {
            report
                .violations
                .push(format!("event {event} seed {seed}: recovery failed: {e}"));
            return Ok(());
        }
    };
    let recovery_events = pm.event_count();
    if recovery_events > 0 {
        report.mid_resize_trips += 1;
    }

    let (got, mut complaints) = table_as_model(&table)?;
    report.violations.extend(
        complaints
            .drain(..)
            .map(|c| format!("event {event} seed {seed}: {c}")),
    );
    let empty = Model::new();
    let after = &dry.models[k];
    let before = if k == 0 { &empty } else { &dry.models[k - 1] };
    if got != *after && got != *before {
        report.violations.push(format!(
            "event {event} seed {seed}: recovered {} items matching neither model \
             before nor after op {k}",
            got.len()
        ));
    }

    // Nested: crash the recovery's own roll-forward — once early (jittered)
    // and once halfway through — then recover again. Two samples per trip
    // keep the sweep linear in the script's event count.
    if allow_nested && recovery_events > 0 {
        let first = 1 + (event + seed) % recovery_events.min(NESTED_JITTER);
        let mut picks = vec![first];
        let second = first + recovery_events / 2;
        if second != first && second <= recovery_events {
            picks.push(second);
        }
        for e in picks {
            let pm2 = Arc::new(PmRegion::from_bytes(bytes));
            pm2.arm_trips(&[Trip {
                at_event: e,
                seed: seed ^ 0xD1F3,
            }]);
            if let Err(err) = HashTable::recover(Arc::clone(&pm2)) {
                report
                    .violations
                    .push(format!("event {event} seed {seed} nested {e}: {err}"));
            }
            let caps = pm2.drain_captures();
            if caps.len() != 1 {
                return Err(Error::Integrity("nested recovery replay diverged".into()));
            }
            report.nested_trips += 1;
            check_recovery(dry, k, &caps[0].bytes, event, seed ^ 0xD1F3, false, report)?;
        }
    }
    Ok(())
}


/// Linearizability checking for small single-key histories by exhaustive
/// enumeration of linearization orders.
pub mod linear {
    use crate::layout::Value;
    use std::collections::HashSet;

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub enum HOp {
        /// Write this value (update of a pre-inserted key).
        Update(Value),
        /// Read; the observed result.
        Get(Option<Value>),
    }

    /// One completed operation with its real-time bracket: `call` strictly
    /// precedes `resp`, both drawn from one global sequencer.
    #[derive(Debug, Clone)]
    pub struct HEvent {
        pub client: usize,
        pub op: HOp,
        pub call: u64,
        pub resp: u64,
    }

    /// Wing–Gong style search: some pending op whose call precedes every
    /// other pending op's response is linearized first; recurse.
    pub fn check_single_key(initial: Option<Value>, history: &[HEvent]) -> bool {
        assert!(history.len() <= 20, "enumerator is for small histories");
        let mut seen = HashSet::new();
        search(initial, history, (1u32 << history.len()) - 1, &mut seen)
    }

    fn search(
        state: Option<Value>,
        history: &[HEvent],
        remaining: u32,
        seen: &mut HashSet<(u32, Option<Value>)>,
    ) -> bool {
        if remaining == 0 {
            return true;
        }
        if !seen.insert((remaining, state)) {
            return false;
        }
        let min_resp = history
            .iter()
            .enumerate()
            .filter(|(i, _)| remaining & (1 << i) != 0)
            .map(|(_, e)| e.resp)
            .min()
            .unwrap();
        for (i, e) in history.iter().enumerate() {
            if remaining & (1 << i) == 0 || e.call > min_resp {
                continue;
            }
            let next_state = match &e.op {
                HOp::Update(v) => Some(*v),
                HOp::Get(observed) => {
                    if *observed != state {
                        continue;
                    }
                    state
                }
            };
            if search(next_state, history, remaining & !(1 << i), seen) {
                return true;
            }
        }
        false
    }
}
