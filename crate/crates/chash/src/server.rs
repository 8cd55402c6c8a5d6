//! Server: worker threads draining the receive queue.
//!
//! Each worker decodes a request frame, runs the operation against the
//! shared table, and posts the completion. Every mutating path inside the
//! table ends with a flush/fence before it returns, so by the time the
//! completion is sent the change is durable — an acked write survives any
//! later crash.
//!
//! A full pair never surfaces to the client: the worker first attaches the
//! pair's added SBucket group, and once the group quota is spent it doubles
//! the table, then retries the operation. The resize call carries the epoch
//! the worker saw when it started, so of several workers that hit fullness
//! concurrently only one doubling actually runs.

use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::Error;
use crate::layout::{Key, Value};
use crate::table::{DeleteOutcome, HashTable, InsertOutcome, MetaSnapshot, UpdateOutcome};
use crate::transport::{Delivery, Fabric, OpCode, RequestFrame, ResponseFrame, Status};

/// How often a single request may loop through "full, expand, retry" before
/// giving up. Each pass either succeeds or grows the table, so hitting this
/// means something is structurally wrong.
const MAX_EXPANSION_ATTEMPTS: usize = 8;

/// Control channel carrying connection metadata from server to clients.
/// Stands in for the metadata exchange on connection setup plus the
/// server-pushed updates that follow structural changes.
pub struct MetaBus {
    table: Arc<HashTable>,
}

impl MetaBus {
    pub fn version(&self) -> u64 {
        self.table.meta_version()
    }

    pub fn snapshot(&self) -> MetaSnapshot {
        self.table.meta_snapshot()
    }
}

pub struct Server {
    pub rkey: u32,
    pub qid: u32,
    fabric: Arc<Fabric>,
    table: Arc<HashTable>,
    bus: Arc<MetaBus>,
    workers: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn start(table: Arc<HashTable>, fabric: Arc<Fabric>, threads: usize) -> Server {
        assert!(threads > 0);
        let rkey = fabric.register_region(Arc::clone(table.pm()), Arc::clone(table.latch_map()));
        let (qid, rx) = fabric.create_queue(1024);
        let workers = (0..threads)
            .map(|_| {
                let rx = rx.clone();
                let table = Arc::clone(&table);
                std::thread::spawn(move || {
                    while let Ok(d) = rx.recv() {
                        serve_one(&table, d);
                    }
                })
            })
            .collect();
        let bus = Arc::new(MetaBus {
            table: Arc::clone(&table),
        });
        Server {
            rkey,
            qid,
            fabric,
            table,
            bus,
            workers,
        }
    }

    pub fn table(&self) -> &Arc<HashTable> {
        &self.table
    }

    pub fn bus(&self) -> Arc<MetaBus> {
        Arc::clone(&self.bus)
    }

    pub fn connect(&self, client_id: u32) -> crate::client::Client {
        crate::client::Client::new(
            Arc::clone(&self.fabric),
            self.rkey,
            self.qid,
            self.bus(),
            client_id,
        )
    }

    /// Close the receive queue and join the workers.
    pub fn shutdown(mut self) {
        self.fabric.close_queue(self.qid);
        for w in self.workers.drain(..) {
            w.join().expect("server worker panicked");
        }
    }
}

fn serve_one(table: &HashTable, d: Delivery) {
    let (request_id, status) = match RequestFrame::decode(&d.raw) {
        Ok(frame) => (frame.request_id, execute_request(table, &frame)),
        Err(_) => (0, Status::Error),
    };
    let resp = ResponseFrame { request_id, status };
    // A dead reply channel means the client gave up; nothing to do.
    let _ = d.reply.send(resp.encode());
}

pub fn execute_request(table: &HashTable, frame: &RequestFrame) -> Status {
    execute_op(table, frame.opcode, frame.key, frame.value)
}

pub fn execute_op(table: &HashTable, opcode: OpCode, key: Key, value: Value) -> Status {
    if opcode == OpCode::Delete {
        return match table.delete(key) {
            Ok(DeleteOutcome::Deleted) => Status::Ok,
            Ok(DeleteOutcome::Absent) => Status::Absent,
            Err(_) => Status::Error,
        };
    }
    for _ in 0..MAX_EXPANSION_ATTEMPTS {
        let epoch = table.epoch();
        let full_pair = match opcode {
            OpCode::Insert => match table.insert(key, value) {
                Ok(InsertOutcome::Inserted) => return Status::Ok,
                Ok(InsertOutcome::Duplicate) => return Status::Duplicate,
                Ok(InsertOutcome::Full { pair }) => pair,
                Err(_) => return Status::Error,
            },
            OpCode::Update => match table.update(key, value) {
                Ok(UpdateOutcome::Updated) => return Status::Ok,
                Ok(UpdateOutcome::Absent) => return Status::Absent,
                Ok(UpdateOutcome::Full { pair }) => pair,
                Err(_) => return Status::Error,
            },
            OpCode::Delete => unreachable!(),
        };
        if table.pair_has_group(full_pair) {
            // Pair is full including its group: only a doubling helps. The
            // epoch gate collapses concurrent triggers into one resize.
            if table.resize(epoch).is_err() {
                return Status::Error;
            }
        } else {
            match table.add_sbucket_group(full_pair) {
                Ok(_) => {}
                // Lost the race to another worker; the group exists now.
                Err(Error::GroupAlreadyAdded(_)) => {}
                Err(Error::QuotaExhausted) => {
                    if table.resize(epoch).is_err() {
                        return Status::Error;
                    }
                }
                // Pair index went stale across a concurrent resize.
                Err(Error::Config(_)) => {}
                Err(_) => return Status::Error,
            }
        }
    }
    Status::Error
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Key;
    use crate::pm::PmRegion;
    use crate::table::AddedRatio;

    fn key(s: &str) -> Key {
        let mut k = [0u8; 16];
        k[..s.len()].copy_from_slice(s.as_bytes());
        Key(k)
    }

    fn val(s: &str) -> Value {
        Value::new(s.as_bytes()).unwrap()
    }

    fn small_server(threads: usize) -> Server {
        let pm = Arc::new(PmRegion::new(1 << 22).unwrap());
        let ratio = AddedRatio { num: 1, den: 10 };
        let table = HashTable::create(pm, 20, ratio).unwrap();
        Server::start(Arc::new(table), Fabric::new(), threads)
    }

    #[test]
    fn round_trips_through_frames_and_workers() {
        let srv = small_server(2);
        let mut c = srv.connect(7);

        assert_eq!(c.insert(key("alpha"), val("1")).unwrap(), Status::Ok);
        assert_eq!(c.insert(key("alpha"), val("2")).unwrap(), Status::Duplicate);
        assert_eq!(c.get(key("alpha")).unwrap(), Some(val("1")));

        assert_eq!(c.update(key("alpha"), val("2")).unwrap(), Status::Ok);
        assert_eq!(c.get(key("alpha")).unwrap(), Some(val("2")));
        assert_eq!(c.update(key("ghost"), val("x")).unwrap(), Status::Absent);

        assert_eq!(c.delete(key("alpha")).unwrap(), Status::Ok);
        assert_eq!(c.delete(key("alpha")).unwrap(), Status::Absent);
        assert_eq!(c.get(key("alpha")).unwrap(), None);

        // Positive lookups took one read each; the table has no groups yet.
        assert_eq!(c.stats().max_reads_one_get, 1);
        srv.shutdown();
    }

    #[test]
    fn full_pairs_grow_groups_then_the_table_doubles() {
        let srv = small_server(2);
        let mut c = srv.connect(1);
        for i in 0..400u32 {
            let k = key(&format!("k{i:05}"));
            assert_eq!(c.insert(k, val("v")).unwrap(), Status::Ok, "insert {i}");
        }
        assert!(srv.table().buckets() > 20, "table never grew");
        assert!(srv.table().resizes() >= 1);
        for i in 0..400u32 {
            let k = key(&format!("k{i:05}"));
            assert_eq!(c.get(k).unwrap(), Some(val("v")), "get {i}");
        }
        srv.shutdown();
    }

    #[test]
    fn an_acked_write_survives_any_later_crash() {
        let srv = small_server(2);
        let mut c = srv.connect(1);
        let pm = Arc::clone(srv.table().pm());
        for i in 0..60u32 {
            let k = key(&format!("d{i}"));
            assert_eq!(c.insert(k, val("v")).unwrap(), Status::Ok);
            // The ack is back; the insert must be in the persisted image no
            // matter which dirty cache lines a crash now throws away.
            for seed in 0..3u64 {
                let img = pm.crash(seed ^ u64::from(i) << 8);
                let rec = HashTable::recover(Arc::new(PmRegion::from_image(&img))).unwrap();
                assert_eq!(rec.lookup(k).unwrap(), Some(val("v")), "i={i} seed={seed}");
            }
        }
        srv.shutdown();
    }

    #[test]
    fn concurrent_clients_keep_their_stripes_consistent() {
        let srv = small_server(4);
        let handles: Vec<_> = (0..4u32)
            .map(|t| {
                let mut c = srv.connect(t);
                std::thread::spawn(move || {
                    for i in 0..250u32 {
                        let k = key(&format!("t{t}-{i:04}"));
                        assert_eq!(c.insert(k, val("a")).unwrap(), Status::Ok);
                        if i % 2 == 0 {
                            assert_eq!(c.update(k, val("b")).unwrap(), Status::Ok);
                        }
                        if i % 5 == 0 {
                            assert_eq!(c.delete(k).unwrap(), Status::Ok);
                        }
                    }
                    c
                })
            })
            .collect();
        let clients: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for (t, mut c) in clients.into_iter().enumerate() {
            for i in 0..250u32 {
                let k = key(&format!("t{t}-{i:04}"));
                let want = if i % 5 == 0 {
                    None
                } else if i % 2 == 0 {
                    Some(val("b"))
                } else {
                    Some(val("a"))
                };
                assert_eq!(c.get(k).unwrap(), want, "t={t} i={i}");
            }
        }
        srv.shutdown();
    }
}
