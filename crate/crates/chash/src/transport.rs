//! In-process fabric standing in for an RDMA-capable network.
//!
//! Two verbs. `read` is one-sided: it copies bytes straight out of a
//! registered region with no server code on the path, and uses the region's
//! latch map to detect that a server-side writer overlapped the copy, in
//! which case it re-issues. Every issue counts as one round trip, exactly
//! like a real re-read would. `rpc` models a write-with-immediate carrying a
//! fixed 45-byte request frame into the server's receive queue plus a 9-byte
//! completion the server posts back after its durability fence.
//!
//! Frames cross the queue as encoded bytes, so the wire codec is on the hot
//! path, not just in tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel as chan;
use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::layout::{Key, Value, KEY_LEN, VALUE_MAX};
use crate::pm::PmRegion;
use crate::sync::LatchMap;

/// Largest single one-sided read.
pub const MAX_READ: usize = 1 << 20;

pub const REQ_LEN: usize = 45;
pub const RESP_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum OpCode {
    Insert = 1,
    Update = 2,
    Delete = 3,
}

impl TryFrom<u8> for OpCode {
    type Error = Error;

    fn try_from(v: u8) -> Result<OpCode> {
        match v {
            1 => Ok(OpCode::Insert),
            2 => Ok(OpCode::Update),
            3 => Ok(OpCode::Delete),
            other => Err(Error::Protection(format!("bad opcode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Absent = 1,
    Duplicate = 2,
    Error = 3,
}

impl TryFrom<u8> for Status {
    type Error = Error;

    fn try_from(v: u8) -> Result<Status> {
        match v {
            0 => Ok(Status::Ok),
            1 => Ok(Status::Absent),
            2 => Ok(Status::Duplicate),
            3 => Ok(Status::Error),
            other => Err(Error::Protection(format!("bad status {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestFrame {
    pub opcode: OpCode,
    pub client_id: u32,
    pub request_id: u64,
    pub key: Key,
    pub value: Value,
}

impl RequestFrame {
    pub fn encode(&self) -> [u8; REQ_LEN] {
        let mut out = [0u8; REQ_LEN];
        out[0] = self.opcode as u8;
        out[1..5].copy_from_slice(&self.client_id.to_le_bytes());
        out[5..13].copy_from_slice(&self.request_id.to_le_bytes());
        out[13..13 + KEY_LEN].copy_from_slice(self.key.as_bytes());
        out[29] = self.value.len() as u8;
        out[30..30 + self.value.len()].copy_from_slice(self.value.as_slice());
        out
    }

    pub fn decode(raw: &[u8]) -> Result<RequestFrame> {
        if raw.len() != REQ_LEN {
            return Err(Error::Protection(format!(
                "request frame must be {REQ_LEN} bytes, got {}",
                raw.len()
            )));
        }
        let opcode = OpCode::try_from(raw[0])?;
        let vlen = raw[29] as usize;
        if vlen > VALUE_MAX {
            return Err(Error::Protection(format!("frame value length {vlen}")));
        }
        Ok(RequestFrame {
            opcode,
            client_id: u32::from_le_bytes(raw[1..5].try_into().unwrap()),
            request_id: u64::from_le_bytes(raw[5..13].try_into().unwrap()),
            key: Key(raw[13..29].try_into().unwrap()),
            value: Value::new(&raw[30..30 + vlen])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseFrame {
    pub request_id: u64,
    pub status: Status,
}

impl ResponseFrame {
    pub fn encode(&self) -> [u8; RESP_LEN] {
        let mut out = [0u8; RESP_LEN];
        out[0..8].copy_from_slice(&self.request_id.to_le_bytes());
        out[8] = self.status as u8;
        out
    }

    pub fn decode(raw: &[u8]) -> Result<ResponseFrame> {
        if raw.len() != RESP_LEN {
            return Err(Error::Protection(format!(
                "response frame must be {RESP_LEN} bytes, got {}",
                raw.len()
            )));
        }
        Ok(ResponseFrame {
            request_id: u64::from_le_bytes(raw[0..8].try_into().unwrap()),
            status: Status::try_from(raw[8])?,
        })
    }
}

/// A request as a server worker receives it.
pub struct Delivery {
    pub raw: [u8; REQ_LEN],
    pub reply: chan::Sender<[u8; RESP_LEN]>,
}

struct Registered {
    pm: Arc<PmRegion>,
    latches: Arc<LatchMap>,
}

#[derive(Default)]
pub struct Fabric {
    regions: RwLock<HashMap<u32, Registered>>,
    queues: RwLock<HashMap<u32, chan::Sender<Delivery>>>,
    next_rkey: AtomicU32,
    next_qid: AtomicU32,
}

impl Fabric {
    pub fn new() -> Arc<Fabric> {
        Arc::new(Fabric::default())
    }

    /// Expose a region for one-sided reads; the latch map lets readers
    /// detect racing writers.
    pub fn register_region(&self, pm: Arc<PmRegion>, latches: Arc<LatchMap>) -> u32 {
        let rkey = self.next_rkey.fetch_add(1, Ordering::SeqCst) + 1;
        self.regions.write().insert(rkey, Registered { pm, latches });
        rkey
    }

    /// Open a receive queue for request frames.
    pub fn create_queue(&self, depth: usize) -> (u32, chan::Receiver<Delivery>) {
        let (tx, rx) = chan::bounded(depth);
        let qid = self.next_qid.fetch_add(1, Ordering::SeqCst) + 1;
        self.queues.write().insert(qid, tx);
        (qid, rx)
    }

    /// Close a queue; workers drain and exit when in-flight senders drop.
    pub fn close_queue(&self, qid: u32) {
        self.queues.write().remove(&qid);
    }
}

/// Per-client issue point with round-trip accounting.
pub struct Endpoint {
    fabric: Arc<Fabric>,
    reads: AtomicU64,
    read_retries: AtomicU64,
    rpcs: AtomicU64,
}

impl Endpoint {
    pub fn new(fabric: Arc<Fabric>) -> Endpoint {
        Endpoint {
            fabric,
            reads: AtomicU64::new(0),
            read_retries: AtomicU64::new(0),
            rpcs: AtomicU64::new(0),
        }
    }

    /// One-sided read: snapshot bytes, validate against the covering
    /// latches, re-issue on a detected race. Returns the consistent bytes.
    pub fn read(&self, rkey: u32, offset: usize, len: usize) -> Result<Vec<u8>> {
        if len == 0 || len > MAX_READ {
            return Err(Error::Protection(format!("read length {len} out of range")));
        }
        let regions = self.fabric.regions.read();
        let reg = regions
            .get(&rkey)
            .ok_or_else(|| Error::Protection(format!("unknown rkey {rkey}")))?;
        let mut spins = 0u32;
        loop {
            self.reads.fetch_add(1, Ordering::Relaxed);
            let latches = reg.latches.covering(offset, offset + len);
            let seqs: Vec<u64> = latches.iter().map(|l| l.seq_begin_read()).collect();
            if seqs.iter().all(|s| s % 2 == 0) {
                let buf = reg.pm.read(offset, len)?;
                if latches
                    .iter()
                    .zip(&seqs)
                    .all(|(l, s)| l.seq_validate(*s))
                {
                    return Ok(buf);
                }
            }
            self.read_retries.fetch_add(1, Ordering::Relaxed);
            spins += 1;
            if spins.is_multiple_of(64) {
                std::thread::yield_now();
            } else {
                std::hint::spin_loop();
            }
        }
    }

    /// Write-with-immediate plus completion: push a request frame into the
    /// server queue and wait for the 9-byte ack.
    pub fn rpc(&self, qid: u32, frame: &RequestFrame, timeout: Duration) -> Result<ResponseFrame> {
        let tx = self
            .fabric
            .queues
            .read()
            .get(&qid)
            .cloned()
            .ok_or(Error::Disconnected)?;
        let (rtx, rrx) = chan::bounded(1);
        tx.send(Delivery {
            raw: frame.encode(),
            reply: rtx,
        })
        .map_err(|_| Error::Disconnected)?;
        self.rpcs.fetch_add(1, Ordering::Relaxed);
        let raw = match rrx.recv_timeout(timeout) {
            Ok(raw) => raw,
            Err(chan::RecvTimeoutError::Timeout) => return Err(Error::Timeout),
            Err(chan::RecvTimeoutError::Disconnected) => return Err(Error::Disconnected),
        };
        let resp = ResponseFrame::decode(&raw)?;
        if resp.request_id != frame.request_id {
            return Err(Error::Protection(format!(
                "completion for request {} arrived on request {}",
                resp.request_id, frame.request_id
            )));
        }
        Ok(resp)
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn read_retries(&self) -> u64 {
        self.read_retries.load(Ordering::Relaxed)
    }

    pub fn rpcs(&self) -> u64 {
        self.rpcs.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pm::OpTag;
    use crate::sync::PairLatch;

    fn frame(op: OpCode, id: u64, v: &[u8]) -> RequestFrame {
        RequestFrame {
            opcode: op,
            client_id: 7,
            request_id: id,
            key: Key(*b"0123456789abcdef"),
            value: Value::new(v).unwrap(),
        }
    }

    #[test]
    fn frames_roundtrip() {
        for len in 0..=VALUE_MAX {
            let f = frame(OpCode::Update, 99, &vec![0xabu8; len]);
            assert_eq!(RequestFrame::decode(&f.encode()).unwrap(), f);
        }
        let r = ResponseFrame {
            request_id: 123,
            status: Status::Duplicate,
        };
        assert_eq!(ResponseFrame::decode(&r.encode()).unwrap(), r);

        let mut bad = frame(OpCode::Insert, 1, b"x").encode();
        bad[0] = 9;
        assert!(RequestFrame::decode(&bad).is_err());
        let mut bad = frame(OpCode::Insert, 1, b"x").encode();
        bad[29] = 16;
        assert!(RequestFrame::decode(&bad).is_err());
        assert!(RequestFrame::decode(&[0u8; 10]).is_err());
    }

    #[test]
    fn one_sided_read_returns_region_bytes() {
        let fabric = Fabric::new();
        let pm = Arc::new(PmRegion::new(4096).unwrap());
        pm.store(100, b"payload", OpTag::Setup).unwrap();
        let rkey = fabric.register_region(Arc::clone(&pm), Arc::new(LatchMap::new()));
        let ep = Endpoint::new(Arc::clone(&fabric));
        assert_eq!(ep.read(rkey, 100, 7).unwrap(), b"payload");
        assert_eq!(ep.reads(), 1);
        assert!(matches!(ep.read(rkey, 4090, 100), Err(Error::OutOfBounds { .. })));
        assert!(matches!(ep.read(99, 0, 8), Err(Error::Protection(_))));
        assert!(matches!(ep.read(rkey, 0, 0), Err(Error::Protection(_))));
        assert!(matches!(
            ep.read(rkey, 0, MAX_READ + 1),
            Err(Error::Protection(_))
        ));
    }

    #[test]
    fn one_sided_read_never_returns_a_torn_snapshot() {
        let fabric = Fabric::new();
        let pm = Arc::new(PmRegion::new(4096).unwrap());
        let latches = Arc::new(LatchMap::new());
        let latch = Arc::new(PairLatch::new());
        latches.insert(0, 128, Arc::clone(&latch));
        let rkey = fabric.register_region(Arc::clone(&pm), Arc::clone(&latches));

        std::thread::scope(|s| {
            let writer_pm = Arc::clone(&pm);
            let writer_latch = Arc::clone(&latch);
            s.spawn(move || {
                for i in 1..=30_000u64 {
                    let _w = writer_latch.seq_write();
                    writer_pm.store(0, &[i as u8; 32], OpTag::Insert).unwrap();
                    writer_pm.store(64, &[i as u8; 32], OpTag::Insert).unwrap();
                }
            });
            for _ in 0..3 {
                let fabric = Arc::clone(&fabric);
                s.spawn(move || {
                    let ep = Endpoint::new(fabric);
                    for _ in 0..2_000 {
                        let buf = ep.read(rkey, 0, 128).unwrap();
                        let a = buf[0];
                        assert!(buf[..32].iter().all(|&b| b == a), "torn within word run");
                        assert!(buf[64..96].iter().all(|&b| b == a), "torn across stores");
                    }
                });
            }
        });
    }

    #[test]
    fn rpc_roundtrip_timeout_and_disconnect() {
        let fabric = Fabric::new();
        let (qid, rx) = fabric.create_queue(16);
        let server = std::thread::spawn(move || {
            while let Ok(d) = rx.recv() {
                let req = RequestFrame::decode(&d.raw).unwrap();
                let status = match req.opcode {
                    OpCode::Insert => Status::Ok,
                    OpCode::Update => Status::Absent,
                    OpCode::Delete => Status::Error,
                };
                let _ = d.reply.send(
                    ResponseFrame {
                        request_id: req.request_id,
                        status,
                    }
                    .encode(),
                );
            }
        });

        let ep = Endpoint::new(Arc::clone(&fabric));
        let t = Duration::from_secs(5);
        assert_eq!(
            ep.rpc(qid, &frame(OpCode::Insert, 1, b"v"), t).unwrap().status,
            Status::Ok
        );
        assert_eq!(
            ep.rpc(qid, &frame(OpCode::Update, 2, b"v"), t).unwrap().status,
            Status::Absent
        );
        assert_eq!(ep.rpcs(), 2);

        fabric.close_queue(qid);
        server.join().unwrap();
        assert!(matches!(
            ep.rpc(qid, &frame(OpCode::Delete, 3, b""), t),
            Err(Error::Disconnected)
        ));

        // A queue nobody serves times out.
        let (qid2, rx2) = fabric.create_queue(4);
        let err = ep.rpc(qid2, &frame(OpCode::Insert, 4, b"v"), Duration::from_millis(20));
        assert!(matches!(err, Err(Error::Timeout)));
        drop(rx2);
    }
}
