//! Simulated persistent memory.
//!
//! The region keeps two states: the volatile `view` (what loads return) and
//! the `persisted` bytes (what survives a crash). A `store` only changes the
//! view. `flush_range` snapshots the covered cache lines into a pending set,
//! and `fence` commits every pending line to the persisted state, so the
//! usual `store; flush; fence` sequence is durable exactly when the fence
//! returns — acking after the fence is structurally safe.
//!
//! Crashes are modeled at 8-byte-word granularity: `crash(seed)` keeps or
//! drops each non-persisted dirty word independently (seeded, deterministic)
//! and never tears a word. Deciding words independently reaches strictly more
//! states than whole-line writeback would, so recovery code that survives
//! this model also survives line-granular eviction. Words the model cannot
//! produce are ones rewritten between their flush and the fence; the table's
//! write paths never do that.
//!
//! Every mutation carries an [`OpTag`] naming the table-level operation it
//! belongs to, which feeds per-operation write accounting: stores, atomic
//! stores, flushed lines, and flush+fence sequences (a fence preceded on the
//! same thread by at least one flush with the same tag).
//!
//! For crash sweeps, `arm_trips` schedules image captures at chosen event
//! boundaries. Stores, atomic stores, each flushed line, and each fence are
//! one event; a trip fires right after its event applies, so sweeping every
//! index visits every intermediate state an operation can leave behind.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU8, Ordering};
use std::thread::ThreadId;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CACHE_LINE: usize = 64;
pub const WORD: usize = 8;

/// Table-level operation a PM mutation is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpTag {
    Setup,
    Insert,
    Update,
    Delete,
    Resize,
    AddGroup,
    Recovery,
}

impl OpTag {
    pub const ALL: [OpTag; 7] = [
        OpTag::Setup,
        OpTag::Insert,
        OpTag::Update,
        OpTag::Delete,
        OpTag::Resize,
        OpTag::AddGroup,
        OpTag::Recovery,
    ];
}

/// Write-accounting counters for one tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStats {
    pub stores: u64,
    pub atomic_stores: u64,
    pub lines_flushed: u64,
    /// Fences preceded (same thread, same tag) by at least one flush since
    /// the previous such fence. One `store+flush+fence` round trips this by 1.
    pub flush_fence_sequences: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PmStats {
    pub per_tag: BTreeMap<OpTag, TagStats>,
}

impl PmStats {
    /// Counters for `tag`, zero if the tag never appeared.
    pub fn tag(&self, tag: OpTag) -> TagStats {
        self.per_tag.get(&tag).copied().unwrap_or_default()
    }

    /// Counter growth since `earlier` (a snapshot of the same region).
    pub fn delta(&self, earlier: &PmStats) -> PmStats {
        let mut out = PmStats::default();
        for (tag, now) in &self.per_tag {
            let then = earlier.tag(*tag);
            out.per_tag.insert(
                *tag,
                TagStats {
                    stores: now.stores - then.stores,
                    atomic_stores: now.atomic_stores - then.atomic_stores,
                    lines_flushed: now.lines_flushed - then.lines_flushed,
                    flush_fence_sequences: now.flush_fence_sequences - then.flush_fence_sequences,
                },
            );
        }
        out
    }
}

/// A scheduled crash capture: fires right after the `at_event`-th event
/// (1-based) applies.
#[derive(Debug, Clone, Copy)]
pub struct Trip {
    pub at_event: u64,
    pub seed: u64,
}

/// The surviving bytes of a crashed region, plus how the dirty words fell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashImage {
    pub capacity: u64,
    pub seed: u64,
    /// Event count at capture time (0 only for a capture before any event).
    pub event_index: u64,
    pub kept_words: u64,
    pub dropped_words: u64,
    pub bytes: Vec<u8>,
}

const IMAGE_MAGIC: &[u8; 8] = b"PMIMG\x01\0\0";

impl CrashImage {
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + self.bytes.len());
        buf.extend_from_slice(IMAGE_MAGIC);
        for v in [
            self.capacity,
            self.seed,
            self.event_index,
            self.kept_words,
            self.dropped_words,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.bytes);
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<CrashImage> {
        let raw = fs::read(path)?;
        if raw.len() < 48 || &raw[..8] != IMAGE_MAGIC {
            return Err(Error::Integrity(format!(
                "{} is not a crash image",
                path.display()
            )));
        }
        let word = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&raw[8 + i * 8..16 + i * 8]);
            u64::from_le_bytes(b)
        };
        let capacity = word(0);
        let bytes = raw[48..].to_vec();
        if bytes.len() as u64 != capacity {
            return Err(Error::Integrity(format!(
                "crash image length {} does not match capacity {}",
                bytes.len(),
                capacity
            )));
        }
        Ok(CrashImage {
            capacity,
            seed: word(1),
            event_index: word(2),
            kept_words: word(3),
            dropped_words: word(4),
            bytes,
        })
    }
}

#[derive(Default)]
struct Book {
    persisted: Vec<u8>,
    /// Lines flushed but not yet fenced: line index -> snapshot at flush time.
    pending: BTreeMap<usize, [u8; CACHE_LINE]>,
    /// Unfenced flush counts per (tag, thread), for sequence attribution.
    flushed: HashMap<(OpTag, ThreadId), u64>,
    per_tag: BTreeMap<OpTag, TagStats>,
    event_count: u64,
    armed: BTreeMap<u64, u64>,
    captures: Vec<CrashImage>,
}

impl Book {
    fn tag_mut(&mut self, tag: OpTag) -> &mut TagStats {
        self.per_tag.entry(tag).or_default()
    }
}

/// One simulated persistent-memory region. All methods take `&self`; the
/// region is meant to be shared behind an `Arc` across server threads.
///
/// Plain loads (`read*`) do not serialize against stores and may observe a
/// concurrent store half-applied; callers that need consistent multi-byte
/// reads validate with their own latches, exactly as a one-sided reader must.
pub struct PmRegion {
    capacity: usize,
    view: Box<[AtomicU8]>,
    book: Mutex<Book>,
}

/// Reinterpret an owned byte buffer as atomics. `AtomicU8` is guaranteed to
/// have the same size, alignment, and bit validity as `u8`, and building
/// multi-megabyte regions element by element is far too slow for the crash
/// sweeps, which reconstruct a region per injection.
fn atomic_view(bytes: Box<[u8]>) -> Box<[AtomicU8]> {
    unsafe { Box::from_raw(Box::into_raw(bytes) as *mut [AtomicU8]) }
}

impl PmRegion {
    pub fn new(capacity: usize) -> Result<PmRegion> {
        if capacity == 0 || !capacity.is_multiple_of(CACHE_LINE) {
            return Err(Error::Config(format!(
                "region capacity {capacity} must be a positive multiple of {CACHE_LINE}"
            )));
        }
        Ok(PmRegion {
            capacity,
            view: atomic_view(vec![0u8; capacity].into_boxed_slice()),
            book: Mutex::new(Book {
                persisted: vec![0u8; capacity],
                ..Book::default()
            }),
        })
    }

    /// Rebuild a region from a crash image. Everything in the image is by
    /// definition durable, so view and persisted both start as its bytes.
    pub fn from_image(img: &CrashImage) -> PmRegion {
        Self::from_bytes(&img.bytes)
    }

    /// Rebuild a region from surviving bytes (all considered durable).
    pub fn from_bytes(bytes: &[u8]) -> PmRegion {
        PmRegion {
            capacity: bytes.len(),
            view: atomic_view(bytes.into()),
            book: Mutex::new(Book {
                persisted: bytes.to_vec(),
                ..Book::default()
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn check_range(&self, offset: usize, len: usize) -> Result<()> {
        if offset.checked_add(len).is_none_or(|end| end > self.capacity) {
            return Err(Error::OutOfBounds {
                offset: offset as u64,
                len: len as u64,
                capacity: self.capacity as u64,
            });
        }
        Ok(())
    }

    fn view_word(&self, word_index: usize) -> [u8; WORD] {
        let base = word_index * WORD;
        let mut out = [0u8; WORD];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.view[base + i].load(Ordering::Relaxed);
        }
        out
    }

    /// Count one event and fire a trip if one is armed at this boundary.
    fn bump_event(&self, book: &mut Book) {
        book.event_count += 1;
        if let Some(seed) = book.armed.remove(&book.event_count) {
            let img = self.capture(book, seed, book.event_count);
            book.captures.push(img);
        }
    }

    fn capture(&self, book: &Book, seed: u64, event_index: u64) -> CrashImage {
        let mut bytes = book.persisted.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = 0u64;
        let mut dropped = 0u64;
        for w in 0..self.capacity / WORD {
            let cur = self.view_word(w);
            let span = &mut bytes[w * WORD..(w + 1) * WORD];
            if span != cur {
                if rng.gen::<bool>() {
                    span.copy_from_slice(&cur);
                    kept += 1;
                } else {
                    dropped += 1;
                }
            }
        }
        CrashImage {
            capacity: self.capacity as u64,
            seed,
            event_index,
            kept_words: kept,
            dropped_words: dropped,
            bytes,
        }
    }

    pub fn store(&self, offset: usize, bytes: &[u8], tag: OpTag) -> Result<()> {
        self.check_range(offset, bytes.len())?;
        let mut book = self.book.lock();
        for (i, &b) in bytes.iter().enumerate() {
            self.view[offset + i].store(b, Ordering::Relaxed);
        }
        book.tag_mut(tag).stores += 1;
        self.bump_event(&mut book);
        Ok(())
    }

    /// 8-byte aligned store that a crash can only keep or drop whole.
    /// (Any word in this model has that property; the separate entry point
    /// enforces alignment and keeps its own count, since commit points
    /// must go through it.)
    pub fn atomic_store_8(&self, offset: usize, value: u64, tag: OpTag) -> Result<()> {
        if !offset.is_multiple_of(WORD) {
            return Err(Error::Misaligned(offset as u64));
        }
        self.check_range(offset, WORD)?;
        let mut book = self.book.lock();
        for (i, b) in value.to_le_bytes().iter().enumerate() {
            self.view[offset + i].store(*b, Ordering::Relaxed);
        }
        book.tag_mut(tag).atomic_stores += 1;
        self.bump_event(&mut book);
        Ok(())
    }

    /// Flush every cache line touching `[offset, offset+len)`. Each covered
    /// line counts once, so an 8-byte range straddling a line boundary
    /// flushes (and counts) two lines.
    pub fn flush_range(&self, offset: usize, len: usize, tag: OpTag) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        self.check_range(offset, len)?;
        let first = offset / CACHE_LINE;
        let last = (offset + len - 1) / CACHE_LINE;
        let mut book = self.book.lock();
        let tid = std::thread::current().id();
        for line in first..=last {
            let base = line * CACHE_LINE;
            let mut snap = [0u8; CACHE_LINE];
            for (i, slot) in snap.iter_mut().enumerate() {
                *slot = self.view[base + i].load(Ordering::Relaxed);
            }
            book.pending.insert(line, snap);
            book.tag_mut(tag).lines_flushed += 1;
            *book.flushed.entry((tag, tid)).or_insert(0) += 1;
            self.bump_event(&mut book);
        }
        Ok(())
    }

    /// Flush the single cache line containing `offset`.
    pub fn flush_line(&self, offset: usize, tag: OpTag) -> Result<()> {
        self.flush_range(offset, 1, tag)
    }

    /// Commit every pending flushed line (all tags, all threads) to the
    /// persisted state. Committing a superset of the calling thread's own
    /// flushes keeps the guarantee one-directional and simple: whatever this
    /// thread flushed before this fence is durable when it returns.
    pub fn fence(&self, tag: OpTag) {
        let mut book = self.book.lock();
        let pending = std::mem::take(&mut book.pending);
        for (line, snap) in pending {
            let base = line * CACHE_LINE;
            book.persisted[base..base + CACHE_LINE].copy_from_slice(&snap);
        }
        let tid = std::thread::current().id();
        if book.flushed.remove(&(tag, tid)).is_some() {
            book.tag_mut(tag).flush_fence_sequences += 1;
        }
        self.bump_event(&mut book);
    }

    pub fn read_into(&self, offset: usize, out: &mut [u8]) -> Result<()> {
        self.check_range(offset, out.len())?;
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.view[offset + i].load(Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn read(&self, offset: usize, len: usize) -> Result<Vec<u8>> {
        let mut out = vec![0u8; len];
        self.read_into(offset, &mut out)?;
        Ok(out)
    }

    pub fn read_u64(&self, offset: usize) -> Result<u64> {
        if !offset.is_multiple_of(WORD) {
            return Err(Error::Misaligned(offset as u64));
        }
        let mut b = [0u8; 8];
        self.read_into(offset, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Durable bytes as of the last fence. Introspection for tests and the
    /// crash harness; real code paths read the view.
    pub fn read_persisted(&self, offset: usize, len: usize) -> Result<Vec<u8>> {
        self.check_range(offset, len)?;
        let book = self.book.lock();
        Ok(book.persisted[offset..offset + len].to_vec())
    }

    /// Capture what a crash right now could leave behind, for `seed`.
    /// Non-destructive: callers usually discard the region afterwards and
    /// recover from the image, but sweeping many seeds over one state is
    /// also valid.
    pub fn crash(&self, seed: u64) -> CrashImage {
        let book = self.book.lock();
        let ec = book.event_count;
        self.capture(&book, seed, ec)
    }

    pub fn arm_trips(&self, trips: &[Trip]) {
        let mut book = self.book.lock();
        for t in trips {
            book.armed.insert(t.at_event, t.seed);
        }
    }

    pub fn disarm_trips(&self) {
        self.book.lock().armed.clear();
    }

    pub fn drain_captures(&self) -> Vec<CrashImage> {
        std::mem::take(&mut self.book.lock().captures)
    }

    pub fn event_count(&self) -> u64 {
        self.book.lock().event_count
    }

    pub fn stats(&self) -> PmStats {
        PmStats {
            per_tag: self.book.lock().per_tag.clone(),
        }
    }
}

impl std::fmt::Debug for PmRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PmRegion")
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: OpTag = OpTag::Insert;

    #[test]
    fn bounds_and_alignment_are_enforced() {
        let pm = PmRegion::new(256).unwrap();
        assert!(matches!(
            pm.store(250, &[0u8; 8], T),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            pm.atomic_store_8(4, 1, T),
            Err(Error::Misaligned(4))
        ));
        assert!(matches!(pm.read_u64(12), Err(Error::Misaligned(12))));
        assert!(PmRegion::new(100).is_err());
        assert!(PmRegion::new(0).is_err());
    }

    #[test]
    fn unflushed_store_survival_depends_on_seed() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &0xdead_beef_u64.to_le_bytes(), T).unwrap();
        let mut survived = 0;
        let mut lost = 0;
        for seed in 0..200 {
            let img = pm.crash(seed);
            let word = u64::from_le_bytes(img.bytes[0..8].try_into().unwrap());
            match word {
                0xdead_beef => survived += 1,
                0 => lost += 1,
                other => panic!("torn word {other:#x}"),
            }
        }
        assert!(survived > 0 && lost > 0, "survived={survived} lost={lost}");
    }

    #[test]
    fn flushed_fenced_store_always_survives() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &0x1111_2222_3333_4444_u64.to_le_bytes(), T)
            .unwrap();
        pm.flush_range(0, 8, T).unwrap();
        pm.fence(T);
        // Later dirt elsewhere must not disturb the committed word.
        pm.store(64, &[0xab; 8], T).unwrap();
        for seed in 0..1000 {
            let img = pm.crash(seed);
            let word = u64::from_le_bytes(img.bytes[0..8].try_into().unwrap());
            assert_eq!(word, 0x1111_2222_3333_4444);
        }
    }

    #[test]
    fn flush_without_fence_does_not_persist() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &[0xff; 8], T).unwrap();
        pm.flush_range(0, 8, T).unwrap();
        assert_eq!(pm.read_persisted(0, 8).unwrap(), vec![0u8; 8]);
        pm.fence(T);
        assert_eq!(pm.read_persisted(0, 8).unwrap(), vec![0xff; 8]);
    }

    #[test]
    fn words_never_tear_and_partial_survival_occurs() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &[0xff; 32], T).unwrap(); // four dirty words
        let mut saw_mixed = false;
        for seed in 0..10_000 {
            let img = pm.crash(seed);
            for w in 0..4 {
                let word = &img.bytes[w * 8..(w + 1) * 8];
                assert!(
                    word == [0u8; 8] || word == [0xffu8; 8],
                    "seed {seed} tore word {w}: {word:?}"
                );
            }
            if img.kept_words > 0 && img.dropped_words > 0 {
                saw_mixed = true;
            }
        }
        assert!(saw_mixed, "no seed produced a partially surviving store");
    }

    #[test]
    fn line_accounting_counts_covered_lines() {
        let pm = PmRegion::new(512).unwrap();
        pm.flush_range(60, 8, T).unwrap(); // straddles lines 0 and 1
        assert_eq!(pm.stats().tag(T).lines_flushed, 2);
        pm.flush_range(0, 64, T).unwrap(); // exactly line 0
        assert_eq!(pm.stats().tag(T).lines_flushed, 3);
        pm.flush_range(63, 2, T).unwrap(); // lines 0 and 1
        assert_eq!(pm.stats().tag(T).lines_flushed, 5);
        pm.flush_range(0, 129, T).unwrap(); // lines 0, 1, 2
        assert_eq!(pm.stats().tag(T).lines_flushed, 8);
        pm.flush_line(130, T).unwrap(); // line 2
        assert_eq!(pm.stats().tag(T).lines_flushed, 9);
    }

    #[test]
    fn fence_commits_every_pending_line() {
        let pm = PmRegion::new(512).unwrap();
        pm.store(0, &[1; 8], T).unwrap();
        pm.store(300, &[2; 8], OpTag::Delete).unwrap();
        pm.flush_range(0, 8, T).unwrap();
        pm.flush_range(300, 8, OpTag::Delete).unwrap();
        pm.fence(T); // commits both tags' lines
        for seed in 0..200 {
            let img = pm.crash(seed);
            assert_eq!(&img.bytes[0..8], &[1; 8]);
            assert_eq!(&img.bytes[300..308], &[2; 8]);
        }
    }

    #[test]
    fn sequences_require_a_prior_flush_with_same_tag() {
        let pm = PmRegion::new(256).unwrap();
        pm.fence(T);
        assert_eq!(pm.stats().tag(T).flush_fence_sequences, 0);

        pm.store(0, &[1; 8], T).unwrap();
        pm.flush_range(0, 8, T).unwrap();
        pm.fence(T);
        assert_eq!(pm.stats().tag(T).flush_fence_sequences, 1);

        // A fence under a different tag neither counts for it nor steals
        // this tag's pending flush.
        pm.store(8, &[2; 8], T).unwrap();
        pm.flush_range(8, 8, T).unwrap();
        pm.fence(OpTag::Delete);
        assert_eq!(pm.stats().tag(OpTag::Delete).flush_fence_sequences, 0);
        pm.fence(T);
        assert_eq!(pm.stats().tag(T).flush_fence_sequences, 2);

        // Multiple flushes before one fence are still one sequence.
        pm.flush_range(0, 8, T).unwrap();
        pm.flush_range(8, 8, T).unwrap();
        pm.fence(T);
        assert_eq!(pm.stats().tag(T).flush_fence_sequences, 3);
    }

    #[test]
    fn sequences_are_attributed_per_thread() {
        let pm = PmRegion::new(1024).unwrap();
        let barrier = std::sync::Barrier::new(2);
        std::thread::scope(|s| {
            for i in 0..2usize {
                let pm = &pm;
                let barrier = &barrier;
                s.spawn(move || {
                    let off = i * 512;
                    pm.store(off, &[7; 8], T).unwrap();
                    pm.flush_range(off, 8, T).unwrap();
                    // Both threads flush before either fences; each fence
                    // must still count its own thread's sequence.
                    barrier.wait();
                    pm.fence(T);
                });
            }
        });
        assert_eq!(pm.stats().tag(T).flush_fence_sequences, 2);
    }

    #[test]
    fn reads_match_a_shadow_byte_map() {
        let pm = PmRegion::new(4096).unwrap();
        let mut shadow = vec![0u8; 4096];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let len = rng.gen_range(1..48);
            let off = rng.gen_range(0..4096 - len);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            pm.store(off, &data, T).unwrap();
            shadow[off..off + len].copy_from_slice(&data);
        }
        assert_eq!(pm.read(0, 4096).unwrap(), shadow);
        assert_eq!(
            pm.read_u64(1232).unwrap(),
            u64::from_le_bytes(shadow[1232..1240].try_into().unwrap())
        );
    }

    #[test]
    fn events_count_stores_lines_and_fences() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &[1; 16], T).unwrap(); // 1 event
        pm.atomic_store_8(16, 5, T).unwrap(); // 1
        pm.flush_range(60, 8, T).unwrap(); // 2 (two lines)
        pm.fence(T); // 1
        assert_eq!(pm.event_count(), 5);
    }

    #[test]
    fn trips_fire_at_their_boundary_and_replay_identically() {
        let script = |pm: &PmRegion| {
            pm.store(0, &[0xaa; 8], T).unwrap(); // event 1
            pm.store(64, &[0xbb; 8], T).unwrap(); // event 2
            pm.flush_range(0, 8, T).unwrap(); // event 3
            pm.fence(T); // event 4
        };

        // Trip after event 4: line 0 fenced (always kept), line 1 unfenced.
        let run = |seeds: &[Trip]| {
            let pm = PmRegion::new(256).unwrap();
            pm.arm_trips(seeds);
            script(&pm);
            pm.drain_captures()
        };

        let caps = run(&[
            Trip {
                at_event: 1,
                seed: 9,
            },
            Trip {
                at_event: 4,
                seed: 9,
            },
        ]);
        assert_eq!(caps.len(), 2);
        // At event 1 the second store has not happened yet.
        assert_eq!(&caps[0].bytes[64..72], &[0u8; 8]);
        // At event 4 the first word is committed regardless of seed.
        assert_eq!(&caps[1].bytes[0..8], &[0xaa; 8]);
        assert_eq!(caps[1].event_index, 4);

        let caps2 = run(&[
            Trip {
                at_event: 1,
                seed: 9,
            },
            Trip {
                at_event: 4,
                seed: 9,
            },
        ]);
        assert_eq!(caps, caps2, "trip replay is not deterministic");
    }

    #[test]
    fn crash_is_deterministic_per_seed() {
        let pm = PmRegion::new(4096).unwrap();
        pm.store(0, &[0x5a; 512], T).unwrap(); // 64 dirty words
        let a1 = pm.crash(7);
        let a2 = pm.crash(7);
        assert_eq!(a1, a2);
        let b = pm.crash(8);
        assert_ne!(a1.bytes, b.bytes, "different seeds produced equal images");
        assert_eq!(a1.kept_words + a1.dropped_words, 64);
    }

    #[test]
    fn image_roundtrips_through_file_and_recovery() {
        let pm = PmRegion::new(256).unwrap();
        pm.store(0, &[3; 32], T).unwrap();
        pm.flush_range(0, 32, T).unwrap();
        pm.fence(T);
        pm.store(128, &[9; 8], T).unwrap();
        let img = pm.crash(123);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bin");
        img.write_to(&path).unwrap();
        let back = CrashImage::read_from(&path).unwrap();
        assert_eq!(img, back);

        // A recovered region starts fully durable: every later crash of an
        // untouched recovery equals the image.
        let pm2 = PmRegion::from_image(&back);
        assert_eq!(pm2.read(0, 256).unwrap(), back.bytes);
        let img2 = pm2.crash(999);
        assert_eq!(img2.bytes, back.bytes);
        assert_eq!(img2.kept_words + img2.dropped_words, 0);
    }
}
