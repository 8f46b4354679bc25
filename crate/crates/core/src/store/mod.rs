//! Append-only event log.
//!
//! Every command that reaches the engine is written together with the
//! messages it produced, as one batch of JSON lines:
//!
//! ```text
//! {"checksum":3735928559,"entry":{"global_seq":1,"auction_id":"a1","server_time":0,"record":{...}}}
//! ```
//!
//! The checksum is CRC-32 over the exact bytes of `entry`. A batch is written
//! and flushed in one go; a batch that is cut short by a crash is dropped on
//! reload. State is never read back from anywhere but this log (optionally
//! shortened by a snapshot).

mod check;
mod snapshot;

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::domain::{AuctionId, Message, Millis};
use crate::engine::{Applied, Command, CommandEnvelope, EngineError, Registry};

pub use check::{plausibility_check, Violation};
pub use snapshot::{latest_snapshot, load_snapshot, write_snapshot, Snapshot};

pub const LOG_FILE: &str = "events.jsonl";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full")]
    StorageFull,
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("corrupt log at seq {seq}")]
    CorruptLog { seq: u64 },
    #[error("log is frozen after an earlier write failure")]
    Frozen,
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::StorageFull => StoreError::StorageFull,
            _ => StoreError::IoFailure(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    /// A command as received. `batch_len` message records follow it.
    Command { command: Command, batch_len: u32 },
    Message { message: Message },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub global_seq: u64,
    pub auction_id: AuctionId,
    pub server_time: Millis,
    pub record: Record,
}

impl LogRecord {
    pub fn envelope(&self) -> Option<CommandEnvelope> {
        match &self.record {
            Record::Command { command, .. } => Some(CommandEnvelope {
                auction_id: self.auction_id.clone(),
                received_at: self.server_time,
                command: command.clone(),
            }),
            Record::Message { .. } => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    checksum: u32,
    #[serde(borrow)]
    entry: &'a RawValue,
}

fn encode_line(record: &LogRecord, out: &mut Vec<u8>) {
    let entry = serde_json::to_string(record).expect("log records serialize");
    let checksum = crc32fast::hash(entry.as_bytes());
    out.extend_from_slice(format!("{{\"checksum\":{checksum},\"entry\":{entry}}}\n").as_bytes());
}

fn decode_line(line: &[u8]) -> Option<LogRecord> {
    let parsed: Line = serde_json::from_slice(line).ok()?;
    if crc32fast::hash(parsed.entry.get().as_bytes()) != parsed.checksum {
        return None;
    }
    serde_json::from_str(parsed.entry.get()).ok()
}

/// Result of reading a log: the records of every complete batch, and how
/// many trailing bytes belong to a batch that was cut short.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogContents {
    pub records: Vec<LogRecord>,
    pub valid_len: u64,
    pub torn_bytes: u64,
}

/// Parses a whole log. A line that fails its checksum is corruption unless it
/// is the unterminated last line; records of an incomplete final batch are
/// dropped.
pub fn read_log(mut reader: impl Read) -> Result<LogContents, StoreError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_log(&bytes)
}

fn decode_log(bytes: &[u8]) -> Result<LogContents, StoreError> {
    let mut records = Vec::new();
    // byte offset after the last complete batch, and the record count there
    let mut batch_end = (0u64, 0usize);
    let mut pending = 0u32;
    let mut offset = 0usize;
    for line in bytes.split_inclusive(|b| *b == b'\n') {
        let expected = records.len() as u64 + 1;
        if !line.ends_with(b"\n") {
            break;
        }
        let record = decode_line(line).ok_or(StoreError::CorruptLog { seq: expected })?;
        if record.global_seq != expected {
            return Err(StoreError::CorruptLog { seq: expected });
        }
        match &record.record {
            Record::Command { batch_len, .. } => {
                if pending > 0 {
                    return Err(StoreError::CorruptLog { seq: expected });
                }
                pending = *batch_len;
            }
            Record::Message { .. } => {
                if pending == 0 {
                    return Err(StoreError::CorruptLog { seq: expected });
                }
                pending -= 1;
            }
        }
        offset += line.len();
        records.push(record);
        if pending == 0 {
            batch_end = (offset as u64, records.len());
        }
    }
    records.truncate(batch_end.1);
    Ok(LogContents {
        records,
        valid_len: batch_end.0,
        torn_bytes: bytes.len() as u64 - batch_end.0,
    })
}

/// Rebuilds the registry by folding every logged command through the engine.
/// Commands that failed live fail the same way here.
pub fn replay(records: &[LogRecord]) -> Registry {
    let mut registry = Registry::new();
    replay_onto(&mut registry, records);
    registry
}

pub fn replay_onto(registry: &mut Registry, records: &[LogRecord]) {
    for env in records.iter().filter_map(LogRecord::envelope) {
        let _ = registry.apply(&env);
    }
}

/// Durability of appends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushPolicy {
    /// One write and flush per command batch.
    #[default]
    Batch,
    /// Flush after every record.
    Record,
}

/// File writer whose flush reaches the disk.
pub struct SyncedFile(pub File);

impl Write for SyncedFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.0.sync_data()
    }
}

/// Writer that fails once `budget` bytes have been written, after writing
/// whatever prefix still fits. Used to simulate a crash mid-append.
pub struct FaultyWriter<W> {
    inner: W,
    budget: usize,
}

impl<W: Write> FaultyWriter<W> {
    pub fn new(inner: W, budget: usize) -> Self {
        Self { inner, budget }
    }
}

impl<W: Write> Write for FaultyWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.budget == 0 {
            return Err(io::Error::other("injected write failure"));
        }
        let n = buf.len().min(self.budget);
        let n = self.inner.write(&buf[..n])?;
        self.budget -= n;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// In-memory log target. Clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<u8>>>);

impl MemorySink {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().expect("sink lock").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("sink lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cuts the buffer to `len` bytes, as a crash mid-write would.
    pub fn truncate(&self, len: usize) {
        self.0.lock().expect("sink lock").truncate(len);
    }
}

impl Write for MemorySink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("sink lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// The appending side of the log. Once a write fails the log freezes and
/// refuses every further append.
pub struct EventLog {
    writer: Box<dyn Write + Send>,
    next_seq: u64,
    policy: FlushPolicy,
    frozen: bool,
}

impl EventLog {
    /// `last_seq` is the global seq of the last record already in the log.
    pub fn new(writer: Box<dyn Write + Send>, last_seq: u64, policy: FlushPolicy) -> Self {
        Self {
            writer,
            next_seq: last_seq + 1,
            policy,
            frozen: false,
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Appends a command and the messages it produced. Returns the global seq
    /// of the last record written.
    pub fn append(
        &mut self,
        env: &CommandEnvelope,
        result: &Result<Applied, EngineError>,
    ) -> Result<u64, StoreError> {
        if self.frozen {
            return Err(StoreError::Frozen);
        }
        let messages: &[Message] = match result {
            Ok(applied) => &applied.messages,
            Err(_) => &[],
        };
        let mut seq = self.next_seq;
        let mut lines = Vec::with_capacity(1 + messages.len());
        let mut push = |record: Record| {
            let mut buf = Vec::new();
            encode_line(
                &LogRecord {
                    global_seq: seq,
                    auction_id: env.auction_id.clone(),
                    server_time: env.received_at,
                    record,
                },
                &mut buf,
            );
            lines.push(buf);
            seq += 1;
        };
        push(Record::Command {
            command: env.command.clone(),
            batch_len: messages.len() as u32,
        });
        for m in messages {
            push(Record::Message { message: m.clone() });
        }

        let written = match self.policy {
            FlushPolicy::Batch => self
                .writer
                .write_all(&lines.concat())
                .and_then(|_| self.writer.flush()),
            FlushPolicy::Record => lines
                .iter()
                .try_for_each(|l| self.writer.write_all(l).and_then(|_| self.writer.flush())),
        };
        if let Err(e) = written {
            self.frozen = true;
            return Err(e.into());
        }
        self.next_seq = seq;
        Ok(seq - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recovery {
    pub snapshot_seq: Option<u64>,
    pub records_replayed: usize,
    pub torn_bytes: u64,
}

/// A log directory: the event log plus periodic snapshots.
pub struct Store {
    dir: PathBuf,
    log: EventLog,
    snapshot_every: u64,
    last_snapshot: u64,
}

impl Store {
    /// Opens (or creates) `dir`, drops a torn tail, and rebuilds the registry
    /// from the newest usable snapshot plus the log suffix.
    pub fn open(
        dir: &Path,
        policy: FlushPolicy,
        snapshot_every: u64,
    ) -> Result<(Store, Registry, Recovery), StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let contents = read_log(BufReader::new(&mut file))?;
        if contents.torn_bytes > 0 {
            file.set_len(contents.valid_len)?;
            file.sync_data()?;
        }
        file.seek(io::SeekFrom::End(0))?;

        let last_seq = contents.records.last().map_or(0, |r| r.global_seq);
        let snap = latest_snapshot(dir, last_seq)?;
        let (mut registry, from) = match &snap {
            Some(s) => (s.registry.clone(), s.global_seq),
            None => (Registry::new(), 0),
        };
        let suffix = &contents.records[from as usize..];
        replay_onto(&mut registry, suffix);

        let recovery = Recovery {
            snapshot_seq: snap.map(|s| s.global_seq),
            records_replayed: suffix.len(),
            torn_bytes: contents.torn_bytes,
        };
        let store = Store {
            dir: dir.to_owned(),
            log: EventLog::new(Box::new(SyncedFile(file)), last_seq, policy),
            snapshot_every,
            last_snapshot: recovery.snapshot_seq.unwrap_or(0),
        };
        Ok((store, registry, recovery))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log(&mut self) -> &mut EventLog {
        &mut self.log
    }

    /// Writes a snapshot if enough records have accumulated since the last
    /// one. Must be called between batches.
    pub fn maybe_snapshot(&mut self, registry: &Registry) -> Result<bool, StoreError> {
        let seq = self.log.last_seq();
        if self.snapshot_every == 0 || seq < self.last_snapshot + self.snapshot_every {
            return Ok(false);
        }
        write_snapshot(&self.dir, seq, registry)?;
        self.last_snapshot = seq;
        Ok(true)
    }
}

/// Reads every complete record of the log in `dir`.
pub fn read_dir_log(dir: &Path) -> Result<LogContents, StoreError> {
    let path = dir.join(LOG_FILE);
    match File::open(&path) {
        Ok(f) => read_log(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LogContents::default()),
        Err(e) => Err(e.into()),
    }
}

/// Lines of the log in `dir`, decoded for display. Bad lines are shown as
/// such instead of aborting.
pub fn inspect_lines(dir: &Path) -> Result<Vec<String>, StoreError> {
    let f = File::open(dir.join(LOG_FILE))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).split(b'\n').enumerate() {
        let line = line?;
        out.push(match decode_line(&line) {
            Some(r) => serde_json::to_string(&r).expect("log records serialize"),
            None => format!("line {}: undecodable ({} bytes)", i + 1, line.len()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AuctionFormat;
    use crate::engine::testkit::{config, profile};

    fn create() -> CommandEnvelope {
        CommandEnvelope::new(
            "a1",
            0,
            Command::CreateAuction {
                config: config(AuctionFormat::Reverse),
                originator: profile("orig", "buyer"),
            },
        )
    }

    fn invite(person: &str, t: Millis) -> CommandEnvelope {
        CommandEnvelope::new(
            "a1",
            t,
            Command::Invite {
                profile: profile(person, person),
                role: crate::domain::Role::Observer,
                slot_id: None,
            },
        )
    }

    fn run(log: &mut EventLog, reg: &mut Registry, env: &CommandEnvelope) -> Result<u64, StoreError> {
        let result = reg.apply(env);
        log.append(env, &result)
    }

    #[test]
    fn seqs_start_at_one_and_round_trip() {
        let buf = MemorySink::default();
        let mut log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Batch);
        let mut reg = Registry::new();
        assert_eq!(run(&mut log, &mut reg, &create()).unwrap(), 1);
        assert_eq!(run(&mut log, &mut reg, &invite("x", 5)).unwrap(), 2);
        let contents = read_log(&buf.bytes()[..]).unwrap();
        assert_eq!(contents.records.len(), 2);
        assert_eq!(contents.torn_bytes, 0);
        assert_eq!(replay(&contents.records).digest(), reg.digest());
    }

    #[test]
    fn empty_log_replays_to_nothing() {
        let contents = read_log(&b""[..]).unwrap();
        assert!(replay(&contents.records).is_empty());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let buf = MemorySink::default();
        let mut reg = Registry::new();
        let mut log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Batch);
        run(&mut log, &mut reg, &create()).unwrap();
        let good = buf.len();
        let digest = reg.digest();

        let mut faulty = EventLog::new(
            Box::new(FaultyWriter::new(buf.clone(), 40)),
            log.last_seq(),
            FlushPolicy::Batch,
        );
        assert!(matches!(
            run(&mut faulty, &mut reg, &invite("x", 1)),
            Err(StoreError::IoFailure(_))
        ));
        assert!(faulty.is_frozen());
        assert!(matches!(
            run(&mut faulty, &mut reg, &invite("y", 2)),
            Err(StoreError::Frozen)
        ));

        let contents = read_log(&buf.bytes()[..]).unwrap();
        assert_eq!(contents.records.len(), 1);
        assert_eq!(contents.valid_len as usize, good);
        assert_eq!(contents.torn_bytes, 40);
        assert_eq!(replay(&contents.records).digest(), digest);
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let buf = MemorySink::default();
        let mut reg = Registry::new();
        let mut log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Batch);
        run(&mut log, &mut reg, &create()).unwrap();
        run(&mut log, &mut reg, &invite("xyz", 1)).unwrap();
        run(&mut log, &mut reg, &invite("zzz", 2)).unwrap();
        let mut bytes = buf.bytes();
        let pos = bytes
            .windows(3)
            .position(|w| w == b"xyz")
            .expect("payload present");
        bytes[pos] = b'q';
        assert!(matches!(
            read_log(&bytes[..]),
            Err(StoreError::CorruptLog { seq: 2 })
        ));
    }

    #[test]
    fn incomplete_batch_is_torn() {
        let buf = MemorySink::default();
        let mut reg = Registry::new();
        let mut log = EventLog::new(Box::new(buf.clone()), 0, FlushPolicy::Record);
        run(&mut log, &mut reg, &create()).unwrap();
        for (i, p) in ["auc", "pA"].iter().enumerate() {
            let role = if i == 0 {
                crate::domain::Role::Auctioneer
            } else {
                crate::domain::Role::Bidder
            };
            let env = CommandEnvelope::new(
                "a1",
                1,
                Command::Invite {
                    profile: profile(p, p),
                    role,
                    slot_id: None,
                },
            );
            run(&mut log, &mut reg, &env).unwrap();
        }
        for c in [
            Command::SignContract {
                person_id: "pA".into(),
            },
            Command::Admit {
                person_id: "pA".into(),
            },
        ] {
            run(&mut log, &mut reg, &CommandEnvelope::new("a1", 2, c)).unwrap();
        }
        // the admission produced a message record after its command record
        let bytes = buf.bytes();
        let full = read_log(&bytes[..]).unwrap();
        assert!(matches!(
            full.records.last().unwrap().record,
            Record::Message { .. }
        ));
        let last_line_start = bytes[..bytes.len() - 1]
            .iter()
            .rposition(|b| *b == b'\n')
            .unwrap()
            + 1;
        let cut = read_log(&bytes[..last_line_start]).unwrap();
        assert_eq!(cut.records.len(), full.records.len() - 2);
        assert!(cut.torn_bytes > 0);
    }

    #[test]
    fn store_reopens_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, mut reg, rec) = Store::open(dir.path(), FlushPolicy::Batch, 2).unwrap();
        assert_eq!(rec, Recovery::default());
        for env in [create(), invite("x", 1), invite("y", 2)] {
            let result = reg.apply(&env);
            store.log().append(&env, &result).unwrap();
            store.maybe_snapshot(&reg).unwrap();
        }
        let digest = reg.digest();
        drop(store);

        let path = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"checksum\":1,\"ent").unwrap();
        drop(f);

        let (mut store, reg, rec) = Store::open(dir.path(), FlushPolicy::Batch, 2).unwrap();
        assert_eq!(reg.digest(), digest);
        assert_eq!(rec.snapshot_seq, Some(2));
        assert_eq!(rec.records_replayed, 1);
        assert_eq!(rec.torn_bytes, 18);
        assert_eq!(store.log().last_seq(), 3);
        let contents = read_dir_log(dir.path()).unwrap();
        assert_eq!(contents.torn_bytes, 0);
        assert_eq!(replay(&contents.records).digest(), digest);
    }
}
