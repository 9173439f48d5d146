//! Storage devices as range-readable byte stores, plus the data transfer
//! cost function.
//!
//! A device is characterized by a [`StorageProfile`]: a fixed per-request
//! latency and a sustained bandwidth. Fetching `n` bytes is modeled as
//! `latency_s + n / bandwidth_bps`. All sizes are bytes, all times are
//! seconds, in double precision. Every piece of code that needs device
//! timing goes through [`StorageProfile::transfer_cost`]; nothing else
//! hardcodes it.

use std::fs::File;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Latency/bandwidth description of a storage device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageProfile {
    latency_s: f64,
    bandwidth_bps: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    latency_s: f64,
    bandwidth_bps: f64,
}

impl StorageProfile {
    /// Builds a profile, rejecting negative latency and non-positive or
    /// non-finite bandwidth.
    pub fn new(latency_s: f64, bandwidth_bps: f64) -> Result<Self> {
        if !latency_s.is_finite() || latency_s < 0.0 {
            return Err(Error::InvalidProfile(format!(
                "latency_s must be finite and >= 0, got {latency_s}"
            )));
        }
        if !bandwidth_bps.is_finite() || bandwidth_bps <= 0.0 {
            return Err(Error::InvalidProfile(format!(
                "bandwidth_bps must be finite and > 0, got {bandwidth_bps}"
            )));
        }
        Ok(StorageProfile {
            latency_s,
            bandwidth_bps,
        })
    }

    pub fn latency_s(&self) -> f64 {
        self.latency_s
    }

    pub fn bandwidth_bps(&self) -> f64 {
        self.bandwidth_bps
    }

    /// Modeled time in seconds to fetch `nbytes` in one request:
    /// one round trip plus the transfer itself.
    pub fn transfer_cost(&self, nbytes: u64) -> f64 {
        self.latency_s + nbytes as f64 / self.bandwidth_bps
    }

    /// Parses a profile from a JSON object with exactly the keys
    /// `latency_s` and `bandwidth_bps`. Unknown keys are rejected.
    pub fn parse_json(text: &str) -> Result<Self> {
        let doc: ProfileDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        StorageProfile::new(doc.latency_s, doc.bandwidth_bps)
    }

    /// Loads a profile config file from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        StorageProfile::parse_json(&text)
    }

    /// Renders the profile as its canonical JSON config document.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"latency_s\": {}, \"bandwidth_bps\": {}}}",
            self.latency_s, self.bandwidth_bps
        )
    }
}

/// A read-only byte store addressable by (offset, length).
///
/// Reads are repeatable: the same range yields the same bytes on an
/// unmodified store. Implementations are safe for concurrent reads.
pub trait RangeReader: Send + Sync {
    /// Total number of addressable bytes.
    fn total_len(&self) -> u64;

    /// Returns exactly `length` bytes starting at `offset`.
    /// Fails with [`Error::OutOfBounds`] when `offset + length` exceeds
    /// [`RangeReader::total_len`]; callers clip first.
    fn read_range(&self, offset: u64, length: u64) -> Result<Vec<u8>>;
}

impl<R: RangeReader + ?Sized> RangeReader for &R {
    fn total_len(&self) -> u64 {
        (**self).total_len()
    }

    fn read_range(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        (**self).read_range(offset, length)
    }
}

fn check_bounds(offset: u64, length: u64, total_len: u64) -> Result<()> {
    let end = offset.checked_add(length);
    match end {
        Some(end) if end <= total_len => Ok(()),
        _ => Err(Error::OutOfBounds {
            offset,
            length,
            total_len,
        }),
    }
}

/// In-memory byte store.
#[derive(Debug, Clone)]
pub struct MemStore {
    bytes: Vec<u8>,
}

impl MemStore {
    pub fn new(bytes: Vec<u8>) -> Self {
        MemStore { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl From<Vec<u8>> for MemStore {
    fn from(bytes: Vec<u8>) -> Self {
        MemStore::new(bytes)
    }
}

impl RangeReader for MemStore {
    fn total_len(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn read_range(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        check_bounds(offset, length, self.total_len())?;
        let start = offset as usize;
        let end = start + length as usize;
        Ok(self.bytes[start..end].to_vec())
    }
}

/// Local file store. Reads use positioned I/O and never move a shared
/// cursor, so concurrent reads are safe.
#[derive(Debug)]
pub struct FileStore {
    file: File,
    len: u64,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Ok(FileStore { file, len })
    }
}

impl RangeReader for FileStore {
    fn total_len(&self) -> u64 {
        self.len
    }

    fn read_range(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        use std::os::unix::fs::FileExt;
        check_bounds(offset, length, self.len)?;
        let mut buf = vec![0u8; length as usize];
        self.file.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    }
}

#[derive(Debug, Default)]
struct SimState {
    accrued_s: f64,
    read_log: Vec<(u64, u64)>,
}

/// Wraps any store and accounts every read at a given profile's modeled
/// cost. `accrued_seconds` is exactly the sum of `transfer_cost` over the
/// read log, in log order.
///
/// With `real_sleep` enabled each read also sleeps for its modeled
/// duration, turning the wrapper into a crude device emulator. Off by
/// default so tests stay deterministic and fast.
#[derive(Debug)]
pub struct SimulatedStore<R> {
    inner: R,
    profile: StorageProfile,
    real_sleep: bool,
    state: Mutex<SimState>,
}

impl<R: RangeReader> SimulatedStore<R> {
    pub fn new(inner: R, profile: StorageProfile) -> Self {
        SimulatedStore {
            inner,
            profile,
            real_sleep: false,
            state: Mutex::new(SimState::default()),
        }
    }

    pub fn with_real_sleep(mut self, enabled: bool) -> Self {
        self.real_sleep = enabled;
        self
    }

    pub fn profile(&self) -> StorageProfile {
        self.profile
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }

    /// Total modeled seconds accrued so far.
    pub fn accrued_seconds(&self) -> f64 {
        self.state.lock().unwrap().accrued_s
    }

    /// Snapshot of the (offset, length) read log, in accounting order.
    pub fn read_log(&self) -> Vec<(u64, u64)> {
        self.state.lock().unwrap().read_log.clone()
    }

    pub fn read_count(&self) -> usize {
        self.state.lock().unwrap().read_log.len()
    }

    /// Clears the accounting state.
    pub fn reset(&self) {
        let mut st = self.state.lock().unwrap();
        st.accrued_s = 0.0;
        st.read_log.clear();
    }
}

impl<R: RangeReader> RangeReader for SimulatedStore<R> {
    fn total_len(&self) -> u64 {
        self.inner.total_len()
    }

    fn read_range(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        let bytes = self.inner.read_range(offset, length)?;
        let cost = self.profile.transfer_cost(length);
        {
            let mut st = self.state.lock().unwrap();
            st.read_log.push((offset, length));
            st.accrued_s += cost;
        }
        if self.real_sleep {
            std::thread::sleep(std::time::Duration::from_secs_f64(cost));
        }
        Ok(bytes)
    }
}

/// Convenience free function mirroring the profile method; kept for call
/// sites that work with bare numbers.
pub fn transfer_cost(profile: &StorageProfile, nbytes: u64) -> f64 {
    profile.transfer_cost(nbytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn transfer_cost_matches_known_figures() {
        let short = StorageProfile::new(0.005, 1e8).unwrap();
        assert!(close(short.transfer_cost(4000), 0.00504));
        let long = StorageProfile::new(0.1, 1e8).unwrap();
        assert!(close(long.transfer_cost(500_000), 0.105));
    }

    #[test]
    fn zero_size_transfer_costs_one_round_trip() {
        let p = StorageProfile::new(0.037, 5e7).unwrap();
        assert_eq!(p.transfer_cost(0), 0.037);
    }

    #[test]
    fn transfer_cost_is_monotone_and_subadditive() {
        let p = StorageProfile::new(0.002, 3.3e7).unwrap();
        let mut prev = p.transfer_cost(0);
        for n in [1u64, 2, 10, 1000, 4096, 1 << 20, 1 << 30] {
            let c = p.transfer_cost(n);
            assert!(c >= prev);
            prev = c;
        }
        for (a, b) in [(0u64, 0u64), (1, 1), (4096, 123), (1 << 20, 1 << 19)] {
            assert!(p.transfer_cost(a) + p.transfer_cost(b) >= p.transfer_cost(a + b));
        }
    }

    #[test]
    fn profile_invariants_enforced() {
        assert!(StorageProfile::new(-1.0, 1.0).is_err());
        assert!(StorageProfile::new(0.0, 0.0).is_err());
        assert!(StorageProfile::new(0.0, -5.0).is_err());
        assert!(StorageProfile::new(f64::NAN, 1.0).is_err());
        assert!(StorageProfile::new(0.0, f64::INFINITY).is_err());
        assert!(StorageProfile::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn parse_profile_json() {
        let p = StorageProfile::parse_json(r#"{"latency_s": 0.005, "bandwidth_bps": 1e8}"#)
            .unwrap();
        assert_eq!(p.latency_s(), 0.005);
        assert_eq!(p.bandwidth_bps(), 1e8);

        let sweep = StorageProfile::parse_json(r#"{"latency_s": 1e-6, "bandwidth_bps": 134e6}"#)
            .unwrap();
        assert_eq!(sweep.bandwidth_bps(), 134e6);

        match StorageProfile::parse_json(r#"{"latency_s": -1, "bandwidth_bps": 1}"#) {
            Err(Error::InvalidProfile(_)) => {}
            other => panic!("expected InvalidProfile, got {other:?}"),
        }
        match StorageProfile::parse_json(r#"{"latency_s": 1, "bandwidth_bps": 1, "extra": 2}"#) {
            Err(Error::Parse(_)) => {}
            other => panic!("expected Parse error for unknown key, got {other:?}"),
        }
        match StorageProfile::parse_json("not json") {
            Err(Error::Parse(_)) => {}
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn profile_json_roundtrip() {
        let p = StorageProfile::new(0.0125, 134e6).unwrap();
        let back = StorageProfile::parse_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn mem_store_reads_exact_slice() {
        let store = MemStore::new(vec![0x01, 0x02, 0x03]);
        assert_eq!(store.read_range(1, 2).unwrap(), vec![0x02, 0x03]);
        assert_eq!(store.total_len(), 3);
        match store.read_range(2, 2) {
            Err(Error::OutOfBounds { .. }) => {}
            other => panic!("expected OutOfBounds, got {other:?}"),
        }
        // offset + length overflow is out of bounds, not a panic
        assert!(store.read_range(u64::MAX, 2).is_err());
    }

    #[test]
    fn file_store_matches_mem_store() {
        let mut path = std::env::temp_dir();
        path.push(format!("airx-storage-test-{}", std::process::id()));
        let data: Vec<u8> = (0..=255u8).cycle().take(10_000).collect();
        std::fs::write(&path, &data).unwrap();
        let fs = FileStore::open(&path).unwrap();
        let ms = MemStore::new(data);
        assert_eq!(fs.total_len(), ms.total_len());
        for (off, len) in [(0u64, 1u64), (0, 10_000), (9_999, 1), (123, 4567)] {
            assert_eq!(fs.read_range(off, len).unwrap(), ms.read_range(off, len).unwrap());
        }
        assert!(fs.read_range(10_000, 1).is_err());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn simulated_store_accrues_modeled_cost() {
        let p = StorageProfile::new(1.0, 1.0).unwrap();
        let sim = SimulatedStore::new(MemStore::new(vec![7u8; 8]), p);
        sim.read_range(0, 1).unwrap();
        sim.read_range(0, 1).unwrap();
        assert_eq!(sim.accrued_seconds(), 4.0);
        assert_eq!(sim.read_log(), vec![(0, 1), (0, 1)]);
    }

    #[test]
    fn simulated_store_log_count_matches_calls() {
        let p = StorageProfile::new(0.01, 1e6).unwrap();
        let sim = SimulatedStore::new(MemStore::new(vec![0u8; 1024]), p);
        for i in 0..17u64 {
            sim.read_range(i, 3).unwrap();
        }
        assert_eq!(sim.read_count(), 17);
    }

    #[test]
    fn simulated_store_resum_is_bit_identical() {
        let p = StorageProfile::new(0.0003, 7.7e7).unwrap();
        let sim = SimulatedStore::new(MemStore::new(vec![0u8; 1 << 17]), p);
        let lengths = [1u64, 17, 4096, 33, 9999, 1, 65536, 12345];
        for (i, len) in lengths.iter().enumerate() {
            sim.read_range(i as u64, *len).unwrap();
        }
        let resum = sim
            .read_log()
            .iter()
            .fold(0.0f64, |acc, (_, len)| acc + p.transfer_cost(*len));
        assert_eq!(sim.accrued_seconds(), resum);
    }

    #[test]
    fn simulated_store_concurrent_accounting_stays_exact() {
        let p = StorageProfile::new(0.001, 1e7).unwrap();
        let sim = std::sync::Arc::new(SimulatedStore::new(
            MemStore::new(vec![0u8; 4096]),
            p,
        ));
        let mut handles = Vec::new();
        for t in 0..8u64 {
            let s = std::sync::Arc::clone(&sim);
            handles.push(std::thread::spawn(move || {
                for i in 0..100u64 {
                    s.read_range((t * 100 + i) % 4000, (i % 90) + 1).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(sim.read_count(), 800);
        let resum = sim
            .read_log()
            .iter()
            .fold(0.0f64, |acc, (_, len)| acc + p.transfer_cost(*len));
        assert_eq!(sim.accrued_seconds(), resum);
    }

    #[test]
    fn failed_read_is_not_accounted() {
        let p = StorageProfile::new(1.0, 1.0).unwrap();
        let sim = SimulatedStore::new(MemStore::new(vec![0u8; 4]), p);
        assert!(sim.read_range(3, 5).is_err());
        assert_eq!(sim.read_count(), 0);
        assert_eq!(sim.accrued_seconds(), 0.0);
    }
}
