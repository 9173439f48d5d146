//! Point lookups and range scans against a persisted index.
//!
//! A lookup fetches the entire root layer, locates the governing cell for
//! the key, fetches the predicted range from the next layer, and repeats
//! until a data-layer window is in hand: L+1 fetches for L regressor
//! layers, each recorded in a per-lookup trace. No state is cached between
//! lookups and the engine never writes to the store.

use crate::error::{Error, Result};
use crate::optimizer::plan_cost;
use crate::regressor::{locate_cell, predict_range_raw, RegressorType};
use crate::storage::{RangeReader, StorageProfile};

/// Serialized size of one data-layer record: key then value, little-endian.
pub const RECORD_SIZE: u32 = 16;

/// One key-value pair of the data layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub key: u64,
    pub value: u64,
}

impl Record {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key.to_le_bytes());
        out.extend_from_slice(&self.value.to_le_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Result<Record> {
        if bytes.len() != RECORD_SIZE as usize {
            return Err(Error::CorruptIndex(format!(
                "record needs {RECORD_SIZE} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(Record {
            key: u64::from_le_bytes(bytes[0..8].try_into().unwrap()),
            value: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        })
    }
}

/// Directory entry of one persisted regressor layer, with the derived
/// fields filled in at open time.
#[derive(Debug, Clone)]
pub struct LayerMeta {
    pub regressor_type: RegressorType,
    pub precision: u64,
    pub cell_size: u32,
    pub cell_count: u64,
    /// Absolute file offset of the layer's first cell.
    pub byte_offset: u64,
    pub byte_length: u64,
    /// Derived on open from (type, precision, child unit, child extent).
    pub fetch_bound: u64,
    pub child_unit_size: u32,
}

/// An opened index: parsed directory plus the backing store. Immutable
/// after open; concurrent lookups are independent.
#[derive(Debug)]
pub struct IndexHandle<R> {
    store: R,
    layers: Vec<LayerMeta>,
    data_offset: u64,
    data_length: u64,
    record_count: u64,
}

/// One storage read performed during a lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchRecord {
    /// 0 is the root fetch; L is the data-layer fetch.
    pub layer_index: u32,
    pub offset: u64,
    pub length: u64,
    pub modeled_cost_s: f64,
}

/// Per-lookup I/O accounting: exactly L+1 reads for a point lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchTrace {
    pub reads: Vec<FetchRecord>,
    pub total_modeled_s: f64,
}

impl FetchTrace {
    fn push(&mut self, layer_index: u32, offset: u64, length: u64, profile: Option<&StorageProfile>) {
        let modeled_cost_s = profile.map(|p| p.transfer_cost(length)).unwrap_or(0.0);
        self.reads.push(FetchRecord {
            layer_index,
            offset,
            length,
            modeled_cost_s,
        });
        self.total_modeled_s += modeled_cost_s;
    }
}

fn decode_records(window: &[u8]) -> Result<Vec<Record>> {
    let rs = RECORD_SIZE as usize;
    if window.is_empty() || !window.len().is_multiple_of(rs) {
        return Err(Error::CorruptIndex(format!(
            "data window of {} bytes is not a positive multiple of the record size",
            window.len()
        )));
    }
    window.chunks(rs).map(Record::decode).collect()
}

impl<R: RangeReader> IndexHandle<R> {
    pub(crate) fn from_parts(
        store: R,
        layers: Vec<LayerMeta>,
        data_offset: u64,
        data_length: u64,
        record_count: u64,
    ) -> Self {
        IndexHandle {
            store,
            layers,
            data_offset,
            data_length,
            record_count,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMeta] {
        &self.layers
    }

    pub fn data_offset(&self) -> u64 {
        self.data_offset
    }

    pub fn data_length(&self) -> u64 {
        self.data_length
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    pub fn store(&self) -> &R {
        &self.store
    }

    fn read_traced(
        &self,
        layer_index: u32,
        offset: u64,
        length: u64,
        trace: &mut FetchTrace,
        profile: Option<&StorageProfile>,
    ) -> Result<Vec<u8>> {
        let bytes = self.store.read_range(offset, length)?;
        trace.push(layer_index, offset, length, profile);
        Ok(bytes)
    }

    /// Walks the regressor layers for `key` and returns the final
    /// data-layer window with its absolute offset.
    fn descend(
        &self,
        key: u64,
        trace: &mut FetchTrace,
        profile: Option<&StorageProfile>,
    ) -> Result<(Vec<u8>, u64)> {
        if self.layers.is_empty() {
            let bytes = self.read_traced(0, self.data_offset, self.data_length, trace, profile)?;
            return Ok((bytes, self.data_offset));
        }
        let root = &self.layers[0];
        let mut window = self.read_traced(0, root.byte_offset, root.byte_length, trace, profile)?;
        let mut window_local_start = 0u64;
        let mut window_abs = root.byte_offset;
        for l in 0..self.layers.len() {
            let meta = &self.layers[l];
            let cell = locate_cell(&window, window_local_start, meta.regressor_type, key)
                .map_err(|e| match e {
                    Error::CorruptLayer(msg) => Error::CorruptIndex(msg),
                    other => other,
                })?;
            let (child_abs, child_len) = if l + 1 < self.layers.len() {
                (self.layers[l + 1].byte_offset, self.layers[l + 1].byte_length)
            } else {
                (self.data_offset, self.data_length)
            };
            let (start, length) =
                predict_range_raw(meta.precision, meta.child_unit_size, child_len, &cell, key);
            debug_assert!(length <= meta.fetch_bound);
            window = self.read_traced((l + 1) as u32, child_abs + start, length, trace, profile)?;
            window_local_start = start;
            window_abs = child_abs + start;
        }
        Ok((window, window_abs))
    }

    /// Fetches the value for `key`, tracing every read. With a profile the
    /// trace carries per-read modeled costs.
    pub fn lookup(
        &self,
        key: u64,
        profile: Option<&StorageProfile>,
    ) -> Result<(u64, FetchTrace)> {
        let mut trace = FetchTrace::default();
        let (window, _) = self.descend(key, &mut trace, profile)?;
        let records = decode_records(&window)?;
        match records.binary_search_by_key(&key, |r| r.key) {
            Ok(i) => Ok((records[i].value, trace)),
            Err(_) => Err(Error::KeyNotFound { key }),
        }
    }

    /// All records with `begin <= key <= end`, in key order.
    ///
    /// Locates the first record at or after `begin` via the lookup descent
    /// (an absent `begin` resolves to its insertion position), then reads
    /// forward in fetch-bound-sized chunks until a key exceeds `end`.
    pub fn range_scan(&self, begin: u64, end: u64) -> Result<Vec<Record>> {
        if begin > end {
            return Err(Error::InvalidRange { begin, end });
        }
        let mut trace = FetchTrace::default();
        let (window, window_abs) = self.descend(begin, &mut trace, None)?;
        let records = decode_records(&window)?;
        let data_end = self.data_offset + self.data_length;

        let mut out = Vec::new();
        let start_pos = records.partition_point(|r| r.key < begin);
        for r in &records[start_pos..] {
            if r.key > end {
                return Ok(out);
            }
            out.push(*r);
        }

        // keep scanning past the initial window
        let chunk = match self.layers.last() {
            Some(last) => last.fetch_bound.max(RECORD_SIZE as u64),
            None => return Ok(out), // the window was the whole data layer
        };
        let mut cursor = window_abs + window.len() as u64;
        while cursor < data_end {
            let len = chunk.min(data_end - cursor);
            let bytes = self.store.read_range(cursor, len)?;
            for r in decode_records(&bytes)? {
                if r.key > end {
                    return Ok(out);
                }
                if r.key >= begin {
                    out.push(r);
                }
            }
            cursor += len;
        }
        Ok(out)
    }

    /// The modeled end-to-end lookup seconds of this index's stored plan.
    /// Every executed lookup's traced total is bounded by this value:
    /// actual reads never exceed the per-layer fetch bounds and the root
    /// read is exact.
    pub fn lookup_modeled_cost(&self, profile: &StorageProfile) -> f64 {
        let root_bytes = self
            .layers
            .first()
            .map(|l| l.byte_length)
            .unwrap_or(self.data_length);
        let fetch_bounds: Vec<u64> = self.layers.iter().map(|l| l.fetch_bound).collect();
        plan_cost(root_bytes, &fetch_bounds, profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{open_index, serialize_index};
    use crate::optimizer::{search_optimal, LayerPlan, SearchSpace};
    use crate::regressor::EntryTable;
    use crate::storage::{MemStore, SimulatedStore};

    fn records_from_keys(keys: &[u64]) -> Vec<Record> {
        keys.iter()
            .enumerate()
            .map(|(i, &k)| Record {
                key: k,
                value: (i as u64) * 10 + 1,
            })
            .collect()
    }

    fn build_index(records: &[Record], chain: &[(RegressorType, u64)]) -> IndexHandle<MemStore> {
        let keys: Vec<u64> = records.iter().map(|r| r.key).collect();
        let profile = StorageProfile::new(0.001, 1e8).unwrap();
        let plan = manual_plan(&keys, chain, &profile);
        let mut bytes = Vec::new();
        serialize_index(&plan, records, &mut bytes).unwrap();
        open_index(MemStore::new(bytes)).unwrap()
    }

    fn manual_plan(keys: &[u64], chain: &[(RegressorType, u64)], profile: &StorageProfile) -> LayerPlan {
        let mut table = EntryTable::new(keys.to_vec(), RECORD_SIZE).unwrap();
        let data_total = table.total_bytes();
        let mut stack = Vec::new();
        for &(ty, lam) in chain {
            let layer = crate::optimizer::build_layer(ty, lam, &table).unwrap();
            table = EntryTable::from_layer(&layer);
            stack.push(layer);
        }
        LayerPlan::from_stack(stack, data_total, profile)
    }

    #[test]
    fn lookup_finds_present_keys() {
        let records = vec![
            Record { key: 10, value: 100 },
            Record { key: 20, value: 200 },
            Record { key: 30, value: 300 },
        ];
        for chain in [&[][..], &[(RegressorType::Step, 2)][..]] {
            let handle = build_index(&records, chain);
            let (value, trace) = handle.lookup(20, None).unwrap();
            assert_eq!(value, 200);
            assert_eq!(trace.reads.len(), handle.layer_count() + 1);
            for (i, r) in trace.reads.iter().enumerate() {
                assert_eq!(r.layer_index, i as u32);
            }
        }
    }

    #[test]
    fn lookup_is_deterministic() {
        let records = records_from_keys(&(0..500).map(|i| i * 7).collect::<Vec<_>>());
        let handle = build_index(&records, &[(RegressorType::Step, 16), (RegressorType::Step, 4)]);
        let p = StorageProfile::new(0.005, 1e8).unwrap();
        let (v1, t1) = handle.lookup(7 * 123, Some(&p)).unwrap();
        let (v2, t2) = handle.lookup(7 * 123, Some(&p)).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(t1, t2);
        // the trace total is the fold of its per-read costs
        let resum = t1
            .reads
            .iter()
            .fold(0.0f64, |acc, r| acc + r.modeled_cost_s);
        assert_eq!(t1.total_modeled_s, resum);
    }

    #[test]
    fn lookup_missing_key_is_not_found() {
        let records = records_from_keys(&[10, 20, 30, 40, 50]);
        let handle = build_index(&records, &[(RegressorType::Step, 2)]);
        for absent in [0u64, 15, 55, u64::MAX] {
            match handle.lookup(absent, None) {
                Err(Error::KeyNotFound { key }) => assert_eq!(key, absent),
                other => panic!("expected KeyNotFound, got {other:?}"),
            }
        }
    }

    #[test]
    fn searched_index_serves_every_key_within_bounds() {
        let mut state = 0x1357_9BDFu64;
        let mut keys: Vec<u64> = (0..20_000)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let records = records_from_keys(&keys);
        let profile = StorageProfile::new(1e-4, 134e6).unwrap();
        let table = EntryTable::new(keys.clone(), RECORD_SIZE).unwrap();
        let plan = search_optimal(&table, &profile, &SearchSpace::default()).unwrap();
        let mut bytes = Vec::new();
        serialize_index(&plan, &records, &mut bytes).unwrap();
        let handle = open_index(MemStore::new(bytes)).unwrap();
        assert_eq!(handle.layer_count(), plan.layer_count());

        let modeled = handle.lookup_modeled_cost(&profile);
        for (i, r) in records.iter().enumerate().step_by(37) {
            let (value, trace) = handle.lookup(r.key, Some(&profile)).unwrap();
            assert_eq!(value, r.value, "record {i}");
            assert_eq!(trace.reads.len(), handle.layer_count() + 1);
            assert_eq!(trace.reads[0].length, plan.root_bytes);
            for (l, read) in trace.reads.iter().skip(1).enumerate() {
                assert!(read.length <= plan.fetch_bounds[l]);
            }
            assert!(trace.total_modeled_s <= modeled);
        }
    }

    #[test]
    fn range_scan_contiguous_slice() {
        let records = records_from_keys(&(1..=100).collect::<Vec<_>>());
        let handle = build_index(&records, &[(RegressorType::Step, 8)]);
        let got = handle.range_scan(10, 13).unwrap();
        assert_eq!(got.iter().map(|r| r.key).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
    }

    #[test]
    fn degenerate_range_equals_point_lookup() {
        let records = records_from_keys(&(1..=100).map(|i| i * 3).collect::<Vec<_>>());
        let handle = build_index(&records, &[(RegressorType::Step, 8)]);
        let k = 3 * 42;
        let got = handle.range_scan(k, k).unwrap();
        let (value, _) = handle.lookup(k, None).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0], Record { key: k, value });
    }

    #[test]
    fn range_scan_matches_filter_oracle() {
        let mut state = 0xC0FFEEu64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut keys: Vec<u64> = (0..5000).map(|_| next() % 1_000_000).collect();
        keys.sort_unstable();
        keys.dedup();
        let records = records_from_keys(&keys);
        // small fanouts so scans cross many windows
        let handle = build_index(&records, &[(RegressorType::Step, 4), (RegressorType::Step, 8)]);
        for _ in 0..100 {
            let a = next() % 1_100_000;
            let b = next() % 1_100_000;
            let (begin, end) = (a.min(b), a.max(b));
            let got = handle.range_scan(begin, end).unwrap();
            let expected: Vec<Record> = records
                .iter()
                .filter(|r| r.key >= begin && r.key <= end)
                .copied()
                .collect();
            assert_eq!(got, expected, "range [{begin}, {end}]");
        }
        // absent begin inside the key space
        let got = handle.range_scan(0, u64::MAX).unwrap();
        assert_eq!(got, records);
    }

    #[test]
    fn range_scan_rejects_inverted_ranges() {
        let records = records_from_keys(&[1, 2, 3]);
        let handle = build_index(&records, &[]);
        assert!(matches!(
            handle.range_scan(5, 4),
            Err(Error::InvalidRange { begin: 5, end: 4 })
        ));
    }

    #[test]
    fn modeled_cost_for_flat_index_is_one_fetch() {
        let records = records_from_keys(&(0..64).collect::<Vec<_>>());
        let handle = build_index(&records, &[]);
        let p = StorageProfile::new(1.0, 1.0).unwrap();
        assert_eq!(
            handle.lookup_modeled_cost(&p),
            p.transfer_cost(handle.data_length())
        );
    }

    /// Handcrafted directory with the worked example's geometry: three
    /// step layers whose fetch bounds all derive to 4000 bytes over a
    /// 4000-byte root, giving the known 20.16 ms / 400.16 ms totals. Only
    /// the directory matters here; open never reads layer or data bytes.
    #[test]
    fn synthetic_tall_directory_reproduces_worked_modeled_cost() {
        use crate::format::{DIR_ENTRY_LEN, HEADER_LEN, MAGIC};

        let cell_counts = [250u64, 251, 252];
        let record_count = 253u64;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes()); // version
        bytes.extend_from_slice(&0u16.to_le_bytes()); // flags
        bytes.extend_from_slice(&3u32.to_le_bytes()); // layers
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&record_count.to_le_bytes());
        bytes.resize(HEADER_LEN as usize, 0);
        let mut offset = HEADER_LEN + DIR_ENTRY_LEN * 3;
        for count in cell_counts {
            bytes.extend_from_slice(&1u32.to_le_bytes()); // step
            bytes.extend_from_slice(&16u32.to_le_bytes());
            bytes.extend_from_slice(&250u64.to_le_bytes()); // fanout
            bytes.extend_from_slice(&count.to_le_bytes());
            bytes.extend_from_slice(&offset.to_le_bytes());
            bytes.extend_from_slice(&(count * 16).to_le_bytes());
            offset += count * 16;
        }
        let data_len = record_count * RECORD_SIZE as u64;
        bytes.resize((offset + data_len) as usize, 0);

        let handle = crate::format::open_index(MemStore::new(bytes)).unwrap();
        assert_eq!(handle.layer_count(), 3);
        assert!(handle.layers().iter().all(|l| l.fetch_bound == 4000));

        let short = StorageProfile::new(0.005, 1e8).unwrap();
        let long = StorageProfile::new(0.1, 1e8).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
        assert!(close(handle.lookup_modeled_cost(&short), 0.02016));
        assert!(close(handle.lookup_modeled_cost(&long), 0.40016));
    }

    #[test]
    fn traced_costs_respect_the_modeled_upper_bound() {
        let mut state = 0x7777_1234u64;
        let mut keys: Vec<u64> = (0..3000)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let records = records_from_keys(&keys);
        let profile = StorageProfile::new(0.002, 5e7).unwrap();
        let plan = manual_plan(
            &keys,
            &[(RegressorType::Linear, 256), (RegressorType::Step, 16)],
            &profile,
        );
        let mut bytes = Vec::new();
        serialize_index(&plan, &records, &mut bytes).unwrap();
        let sim = SimulatedStore::new(MemStore::new(bytes), profile);
        let handle = open_index(sim).unwrap();
        let modeled = handle.lookup_modeled_cost(&profile);
        let mut max_traced = 0.0f64;
        for r in records.iter().step_by(13) {
            let (_, trace) = handle.lookup(r.key, Some(&profile)).unwrap();
            max_traced = max_traced.max(trace.total_modeled_s);
        }
        assert!(max_traced <= modeled);
        assert!(max_traced > 0.0);
    }
}
