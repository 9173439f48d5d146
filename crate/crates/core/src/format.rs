//! On-disk index layout and dataset ingestion.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! header (64 bytes)
//!   magic "AIRX" | version u16 = 1 | flags u16 = 0 | layer_count u32
//!   key_bytes u32 = 8 | value_bytes u32 = 8 | record_count u64 | zeros
//! directory (40 bytes per layer, top-down)
//!   type_tag u32 | cell_size u32 | precision u64 | cell_count u64
//!   byte_offset u64 | byte_length u64
//! layers, top-down, contiguous
//! data layer: record_count fixed 16-byte records, sorted by key
//! ```
//!
//! Fetch bounds are not stored; they are recomputed on open from (type,
//! precision, child unit size, child extent), so the stored directory can
//! never disagree with the derived value.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::{IndexHandle, LayerMeta, Record, RECORD_SIZE};
use crate::error::{Error, Result};
use crate::optimizer::LayerPlan;
use crate::regressor::{fetch_bound, RegressorType};
use crate::storage::RangeReader;

pub const MAGIC: [u8; 4] = *b"AIRX";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 64;
pub const DIR_ENTRY_LEN: u64 = 40;

/// Total file size a plan over `record_count` records serializes to.
pub fn file_size_for_plan(plan: &LayerPlan, record_count: u64) -> u64 {
    HEADER_LEN
        + DIR_ENTRY_LEN * plan.layer_count() as u64
        + plan.index_bytes()
        + record_count * RECORD_SIZE as u64
}

fn validate_plan(plan: &LayerPlan, records: &[Record]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidPlan("no records to index".into()));
    }
    for i in 1..records.len() {
        if records[i].key <= records[i - 1].key {
            return Err(Error::InvalidPlan(format!(
                "records not sorted with distinct keys at position {i}"
            )));
        }
    }
    let data_bytes = records.len() as u64 * RECORD_SIZE as u64;
    let layer_count = plan.layers.len();
    if plan.configs.len() != layer_count || plan.fetch_bounds.len() != layer_count {
        return Err(Error::InvalidPlan(
            "configs / fetch_bounds length mismatch".into(),
        ));
    }
    for (l, layer) in plan.layers.iter().enumerate() {
        if layer.cells.is_empty() {
            return Err(Error::InvalidPlan(format!("layer {l} has no cells")));
        }
        if layer.cell_size != layer.regressor_type.cell_size() {
            return Err(Error::InvalidPlan(format!(
                "layer {l} cell size does not match its type"
            )));
        }
        if plan.configs[l] != (layer.regressor_type, layer.precision) {
            return Err(Error::InvalidPlan(format!("config mismatch at layer {l}")));
        }
        let (child_unit, child_total, child_entries) = if l + 1 < layer_count {
            let c = &plan.layers[l + 1];
            (c.cell_size, c.layer_bytes(), c.cell_count())
        } else {
            (RECORD_SIZE, data_bytes, records.len() as u64)
        };
        if layer.child_unit_size != child_unit || layer.child_total_bytes != child_total {
            return Err(Error::InvalidPlan(format!(
                "layer {l} child geometry does not match the layer below"
            )));
        }
        if layer.cell_count() >= child_entries {
            return Err(Error::InvalidPlan(format!("layer {l} does not shrink")));
        }
        let expect = fetch_bound(
            layer.regressor_type,
            layer.precision,
            child_unit,
            child_total,
        );
        if layer.fetch_bound != expect || plan.fetch_bounds[l] != expect {
            return Err(Error::InvalidPlan(format!(
                "layer {l} fetch bound disagrees with its derivation"
            )));
        }
    }
    let expect_root = plan
        .layers
        .first()
        .map(|l| l.layer_bytes())
        .unwrap_or(data_bytes);
    if plan.root_bytes != expect_root {
        return Err(Error::InvalidPlan("root_bytes mismatch".into()));
    }
    Ok(())
}

/// Writes the index file for a plan and its records. Byte output is a pure
/// function of the inputs. Returns the number of bytes written.
pub fn serialize_index<W: Write>(
    plan: &LayerPlan,
    records: &[Record],
    out: &mut W,
) -> Result<u64> {
    validate_plan(plan, records)?;
    let layer_count = plan.layers.len() as u32;

    let mut header = [0u8; HEADER_LEN as usize];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&0u16.to_le_bytes()); // flags
    header[8..12].copy_from_slice(&layer_count.to_le_bytes());
    header[12..16].copy_from_slice(&8u32.to_le_bytes()); // key bytes
    header[16..20].copy_from_slice(&8u32.to_le_bytes()); // value bytes
    header[20..28].copy_from_slice(&(records.len() as u64).to_le_bytes());
    out.write_all(&header)?;

    let mut offset = HEADER_LEN + DIR_ENTRY_LEN * layer_count as u64;
    for layer in &plan.layers {
        let mut entry = [0u8; DIR_ENTRY_LEN as usize];
        entry[0..4].copy_from_slice(&layer.regressor_type.tag().to_le_bytes());
        entry[4..8].copy_from_slice(&layer.cell_size.to_le_bytes());
        entry[8..16].copy_from_slice(&layer.precision.to_le_bytes());
        entry[16..24].copy_from_slice(&layer.cell_count().to_le_bytes());
        entry[24..32].copy_from_slice(&offset.to_le_bytes());
        entry[32..40].copy_from_slice(&layer.layer_bytes().to_le_bytes());
        out.write_all(&entry)?;
        offset += layer.layer_bytes();
    }

    let mut written = HEADER_LEN + DIR_ENTRY_LEN * layer_count as u64;
    for layer in &plan.layers {
        let bytes = layer.encode_cells();
        out.write_all(&bytes)?;
        written += bytes.len() as u64;
    }
    let mut buf = Vec::with_capacity(records.len() * RECORD_SIZE as usize);
    for r in records {
        r.encode_into(&mut buf);
    }
    out.write_all(&buf)?;
    written += buf.len() as u64;
    Ok(written)
}

/// Convenience wrapper writing the index to a file path.
pub fn write_index_file(plan: &LayerPlan, records: &[Record], path: &Path) -> Result<u64> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = serialize_index(plan, records, &mut file)?;
    file.flush()?;
    Ok(n)
}

/// Opens a persisted index: reads the header and directory only (exactly
/// 64 + 40L metadata bytes, never layer or data bytes) and derives each
/// layer's fetch bound.
pub fn open_index<R: RangeReader>(store: R) -> Result<IndexHandle<R>> {
    let total = store.total_len();
    if total < HEADER_LEN {
        if total >= 4 {
            let head = store.read_range(0, 4)?;
            if head != MAGIC {
                return Err(Error::BadMagic(head.try_into().unwrap()));
            }
        }
        return Err(Error::CorruptDirectory(format!(
            "file of {total} bytes is shorter than the {HEADER_LEN}-byte header"
        )));
    }
    let header = store.read_range(0, HEADER_LEN)?;
    if header[0..4] != MAGIC {
        return Err(Error::BadMagic(header[0..4].try_into().unwrap()));
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes(header[6..8].try_into().unwrap());
    if flags != 0 {
        return Err(Error::CorruptDirectory(format!("nonzero flags {flags:#06x}")));
    }
    let layer_count = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let key_bytes = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let value_bytes = u32::from_le_bytes(header[16..20].try_into().unwrap());
    if key_bytes != 8 || value_bytes != 8 {
        return Err(Error::CorruptDirectory(format!(
            "unsupported key/value widths {key_bytes}/{value_bytes}"
        )));
    }
    let record_count = u64::from_le_bytes(header[20..28].try_into().unwrap());
    if header[28..].iter().any(|&b| b != 0) {
        return Err(Error::CorruptDirectory(
            "reserved header bytes not zero".into(),
        ));
    }
    if record_count == 0 {
        return Err(Error::CorruptDirectory("empty data layer".into()));
    }

    let dir_len = DIR_ENTRY_LEN * layer_count as u64;
    let meta_end = HEADER_LEN + dir_len;
    if meta_end > total {
        return Err(Error::CorruptDirectory(format!(
            "directory of {layer_count} layers exceeds the file"
        )));
    }
    let dir = if layer_count > 0 {
        store.read_range(HEADER_LEN, dir_len)?
    } else {
        Vec::new()
    };

    struct RawEntry {
        ty: RegressorType,
        cell_size: u32,
        precision: u64,
        cell_count: u64,
        byte_offset: u64,
        byte_length: u64,
    }
    let mut entries = Vec::with_capacity(layer_count as usize);
    let mut cursor = meta_end;
    for l in 0..layer_count as usize {
        let e = &dir[l * DIR_ENTRY_LEN as usize..(l + 1) * DIR_ENTRY_LEN as usize];
        let tag = u32::from_le_bytes(e[0..4].try_into().unwrap());
        let ty = RegressorType::from_tag(tag)
            .ok_or_else(|| Error::CorruptDirectory(format!("unknown type tag {tag} at layer {l}")))?;
        let cell_size = u32::from_le_bytes(e[4..8].try_into().unwrap());
        if cell_size != ty.cell_size() {
            return Err(Error::CorruptDirectory(format!(
                "layer {l} cell size {cell_size} does not match type {}",
                ty.name()
            )));
        }
        let precision = u64::from_le_bytes(e[8..16].try_into().unwrap());
        if precision == 0 {
            return Err(Error::CorruptDirectory(format!("layer {l} has zero precision")));
        }
        let cell_count = u64::from_le_bytes(e[16..24].try_into().unwrap());
        if cell_count == 0 {
            return Err(Error::CorruptDirectory(format!("layer {l} has no cells")));
        }
        let byte_offset = u64::from_le_bytes(e[24..32].try_into().unwrap());
        let byte_length = u64::from_le_bytes(e[32..40].try_into().unwrap());
        let expect_len = cell_count
            .checked_mul(cell_size as u64)
            .ok_or_else(|| Error::CorruptDirectory(format!("layer {l} size overflows")))?;
        if byte_length != expect_len {
            return Err(Error::CorruptDirectory(format!(
                "layer {l} length {byte_length} != cell_count * cell_size {expect_len}"
            )));
        }
        // extents are contiguous and strictly increasing, directory first
        if byte_offset != cursor {
            return Err(Error::CorruptDirectory(format!(
                "layer {l} extent starts at {byte_offset}, expected {cursor}"
            )));
        }
        cursor = cursor
            .checked_add(byte_length)
            .ok_or_else(|| Error::CorruptDirectory("extent overflow".into()))?;
        entries.push(RawEntry {
            ty,
            cell_size,
            precision,
            cell_count,
            byte_offset,
            byte_length,
        });
    }

    let data_offset = cursor;
    let data_length = record_count * RECORD_SIZE as u64;
    if data_offset + data_length != total {
        return Err(Error::CorruptDirectory(format!(
            "data layer [{data_offset}, {}) does not end at the file end {total}",
            data_offset + data_length
        )));
    }

    let mut layers = Vec::with_capacity(entries.len());
    for l in 0..entries.len() {
        let (child_unit, child_total, child_entries) = if l + 1 < entries.len() {
            (
                entries[l + 1].cell_size,
                entries[l + 1].byte_length,
                entries[l + 1].cell_count,
            )
        } else {
            (RECORD_SIZE, data_length, record_count)
        };
        if entries[l].cell_count >= child_entries {
            return Err(Error::CorruptDirectory(format!(
                "layer {l} does not shrink ({} cells over {child_entries} child entries)",
                entries[l].cell_count
            )));
        }
        let e = &entries[l];
        layers.push(LayerMeta {
            regressor_type: e.ty,
            precision: e.precision,
            cell_size: e.cell_size,
            cell_count: e.cell_count,
            byte_offset: e.byte_offset,
            byte_length: e.byte_length,
            fetch_bound: fetch_bound(e.ty, e.precision, child_unit, child_total),
            child_unit_size: child_unit,
        });
    }

    Ok(IndexHandle::from_parts(
        store,
        layers,
        data_offset,
        data_length,
        record_count,
    ))
}

/// Where record values come from during ingestion.
#[derive(Debug, Clone)]
pub enum ValueMode {
    /// value = ordinal position of the key.
    Sequence,
    /// Parallel file of little-endian u64 values, one per key.
    File(PathBuf),
}

fn read_u64_file(path: &Path) -> Result<Vec<u64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::MalformedKeyFile {
            len: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads a raw little-endian u64 key file (sorted ascending, distinct) and
/// pairs each key with a value per `mode`.
pub fn ingest_keys(path: &Path, mode: ValueMode) -> Result<Vec<Record>> {
    let keys = read_u64_file(path)?;
    for i in 1..keys.len() {
        if keys[i] < keys[i - 1] {
            return Err(Error::UnsortedInput { position: i as u64 });
        }
        if keys[i] == keys[i - 1] {
            return Err(Error::DuplicateKey { key: keys[i] });
        }
    }
    let values: Vec<u64> = match mode {
        ValueMode::Sequence => (0..keys.len() as u64).collect(),
        ValueMode::File(vpath) => {
            let values = read_u64_file(&vpath)?;
            if values.len() != keys.len() {
                return Err(Error::LengthMismatch {
                    keys: keys.len() as u64,
                    values: values.len() as u64,
                });
            }
            values
        }
    };
    Ok(keys
        .into_iter()
        .zip(values)
        .map(|(key, value)| Record { key, value })
        .collect())
}
