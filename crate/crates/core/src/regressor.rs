//! Regressor layers: fitting, range prediction, and in-window cell lookup.
//!
//! A regressor layer sits above an "entry table", the addressable units of
//! the layer below (cells of the next regressor layer, or fixed-width
//! records of the data layer). Each cell maps a key to a byte range in that
//! child layer; the range provably contains the child entry governing the
//! key (the containment invariant). The per-layer worst case over all
//! emitted range lengths is the layer's fetch bound.

use crate::error::{Error, Result};

/// Serialized size of a step cell: anchor key + start offset.
pub const STEP_CELL_SIZE: u32 = 16;
/// Serialized size of a linear cell: anchor key + intercept + slope.
pub const LINEAR_CELL_SIZE: u32 = 24;

/// The regressor families a layer can be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegressorType {
    Step,
    Linear,
}

impl RegressorType {
    pub fn cell_size(self) -> u32 {
        match self {
            RegressorType::Step => STEP_CELL_SIZE,
            RegressorType::Linear => LINEAR_CELL_SIZE,
        }
    }

    /// On-disk tag.
    pub fn tag(self) -> u32 {
        match self {
            RegressorType::Step => 1,
            RegressorType::Linear => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(RegressorType::Step),
            2 => Some(RegressorType::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegressorType::Step => "step",
            RegressorType::Linear => "linear",
        }
    }
}

/// One regressor. Within a layer all cells are the same variant and are
/// sorted by strictly increasing anchor key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressorCell {
    Step {
        anchor_key: u64,
        start_offset: u64,
    },
    Linear {
        anchor_key: u64,
        intercept: f64,
        slope: f64,
    },
}

impl RegressorCell {
    pub fn anchor_key(&self) -> u64 {
        match self {
            RegressorCell::Step { anchor_key, .. } => *anchor_key,
            RegressorCell::Linear { anchor_key, .. } => *anchor_key,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            RegressorCell::Step {
                anchor_key,
                start_offset,
            } => {
                out.extend_from_slice(&anchor_key.to_le_bytes());
                out.extend_from_slice(&start_offset.to_le_bytes());
            }
            RegressorCell::Linear {
                anchor_key,
                intercept,
                slope,
            } => {
                out.extend_from_slice(&anchor_key.to_le_bytes());
                out.extend_from_slice(&intercept.to_le_bytes());
                out.extend_from_slice(&slope.to_le_bytes());
            }
        }
    }

    /// Decodes one cell from exactly `ty.cell_size()` bytes.
    pub fn decode(ty: RegressorType, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != ty.cell_size() as usize {
            return Err(Error::CorruptLayer(format!(
                "cell of type {} needs {} bytes, got {}",
                ty.name(),
                ty.cell_size(),
                bytes.len()
            )));
        }
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        match ty {
            RegressorType::Step => Ok(RegressorCell::Step {
                anchor_key: u64_at(0),
                start_offset: u64_at(8),
            }),
            RegressorType::Linear => Ok(RegressorCell::Linear {
                anchor_key: u64_at(0),
                intercept: f64::from_le_bytes(bytes[8..16].try_into().unwrap()),
                slope: f64::from_le_bytes(bytes[16..24].try_into().unwrap()),
            }),
        }
    }
}

/// The addressable units of a layer, as seen by the layer being fit above
/// it: strictly increasing anchor keys at fixed-width byte offsets
/// (entry `i` lives at `i * unit_size`).
#[derive(Debug, Clone)]
pub struct EntryTable {
    keys: Vec<u64>,
    unit_size: u32,
}

impl EntryTable {
    pub fn new(keys: Vec<u64>, unit_size: u32) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if unit_size == 0 {
            return Err(Error::InvalidPlan("unit_size must be positive".into()));
        }
        for i in 1..keys.len() {
            if keys[i] <= keys[i - 1] {
                if keys[i] == keys[i - 1] {
                    return Err(Error::DuplicateKey { key: keys[i] });
                }
                return Err(Error::UnsortedInput {
                    position: i as u64,
                });
            }
        }
        Ok(EntryTable { keys, unit_size })
    }

    /// The entry table formed by a fitted layer's own cells.
    pub fn from_layer(layer: &RegressorLayer) -> Self {
        EntryTable {
            keys: layer.cells.iter().map(|c| c.anchor_key()).collect(),
            unit_size: layer.cell_size,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn unit_size(&self) -> u32 {
        self.unit_size
    }

    pub fn total_bytes(&self) -> u64 {
        self.keys.len() as u64 * self.unit_size as u64
    }

    pub fn key_at(&self, i: usize) -> u64 {
        self.keys[i]
    }

    pub fn offset_at(&self, i: usize) -> u64 {
        i as u64 * self.unit_size as u64
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }
}

/// A fitted regressor layer over some child entry table.
#[derive(Debug, Clone)]
pub struct RegressorLayer {
    pub regressor_type: RegressorType,
    /// Precision knob: entries per cell for step, max absolute byte error
    /// for linear.
    pub precision: u64,
    pub cells: Vec<RegressorCell>,
    pub cell_size: u32,
    pub child_unit_size: u32,
    pub child_total_bytes: u64,
    /// Worst-case bytes any prediction of this layer forces the engine to
    /// read from the child layer.
    pub fetch_bound: u64,
}

impl RegressorLayer {
    pub fn cell_count(&self) -> u64 {
        self.cells.len() as u64
    }

    /// Serialized size of this layer.
    pub fn layer_bytes(&self) -> u64 {
        self.cell_count() * self.cell_size as u64
    }

    pub fn encode_cells(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.layer_bytes() as usize);
        for c in &self.cells {
            c.encode_into(&mut out);
        }
        out
    }
}

fn round_up_to(x: u64, unit: u64) -> u64 {
    x.div_ceil(unit) * unit
}

/// Per-layer fetch bound for a (type, precision) pair over a child layer.
///
/// Step: one group of `precision` units. Linear: the 2λ error band plus one
/// unit of prediction width, rounded out to whole units for the window
/// alignment on both ends. Both are clamped to the child layer size, which
/// no single fetch can exceed.
pub fn fetch_bound(
    ty: RegressorType,
    precision: u64,
    child_unit_size: u32,
    child_total_bytes: u64,
) -> u64 {
    let u = child_unit_size as u64;
    let raw = match ty {
        RegressorType::Step => precision.saturating_mul(u),
        RegressorType::Linear => round_up_to(
            precision.saturating_mul(2).saturating_add(2 * u),
            u,
        ),
    };
    raw.min(child_total_bytes)
}

/// Groups `fanout_lambda` consecutive child entries per cell (the last
/// group may be short). The cell anchors at its first entry.
pub fn fit_step(table: &EntryTable, fanout_lambda: u64) -> Result<RegressorLayer> {
    let n = table.len() as u64;
    let cells_needed = if fanout_lambda == 0 {
        n
    } else {
        n.div_ceil(fanout_lambda)
    };
    if cells_needed >= n {
        return Err(Error::DegenerateFit {
            cells: cells_needed,
            entries: n,
        });
    }
    let mut cells = Vec::with_capacity(cells_needed as usize);
    let mut i = 0usize;
    while i < table.len() {
        cells.push(RegressorCell::Step {
            anchor_key: table.key_at(i),
            start_offset: table.offset_at(i),
        });
        i += fanout_lambda as usize;
    }
    debug_assert_eq!(cells.len() as u64, cells_needed);
    Ok(RegressorLayer {
        regressor_type: RegressorType::Step,
        precision: fanout_lambda,
        cells,
        cell_size: STEP_CELL_SIZE,
        child_unit_size: table.unit_size(),
        child_total_bytes: table.total_bytes(),
        fetch_bound: fetch_bound(
            RegressorType::Step,
            fanout_lambda,
            table.unit_size(),
            table.total_bytes(),
        ),
    })
}

/// Greedy one-pass segmentation with a shrinking feasible-slope interval.
///
/// Each segment anchors at its first entry with the intercept pinned to
/// that entry's true offset, so any slope inside the interval keeps every
/// segment entry within `error_lambda` bytes of its prediction. The final
/// slope is the interval midpoint. A full containment re-check runs after
/// the fit and fails hard on violation.
pub fn fit_linear(table: &EntryTable, error_lambda: u64) -> Result<RegressorLayer> {
    let n = table.len();
    let lam = error_lambda as f64;
    let mut cells: Vec<RegressorCell> = Vec::new();

    let mut seg_start = 0usize;
    let mut slope_lo = f64::NEG_INFINITY;
    let mut slope_hi = f64::INFINITY;

    let close_segment = |cells: &mut Vec<RegressorCell>, start: usize, lo: f64, hi: f64| {
        let slope = if lo.is_finite() && hi.is_finite() {
            (lo + hi) / 2.0
        } else {
            0.0 // single-entry segment: any slope works, prediction is exact
        };
        cells.push(RegressorCell::Linear {
            anchor_key: table.key_at(start),
            intercept: table.offset_at(start) as f64,
            slope,
        });
    };

    for i in 1..n {
        let dx = (table.key_at(i) as i128 - table.key_at(seg_start) as i128) as f64;
        let dy = (table.offset_at(i) - table.offset_at(seg_start)) as f64;
        let lo_i = (dy - lam) / dx;
        let hi_i = (dy + lam) / dx;
        let new_lo = slope_lo.max(lo_i);
        let new_hi = slope_hi.min(hi_i);
        if new_lo <= new_hi {
            slope_lo = new_lo;
            slope_hi = new_hi;
        } else {
            close_segment(&mut cells, seg_start, slope_lo, slope_hi);
            seg_start = i;
            slope_lo = f64::NEG_INFINITY;
            slope_hi = f64::INFINITY;
        }
    }
    close_segment(&mut cells, seg_start, slope_lo, slope_hi);

    if cells.len() >= n {
        return Err(Error::DegenerateFit {
            cells: cells.len() as u64,
            entries: n as u64,
        });
    }
    let layer = RegressorLayer {
        regressor_type: RegressorType::Linear,
        precision: error_lambda,
        cells,
        cell_size: LINEAR_CELL_SIZE,
        child_unit_size: table.unit_size(),
        child_total_bytes: table.total_bytes(),
        fetch_bound: fetch_bound(
            RegressorType::Linear,
            error_lambda,
            table.unit_size(),
            table.total_bytes(),
        ),
    };
    verify_containment(&layer, table)?;
    Ok(layer)
}

/// Re-checks that every child entry's byte extent lies inside the range its
/// governing cell predicts.
pub fn verify_containment(layer: &RegressorLayer, table: &EntryTable) -> Result<()> {
    let unit = table.unit_size() as u64;
    for i in 0..table.len() {
        let key = table.key_at(i);
        let cell = governing_cell(&layer.cells, key);
        let (start, len) = predict_range(layer, cell, key);
        let off = table.offset_at(i);
        if off < start || off + unit > start + len {
            return Err(Error::FitVerificationFailed {
                entry_index: i as u64,
            });
        }
        if len > layer.fetch_bound {
            return Err(Error::FitVerificationFailed {
                entry_index: i as u64,
            });
        }
    }
    Ok(())
}

/// The cell governing `key`: last anchor <= key, or the first cell when all
/// anchors exceed key.
pub fn governing_cell(cells: &[RegressorCell], key: u64) -> &RegressorCell {
    debug_assert!(!cells.is_empty());
    match cells.binary_search_by_key(&key, |c| c.anchor_key()) {
        Ok(i) => &cells[i],
        Err(0) => &cells[0],
        Err(i) => &cells[i - 1],
    }
}

/// Predicted byte range in the child layer for `key` under `cell`.
///
/// The caller must pass the governing cell for the key; the emitted range
/// is clipped to the child layer, aligned outward to whole child units, and
/// never longer than the layer's fetch bound.
pub fn predict_range(layer: &RegressorLayer, cell: &RegressorCell, key: u64) -> (u64, u64) {
    predict_range_raw(
        layer.precision,
        layer.child_unit_size,
        layer.child_total_bytes,
        cell,
        key,
    )
}

/// `predict_range` on bare layer parameters; shared with the engine, which
/// reconstructs layers from the file directory rather than holding
/// `RegressorLayer` values.
pub fn predict_range_raw(
    precision: u64,
    child_unit_size: u32,
    child_total_bytes: u64,
    cell: &RegressorCell,
    key: u64,
) -> (u64, u64) {
    let u = child_unit_size as u64;
    let total = child_total_bytes;
    debug_assert!(total >= u && total.is_multiple_of(u));
    match cell {
        RegressorCell::Step { start_offset, .. } => {
            let start = (*start_offset).min(total - u);
            let len = precision.saturating_mul(u).min(total - start);
            (start, len)
        }
        RegressorCell::Linear {
            anchor_key,
            intercept,
            slope,
        } => {
            let dx = (key as i128 - *anchor_key as i128) as f64;
            let p = intercept + slope * dx;
            let lam = precision as f64;
            let lo = (p - lam).max(0.0);
            let hi = (p + lam + u as f64).min(total as f64);
            let uf = u as f64;
            let mut start = ((lo / uf).floor().max(0.0) as u64).saturating_mul(u);
            if start > total - u {
                start = total - u;
            }
            let mut end = ((hi / uf).ceil().max(0.0) as u64).saturating_mul(u);
            if end > total {
                end = total;
            }
            if end < start + u {
                end = start + u; // degenerate clip: fall back to one unit
            }
            (start, end - start)
        }
    }
}

/// Decodes the cells held by a fetched window of a regressor layer and
/// returns the one governing `key`.
///
/// The window must start on a cell boundary within its layer and contain
/// whole cells with strictly increasing anchors; anything else is a corrupt
/// layer.
pub fn locate_cell(
    window: &[u8],
    window_start_offset: u64,
    ty: RegressorType,
    key: u64,
) -> Result<RegressorCell> {
    let cs = ty.cell_size() as usize;
    if !window_start_offset.is_multiple_of(cs as u64) {
        return Err(Error::CorruptLayer(format!(
            "window start {window_start_offset} not aligned to cell size {cs}"
        )));
    }
    if window.is_empty() || !window.len().is_multiple_of(cs) {
        return Err(Error::CorruptLayer(format!(
            "window length {} not a positive multiple of cell size {cs}",
            window.len()
        )));
    }
    let count = window.len() / cs;
    let mut cells = Vec::with_capacity(count);
    let mut prev_anchor: Option<u64> = None;
    for i in 0..count {
        let cell = RegressorCell::decode(ty, &window[i * cs..(i + 1) * cs])?;
        if let Some(prev) = prev_anchor {
            if cell.anchor_key() <= prev {
                return Err(Error::CorruptLayer(format!(
                    "anchors not strictly increasing at window cell {i}"
                )));
            }
        }
        prev_anchor = Some(cell.anchor_key());
        cells.push(cell);
    }
    Ok(*governing_cell(&cells, key))
}
