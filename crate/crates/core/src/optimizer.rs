//! End-to-end lookup objective and the structure search.
//!
//! A candidate structure is a chain of regressor layers over the data
//! layer. Its modeled lookup time is one full fetch of the root layer plus
//! one fetch-bound-sized fetch per remaining layer (the data layer
//! included): `T(root bytes) + sum_l T(eps_l)`. The search walks the
//! parameter space bottom-up (fit a layer over the current top table,
//! recurse on its cells) and prunes candidates whose admissible lower
//! bound cannot beat the incumbent. An exhaustive enumerator serves as the
//! verification oracle.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::regressor::{
    fetch_bound, fit_linear, fit_step, EntryTable, RegressorLayer, RegressorType, LINEAR_CELL_SIZE,
    STEP_CELL_SIZE,
};
use crate::storage::StorageProfile;

/// Hard cap on the number of candidate chains the oracle will enumerate.
pub const ORACLE_CHAIN_LIMIT: u128 = 1_000_000;

/// Pruning is made slightly conservative: a candidate is discarded only
/// when its lower bound exceeds the threshold by more than this relative
/// slack. Keeps pruning decisions from ever depending on the last ulp of a
/// rounded sum, so pruned and unpruned searches select identical plans.
const PRUNE_SLACK: f64 = 1e-9;

/// Tables below this size are searched sequentially even in parallel mode.
const PAR_MIN_TABLE: usize = 4096;

/// The candidate domain: which regressor families to consider, their
/// precision grids, and the layer-count cap.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub regressor_types: Vec<RegressorType>,
    /// Entries-per-cell grid for step layers.
    pub step_lambdas: Vec<u64>,
    /// Max-byte-error grid for linear layers.
    pub linear_lambdas: Vec<u64>,
    pub max_layers: u32,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            regressor_types: vec![RegressorType::Step, RegressorType::Linear],
            step_lambdas: (2..=16).map(|i| 1u64 << i).collect(),
            linear_lambdas: (4..=20).map(|i| 1u64 << i).collect(),
            max_layers: 8,
        }
    }
}

impl SearchSpace {
    /// Canonical copy: types ordered Step < Linear, grids ascending, all
    /// deduplicated. Rejects empty type sets, empty grids for enabled
    /// types, and zero precisions.
    pub fn normalized(&self) -> Result<SearchSpace> {
        let mut types = self.regressor_types.clone();
        types.sort();
        types.dedup();
        if types.is_empty() {
            return Err(Error::InvalidSpace("no regressor types enabled".into()));
        }
        let mut step = self.step_lambdas.clone();
        step.sort_unstable();
        step.dedup();
        let mut linear = self.linear_lambdas.clone();
        linear.sort_unstable();
        linear.dedup();
        for (ty, grid) in [
            (RegressorType::Step, &step),
            (RegressorType::Linear, &linear),
        ] {
            if types.contains(&ty) {
                if grid.is_empty() {
                    return Err(Error::InvalidSpace(format!(
                        "type {} enabled with an empty precision grid",
                        ty.name()
                    )));
                }
                if grid[0] == 0 {
                    return Err(Error::InvalidSpace(format!(
                        "type {} has a zero precision",
                        ty.name()
                    )));
                }
            }
        }
        Ok(SearchSpace {
            regressor_types: types,
            step_lambdas: step,
            linear_lambdas: linear,
            max_layers: self.max_layers,
        })
    }

    /// Candidate (type, precision) pairs in grid order. Must be called on a
    /// normalized space.
    fn candidates(&self) -> Vec<(RegressorType, u64)> {
        let mut out = Vec::new();
        for &ty in &self.regressor_types {
            let grid = match ty {
                RegressorType::Step => &self.step_lambdas,
                RegressorType::Linear => &self.linear_lambdas,
            };
            for &lam in grid {
                out.push((ty, lam));
            }
        }
        out
    }

    /// Upper bound on candidate chains for the oracle guard.
    fn chain_count(&self) -> u128 {
        let k = self.candidates().len() as u128;
        let mut total: u128 = 0;
        for l in 0..=self.max_layers {
            let term = k.checked_pow(l).unwrap_or(u128::MAX);
            total = total.saturating_add(term);
            if total >= u128::MAX / 2 {
                return u128::MAX;
            }
        }
        total
    }
}

/// A fully built structure: layers top-down (`layers[0]` is the root), its
/// per-layer configs, and the exactly recomputable modeled lookup cost.
///
/// Zero layers is legal and means "fetch the whole data layer".
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub layers: Vec<RegressorLayer>,
    pub configs: Vec<(RegressorType, u64)>,
    pub modeled_cost_s: f64,
    /// Bytes of the root fetch (the whole root layer, or the whole data
    /// layer when there are no regressor layers).
    pub root_bytes: u64,
    /// Top-down fetch bounds; the last one addresses the data layer.
    pub fetch_bounds: Vec<u64>,
}

impl LayerPlan {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Serialized size of the regressor layers alone.
    pub fn index_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.layer_bytes()).sum()
    }

    /// Assembles a plan from layers built bottom-up (`stack[0]` was fit
    /// over the data table), computing the canonical cost fold.
    pub fn from_stack(
        stack_bottom_up: Vec<RegressorLayer>,
        data_total_bytes: u64,
        profile: &StorageProfile,
    ) -> LayerPlan {
        let layers: Vec<RegressorLayer> = stack_bottom_up.into_iter().rev().collect();
        let fetch_bounds: Vec<u64> = layers.iter().map(|l| l.fetch_bound).collect();
        let root_bytes = layers
            .first()
            .map(|l| l.layer_bytes())
            .unwrap_or(data_total_bytes);
        let modeled_cost_s = plan_cost(root_bytes, &fetch_bounds, profile);
        LayerPlan {
            configs: layers
                .iter()
                .map(|l| (l.regressor_type, l.precision))
                .collect(),
            modeled_cost_s,
            root_bytes,
            fetch_bounds,
            layers,
        }
    }
}

/// The canonical objective fold: `T(root)` then `+ T(eps_l)` top-down.
/// Every cost in this crate is produced by this exact summation order so
/// equal plans always yield bit-identical costs.
pub fn plan_cost(root_bytes: u64, fetch_bounds: &[u64], profile: &StorageProfile) -> f64 {
    let mut cost = profile.transfer_cost(root_bytes);
    for &eps in fetch_bounds {
        cost += profile.transfer_cost(eps);
    }
    cost
}

/// Modeled end-to-end lookup seconds of a plan on a device.
pub fn evaluate_objective(plan: &LayerPlan, profile: &StorageProfile) -> f64 {
    plan_cost(plan.root_bytes, &plan.fetch_bounds, profile)
}

/// Fits one layer of the given family over a child table.
pub fn build_layer(ty: RegressorType, lambda: u64, child: &EntryTable) -> Result<RegressorLayer> {
    match ty {
        RegressorType::Step => fit_step(child, lambda),
        RegressorType::Linear => fit_linear(child, lambda),
    }
}

/// Deterministic plan order: modeled cost, then fewer layers, then fewer
/// serialized index bytes, then type tags top-down (step before linear),
/// then precisions top-down.
pub fn compare_plans(a: &LayerPlan, b: &LayerPlan) -> Ordering {
    compare_keyed(
        a.modeled_cost_s,
        &a.layers,
        a.index_bytes(),
        b.modeled_cost_s,
        &b.layers,
        b.index_bytes(),
    )
}

fn compare_keyed(
    cost_a: f64,
    layers_a: &[RegressorLayer],
    bytes_a: u64,
    cost_b: f64,
    layers_b: &[RegressorLayer],
    bytes_b: u64,
) -> Ordering {
    cost_a
        .partial_cmp(&cost_b)
        .expect("plan costs are finite")
        .then(layers_a.len().cmp(&layers_b.len()))
        .then(bytes_a.cmp(&bytes_b))
        .then_with(|| {
            for (x, y) in layers_a.iter().zip(layers_b.iter()) {
                match x.regressor_type.tag().cmp(&y.regressor_type.tag()) {
                    Ordering::Equal => {}
                    o => return o,
                }
            }
            for (x, y) in layers_a.iter().zip(layers_b.iter()) {
                match x.precision.cmp(&y.precision) {
                    Ordering::Equal => {}
                    o => return o,
                }
            }
            Ordering::Equal
        })
}

/// Knobs for [`search_with_options`]; defaults match [`search_optimal`].
#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Disable to force exhaustive recursion (used to verify that pruning
    /// never changes the outcome).
    pub prune: bool,
    /// Evaluate sibling candidates on the rayon pool. Selection stays
    /// deterministic regardless.
    pub parallel: bool,
    /// Record every pruned candidate for admissibility instrumentation.
    /// Forces sequential evaluation.
    pub record_prunes: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            prune: true,
            parallel: true,
            record_prunes: false,
        }
    }
}

/// One pruned candidate, with enough context to rebuild the subtree.
#[derive(Debug, Clone)]
pub struct PruneEvent {
    /// Configs applied bottom-up from the data table to reach the node.
    pub chain_below: Vec<(RegressorType, u64)>,
    pub candidate: (RegressorType, u64),
    pub lower_bound: f64,
    pub threshold: f64,
}

#[derive(Debug, Default)]
pub struct SearchStats {
    pub nodes_expanded: u64,
    pub fits_performed: u64,
    pub pruned: Vec<PruneEvent>,
}

/// Partial plan: the structure above the current table, costs folded from
/// the root down to (and including) the fetch into the current table's
/// layer.
#[derive(Debug, Clone)]
struct SubPlan {
    layers: Vec<RegressorLayer>,
    cost: f64,
    root_bytes: u64,
    fetch_bounds: Vec<u64>,
    index_bytes: u64,
}

impl SubPlan {
    fn into_plan(self) -> LayerPlan {
        LayerPlan {
            configs: self
                .layers
                .iter()
                .map(|l| (l.regressor_type, l.precision))
                .collect(),
            modeled_cost_s: self.cost,
            root_bytes: self.root_bytes,
            fetch_bounds: self.fetch_bounds,
            layers: self.layers,
        }
    }
}

fn slacked(threshold: f64) -> f64 {
    if threshold.is_finite() {
        threshold + threshold.abs() * PRUNE_SLACK
    } else {
        threshold
    }
}

struct Searcher<'a> {
    profile: &'a StorageProfile,
    candidates: Vec<(RegressorType, u64)>,
    opts: SearchOptions,
    memo: Mutex<HashMap<(u64, u32, u32), f64>>,
    nodes: AtomicU64,
    fits: AtomicU64,
    prunes: Mutex<Vec<PruneEvent>>,
}

impl<'a> Searcher<'a> {
    fn new(profile: &'a StorageProfile, candidates: Vec<(RegressorType, u64)>, opts: SearchOptions) -> Self {
        Searcher {
            profile,
            candidates,
            opts,
            memo: Mutex::new(HashMap::new()),
            nodes: AtomicU64::new(0),
            fits: AtomicU64::new(0),
            prunes: Mutex::new(Vec::new()),
        }
    }

    /// Admissible lower bound on the cost of any structure over a table of
    /// `n` entries of `unit` bytes, with at most `depth_left` layers.
    ///
    /// Relaxation of the real recursion on sizes alone: step layers shrink
    /// exactly (`ceil(n / lambda)` cells), linear layers optimistically
    /// shrink to a single cell, so no real completion can cost less.
    fn relaxed_bound(&self, n: u64, unit: u32, depth_left: u32) -> f64 {
        let total = n.saturating_mul(unit as u64);
        let base = self.profile.transfer_cost(total);
        if depth_left == 0 || n <= 1 {
            return base;
        }
        let key = (n, unit, depth_left);
        if let Some(&v) = self.memo.lock().unwrap().get(&key) {
            return v;
        }
        let mut best = base;
        for &(ty, lam) in &self.candidates {
            let eps = fetch_bound(ty, lam, unit, total);
            let t_eps = self.profile.transfer_cost(eps);
            if t_eps >= best {
                // this candidate cannot improve the minimum
                continue;
            }
            let child = match ty {
                RegressorType::Step => {
                    if lam == 0 {
                        continue;
                    }
                    let cells = n.div_ceil(lam);
                    if cells >= n {
                        continue;
                    }
                    self.relaxed_bound(cells, STEP_CELL_SIZE, depth_left - 1)
                }
                RegressorType::Linear => self.relaxed_bound(1, LINEAR_CELL_SIZE, depth_left - 1),
            };
            let v = t_eps + child;
            if v < best {
                best = v;
            }
        }
        self.memo.lock().unwrap().insert(key, best);
        best
    }

    fn base_plan(&self, table: &EntryTable) -> SubPlan {
        SubPlan {
            layers: Vec::new(),
            cost: self.profile.transfer_cost(table.total_bytes()),
            root_bytes: table.total_bytes(),
            fetch_bounds: Vec::new(),
            index_bytes: 0,
        }
    }

    fn record_prune(
        &self,
        chain: &[(RegressorType, u64)],
        candidate: (RegressorType, u64),
        lower_bound: f64,
        threshold: f64,
    ) {
        if self.opts.record_prunes {
            self.prunes.lock().unwrap().push(PruneEvent {
                chain_below: chain.to_vec(),
                candidate,
                lower_bound,
                threshold,
            });
        }
    }

    fn search_node(
        &self,
        table: &EntryTable,
        depth_left: u32,
        budget: f64,
        chain: &mut Vec<(RegressorType, u64)>,
        parallel: bool,
    ) -> Result<SubPlan> {
        self.nodes.fetch_add(1, AtomicOrdering::Relaxed);
        let mut best = self.base_plan(table);
        if depth_left == 0 || table.len() <= 1 {
            return Ok(best);
        }
        if parallel && table.len() >= PAR_MIN_TABLE {
            // Siblings do not see each other's incumbents here; pruning is
            // weaker but the reduced result is identical.
            let results: Vec<Result<Option<SubPlan>>> = self
                .candidates
                .par_iter()
                .map(|&cand| {
                    let mut local_chain = Vec::new();
                    self.eval_candidate(table, depth_left, budget, cand, &mut local_chain, true)
                })
                .collect();
            for r in results {
                if let Some(c) = r? {
                    if compare_keyed(
                        c.cost,
                        &c.layers,
                        c.index_bytes,
                        best.cost,
                        &best.layers,
                        best.index_bytes,
                    ) == Ordering::Less
                    {
                        best = c;
                    }
                }
            }
        } else {
            for &cand in &self.candidates {
                let threshold = budget.min(best.cost);
                if let Some(c) =
                    self.eval_candidate(table, depth_left, threshold, cand, chain, parallel)?
                {
                    if compare_keyed(
                        c.cost,
                        &c.layers,
                        c.index_bytes,
                        best.cost,
                        &best.layers,
                        best.index_bytes,
                    ) == Ordering::Less
                    {
                        best = c;
                    }
                }
            }
        }
        Ok(best)
    }

    fn eval_candidate(
        &self,
        table: &EntryTable,
        depth_left: u32,
        threshold: f64,
        (ty, lam): (RegressorType, u64),
        chain: &mut Vec<(RegressorType, u64)>,
        parallel: bool,
    ) -> Result<Option<SubPlan>> {
        let n = table.len() as u64;
        let eps = fetch_bound(ty, lam, table.unit_size(), table.total_bytes());
        let t_eps = self.profile.transfer_cost(eps);

        // cells known exactly for step before fitting; optimistic 1 for linear
        let cells_pre = match ty {
            RegressorType::Step => {
                if lam == 0 {
                    return Ok(None);
                }
                let cells = n.div_ceil(lam);
                if cells >= n {
                    return Ok(None); // degenerate, no fit needed
                }
                cells
            }
            RegressorType::Linear => 1,
        };
        if self.opts.prune {
            let lb = t_eps + self.relaxed_bound(cells_pre, ty.cell_size(), depth_left - 1);
            if lb > slacked(threshold) {
                self.record_prune(chain, (ty, lam), lb, threshold);
                return Ok(None);
            }
        }

        self.fits.fetch_add(1, AtomicOrdering::Relaxed);
        let layer = match build_layer(ty, lam, table) {
            Ok(l) => l,
            Err(Error::DegenerateFit { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if self.opts.prune && ty == RegressorType::Linear {
            // re-bound with the actual cell count
            let lb = t_eps + self.relaxed_bound(layer.cell_count(), layer.cell_size, depth_left - 1);
            if lb > slacked(threshold) {
                self.record_prune(chain, (ty, lam), lb, threshold);
                return Ok(None);
            }
        }

        let child = EntryTable::from_layer(&layer);
        chain.push((ty, lam));
        let sub = self.search_node(&child, depth_left - 1, threshold - t_eps, chain, parallel);
        chain.pop();
        let sub = sub?;

        let mut layers = sub.layers;
        let index_bytes = sub.index_bytes + layer.layer_bytes();
        layers.push(layer);
        let mut fetch_bounds = sub.fetch_bounds;
        fetch_bounds.push(eps);
        Ok(Some(SubPlan {
            layers,
            cost: sub.cost + t_eps,
            root_bytes: sub.root_bytes,
            fetch_bounds,
            index_bytes,
        }))
    }
}

/// Finds the plan minimizing the modeled lookup time over the whole space,
/// with branch-and-bound pruning and deterministic tie-breaking.
pub fn search_optimal(
    data_entries: &EntryTable,
    profile: &StorageProfile,
    space: &SearchSpace,
) -> Result<LayerPlan> {
    search_with_options(data_entries, profile, space, &SearchOptions::default()).map(|(p, _)| p)
}

/// [`search_optimal`] with explicit options, returning search statistics.
pub fn search_with_options(
    data_entries: &EntryTable,
    profile: &StorageProfile,
    space: &SearchSpace,
    opts: &SearchOptions,
) -> Result<(LayerPlan, SearchStats)> {
    let space = space.normalized()?;
    let candidates = space.candidates();
    let mut opts = opts.clone();
    if opts.record_prunes {
        opts.parallel = false;
    }
    let parallel = opts.parallel;
    let searcher = Searcher::new(profile, candidates, opts);
    let mut chain = Vec::new();
    let sub = searcher.search_node(
        data_entries,
        space.max_layers,
        f64::INFINITY,
        &mut chain,
        parallel,
    )?;
    let stats = SearchStats {
        nodes_expanded: searcher.nodes.load(AtomicOrdering::Relaxed),
        fits_performed: searcher.fits.load(AtomicOrdering::Relaxed),
        pruned: searcher.prunes.into_inner().unwrap(),
    };
    Ok((sub.into_plan(), stats))
}

/// Brute-force enumeration of every candidate chain, evaluating the
/// objective for each completed chain and reducing with the same
/// tie-break as the search. Verification oracle; guarded by
/// [`ORACLE_CHAIN_LIMIT`].
pub fn exhaustive_oracle(
    data_entries: &EntryTable,
    profile: &StorageProfile,
    space: &SearchSpace,
) -> Result<LayerPlan> {
    let space = space.normalized()?;
    let chains = space.chain_count();
    if chains > ORACLE_CHAIN_LIMIT {
        return Err(Error::SpaceTooLarge {
            chains,
            limit: ORACLE_CHAIN_LIMIT,
        });
    }
    let candidates = space.candidates();
    let data_total = data_entries.total_bytes();

    fn recurse(
        table: &EntryTable,
        depth_left: u32,
        stack: &mut Vec<RegressorLayer>,
        candidates: &[(RegressorType, u64)],
        data_total: u64,
        profile: &StorageProfile,
        best: &mut Option<LayerPlan>,
    ) -> Result<()> {
        let plan = LayerPlan::from_stack(stack.to_vec(), data_total, profile);
        let replace = match best {
            None => true,
            Some(b) => compare_plans(&plan, b) == Ordering::Less,
        };
        if replace {
            *best = Some(plan);
        }
        if depth_left == 0 || table.len() <= 1 {
            return Ok(());
        }
        for &(ty, lam) in candidates {
            let layer = match build_layer(ty, lam, table) {
                Ok(l) => l,
                Err(Error::DegenerateFit { .. }) => continue,
                Err(e) => return Err(e),
            };
            let child = EntryTable::from_layer(&layer);
            stack.push(layer);
            recurse(&child, depth_left - 1, stack, candidates, data_total, profile, best)?;
            stack.pop();
        }
        Ok(())
    }

    let mut best = None;
    let mut stack = Vec::new();
    recurse(
        data_entries,
        space.max_layers,
        &mut stack,
        &candidates,
        data_total,
        profile,
        &mut best,
    )?;
    Ok(best.expect("base plan always exists"))
}
