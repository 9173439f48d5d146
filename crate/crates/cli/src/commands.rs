//! Command implementations. Each `cmd_*` wrapper prints its report and maps
//! errors to the exit-code contract: 0 ok, 1 usage or input error, 2
//! corrupt or missing index, 3 key not found.

use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use airx::engine::{IndexHandle, Record, RECORD_SIZE};
use airx::error::Error;
use airx::format::{file_size_for_plan, ingest_keys, open_index, write_index_file, ValueMode};
use airx::optimizer::{plan_cost, search_optimal, LayerPlan, SearchSpace};
use airx::regressor::{EntryTable, RegressorType};
use airx::storage::{FileStore, RangeReader, SimulatedStore, StorageProfile};
use airx::Result;

use crate::args::{
    BaselineArg, BenchArgs, BuildArgs, GenKeysArgs, ProfileArgs, QueryArgs, SpaceArgs, SweepArgs,
    TypeArg,
};
use crate::datagen;

fn space_from_flags(flags: &SpaceArgs) -> SearchSpace {
    let mut space = SearchSpace::default();
    if let Some(types) = &flags.types {
        space.regressor_types = types
            .iter()
            .map(|t| match t {
                TypeArg::Step => RegressorType::Step,
                TypeArg::Linear => RegressorType::Linear,
            })
            .collect();
    }
    if let Some(ml) = flags.max_layers {
        space.max_layers = ml;
    }
    if let Some(grid) = &flags.step_lambdas {
        space.step_lambdas = grid.clone();
    }
    if let Some(grid) = &flags.linear_lambdas {
        space.linear_lambdas = grid.clone();
    }
    space
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Parse("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Parse(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// exit code for errors hit after flag parsing
fn input_error(err: &Error) -> i32 {
    eprintln!("error: {err}");
    1
}

/// exit code for errors on an opened (or opening) index
fn index_error(err: &Error) -> i32 {
    eprintln!("error: {err}");
    match err {
        Error::KeyNotFound { .. } => 3,
        Error::BadMagic(_)
        | Error::UnsupportedVersion(_)
        | Error::CorruptDirectory(_)
        | Error::CorruptIndex(_)
        | Error::CorruptLayer(_)
        | Error::OutOfBounds { .. }
        | Error::Io(_) => 2,
        _ => 1,
    }
}

// ---------------------------------------------------------------------------
// build

pub struct BuildReport {
    pub record_count: u64,
    pub plan: LayerPlan,
    pub modeled_cost_s: f64,
    pub index_file_bytes: u64,
    pub build_seconds: f64,
}

pub fn run_build(args: &BuildArgs) -> Result<BuildReport> {
    let profile = StorageProfile::load(&args.profile)?;
    let records = ingest_keys(&args.data, ValueMode::Sequence)?;
    let keys: Vec<u64> = records.iter().map(|r| r.key).collect();
    let table = EntryTable::new(keys, RECORD_SIZE)?;
    let space = space_from_flags(&args.space);

    let started = Instant::now();
    let plan = with_pool(args.threads, || search_optimal(&table, &profile, &space))??;
    let build_seconds = started.elapsed().as_secs_f64();

    let index_file_bytes = write_index_file(&plan, &records, &args.out)?;
    Ok(BuildReport {
        record_count: records.len() as u64,
        modeled_cost_s: plan.modeled_cost_s,
        index_file_bytes,
        build_seconds,
        plan,
    })
}

pub fn print_plan(plan: &LayerPlan) {
    println!("layers: {}", plan.layer_count());
    for (i, layer) in plan.layers.iter().enumerate() {
        println!(
            "layer {}: type={} lambda={} cells={} bytes={} fetch_bound={}",
            i + 1,
            layer.regressor_type.name(),
            layer.precision,
            layer.cell_count(),
            layer.layer_bytes(),
            layer.fetch_bound,
        );
    }
}

pub fn cmd_build(args: &BuildArgs) -> i32 {
    match run_build(args) {
        Ok(report) => {
            println!("keys: {}", report.record_count);
            print_plan(&report.plan);
            println!("modeled_lookup_s: {}", report.modeled_cost_s);
            println!("index_file_bytes: {}", report.index_file_bytes);
            println!("build_seconds: {:.3}", report.build_seconds);
            println!("wrote: {}", args.out.display());
            0
        }
        Err(e) => input_error(&e),
    }
}

// ---------------------------------------------------------------------------
// query

pub struct QueryReport {
    pub value: u64,
    pub trace: airx::engine::FetchTrace,
    pub costed: bool,
}

pub fn run_query(args: &QueryArgs) -> Result<QueryReport> {
    let profile = match &args.profile {
        Some(path) => Some(StorageProfile::load(path)?),
        None => None,
    };
    let store = FileStore::open(&args.index)?;
    let handle = open_index(store)?;
    let (value, trace) = handle.lookup(args.key, profile.as_ref())?;
    Ok(QueryReport {
        value,
        trace,
        costed: profile.is_some(),
    })
}

pub fn cmd_query(args: &QueryArgs) -> i32 {
    // a bad profile file is an input error, not an index error
    if let Some(path) = &args.profile {
        if let Err(e) = StorageProfile::load(path) {
            return input_error(&e);
        }
    }
    match run_query(args) {
        Ok(report) => {
            println!("value: {}", report.value);
            if args.trace {
                for r in &report.trace.reads {
                    let cost = if report.costed {
                        format!("{}", r.modeled_cost_s)
                    } else {
                        "-".to_string()
                    };
                    println!(
                        "read: layer={} offset={} length={} modeled_s={}",
                        r.layer_index, r.offset, r.length, cost
                    );
                }
                if report.costed {
                    println!("total_modeled_s: {}", report.trace.total_modeled_s);
                }
            }
            0
        }
        Err(e) => index_error(&e),
    }
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rtt_s: f64,
    pub bandwidth_bps: f64,
    pub optimal_height: u32,
    pub modeled_latency_s: f64,
    pub index_bytes: u64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rtt_s,bandwidth_bps,optimal_height,modeled_latency_s,index_bytes\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rtt_s, r.bandwidth_bps, r.optimal_height, r.modeled_latency_s, r.index_bytes
        ));
    }
    out
}

pub fn run_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.rtts.is_empty() {
        return Err(Error::Parse("--rtts must list at least one value".into()));
    }
    let mut rtts = args.rtts.clone();
    rtts.sort_by(|a, b| a.partial_cmp(b).expect("finite rtts"));
    rtts.dedup();

    let records = ingest_keys(&args.data, ValueMode::Sequence)?;
    let keys: Vec<u64> = records.iter().map(|r| r.key).collect();
    let record_count = records.len() as u64;
    drop(records);
    let table = EntryTable::new(keys, RECORD_SIZE)?;
    let space = space_from_flags(&args.space);

    with_pool(args.threads, || {
        let mut rows = Vec::with_capacity(rtts.len());
        for &rtt in &rtts {
            let profile = StorageProfile::new(rtt, args.bandwidth)?;
            let plan = search_optimal(&table, &profile, &space)?;
            rows.push(SweepRow {
                rtt_s: rtt,
                bandwidth_bps: args.bandwidth,
                optimal_height: plan.layer_count() as u32,
                modeled_latency_s: plan.modeled_cost_s,
                index_bytes: file_size_for_plan(&plan, record_count),
            });
        }
        Ok(rows)
    })?
}

pub fn cmd_sweep(args: &SweepArgs) -> i32 {
    match run_sweep(args) {
        Ok(rows) => {
            let csv = sweep_csv(&rows);
            if let Err(e) = std::fs::write(&args.out, &csv) {
                return input_error(&e.into());
            }
            print!("{csv}");
            eprintln!("wrote: {}", args.out.display());
            0
        }
        Err(e) => input_error(&e),
    }
}

// ---------------------------------------------------------------------------
// simulate-motivating

/// The four analytic costs of the worked two-device comparison, computed
/// through the shared cost fold, never hardcoded.
pub struct MotivatingReport {
    pub tall_short_s: f64,
    pub wide_short_s: f64,
    pub tall_long_s: f64,
    pub wide_long_s: f64,
    /// Rounded percent by which the wide structure trails on the short-RTT
    /// device.
    pub wide_penalty_pct: i64,
    /// Rounded percent by which the tall structure trails on the long-RTT
    /// device.
    pub tall_penalty_pct: i64,
}

pub fn motivating_report() -> MotivatingReport {
    let short = StorageProfile::new(0.005, 1e8).expect("static profile");
    let long = StorageProfile::new(0.1, 1e8).expect("static profile");
    // tall: three 4 KB nodes then one 4 KB data page
    // wide: two 500 KB nodes then one 4 KB data page
    let tall = |p: &StorageProfile| plan_cost(4000, &[4000, 4000, 4000], p);
    let wide = |p: &StorageProfile| plan_cost(500_000, &[500_000, 4000], p);
    let tall_short_s = tall(&short);
    let wide_short_s = wide(&short);
    let tall_long_s = tall(&long);
    let wide_long_s = wide(&long);
    MotivatingReport {
        tall_short_s,
        wide_short_s,
        tall_long_s,
        wide_long_s,
        wide_penalty_pct: ((wide_short_s / tall_short_s - 1.0) * 100.0).round() as i64,
        tall_penalty_pct: ((tall_long_s / wide_long_s - 1.0) * 100.0).round() as i64,
    }
}

pub fn cmd_simulate_motivating() -> i32 {
    let r = motivating_report();
    println!("tall on short-rtt: {:.2} ms", r.tall_short_s * 1e3);
    println!("wide on short-rtt: {:.2} ms", r.wide_short_s * 1e3);
    println!("tall on long-rtt:  {:.2} ms", r.tall_long_s * 1e3);
    println!("wide on long-rtt:  {:.2} ms", r.wide_long_s * 1e3);
    println!(
        "short-rtt: wide is {}% slower than tall",
        r.wide_penalty_pct
    );
    println!("long-rtt:  tall is {}% slower than wide", r.tall_penalty_pct);
    0
}

// ---------------------------------------------------------------------------
// bench

pub struct BenchReport {
    pub queries: u64,
    pub reads_per_lookup: u64,
    pub total_reads: u64,
    pub mean_modeled_s: f64,
    pub p50_modeled_s: f64,
    pub p99_modeled_s: f64,
    pub modeled_upper_bound_s: f64,
    pub baseline: Option<FlatBaselineReport>,
}

pub struct FlatBaselineReport {
    pub mean_modeled_s: f64,
    pub mean_probes: f64,
    pub speedup: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Indexless lookup: binary search over the persisted records, one
/// record-sized read per probe.
pub fn flat_lookup<R: RangeReader>(
    store: &R,
    data_offset: u64,
    record_count: u64,
    key: u64,
    profile: &StorageProfile,
) -> Result<(Option<u64>, u64, f64)> {
    let mut lo = 0u64;
    let mut hi = record_count;
    let mut probes = 0u64;
    let mut modeled = 0.0f64;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let bytes = store.read_range(data_offset + mid * RECORD_SIZE as u64, RECORD_SIZE as u64)?;
        probes += 1;
        modeled += profile.transfer_cost(RECORD_SIZE as u64);
        let rec = Record::decode(&bytes)?;
        if rec.key == key {
            return Ok((Some(rec.value), probes, modeled));
        } else if rec.key < key {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok((None, probes, modeled))
}

fn sample_keys(handle: &IndexHandle<impl RangeReader>, raw_data: &[u8], n: u64, seed: u64) -> Vec<u64> {
    let record_count = handle.record_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let idx = (rng.next_u64() % record_count) as usize;
            let off = idx * RECORD_SIZE as usize;
            u64::from_le_bytes(raw_data[off..off + 8].try_into().unwrap())
        })
        .collect()
}

pub fn run_bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.queries == 0 {
        return Err(Error::Parse("--queries must be at least 1".into()));
    }
    let profile = StorageProfile::load(&args.profile)?;
    let store = SimulatedStore::new(FileStore::open(&args.index)?, profile);
    let handle = open_index(store)?;

    // key universe read outside the simulated accounting
    let raw_data = handle
        .store()
        .inner()
        .read_range(handle.data_offset(), handle.data_length())?;
    let keys = sample_keys(&handle, &raw_data, args.queries, args.seed);

    let mut times: Vec<f64> = Vec::with_capacity(keys.len());
    let mut total_reads = 0u64;
    for &key in &keys {
        let (_, trace) = handle.lookup(key, Some(&profile))?;
        times.push(trace.total_modeled_s);
        total_reads += trace.reads.len() as u64;
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));

    let baseline = match args.baseline {
        Some(BaselineArg::Flat) => {
            let mut flat_total = 0.0f64;
            let mut flat_probes = 0u64;
            for &key in &keys {
                let (value, probes, modeled) = flat_lookup(
                    handle.store().inner(),
                    handle.data_offset(),
                    handle.record_count(),
                    key,
                    &profile,
                )?;
                if value.is_none() {
                    return Err(Error::CorruptIndex(format!(
                        "flat baseline missed present key {key}"
                    )));
                }
                flat_total += modeled;
                flat_probes += probes;
            }
            let flat_mean = flat_total / keys.len() as f64;
            Some(FlatBaselineReport {
                mean_modeled_s: flat_mean,
                mean_probes: flat_probes as f64 / keys.len() as f64,
                speedup: flat_mean / mean,
            })
        }
        None => None,
    };

    Ok(BenchReport {
        queries: args.queries,
        reads_per_lookup: handle.layer_count() as u64 + 1,
        total_reads,
        mean_modeled_s: mean,
        p50_modeled_s: percentile(&sorted, 0.50),
        p99_modeled_s: percentile(&sorted, 0.99),
        modeled_upper_bound_s: handle.lookup_modeled_cost(&profile),
        baseline,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> i32 {
    // distinguish input-file problems from index problems
    if let Err(e) = StorageProfile::load(&args.profile) {
        return input_error(&e);
    }
    match run_bench(args) {
        Ok(r) => {
            println!("queries: {}", r.queries);
            println!("reads_per_lookup: {}", r.reads_per_lookup);
            println!("total_reads: {}", r.total_reads);
            println!("mean_modeled_s: {}", r.mean_modeled_s);
            println!("p50_modeled_s: {}", r.p50_modeled_s);
            println!("p99_modeled_s: {}", r.p99_modeled_s);
            println!("modeled_upper_bound_s: {}", r.modeled_upper_bound_s);
            if let Some(b) = &r.baseline {
                println!("baseline_flat_mean_modeled_s: {}", b.mean_modeled_s);
                println!("baseline_flat_mean_probes: {}", b.mean_probes);
                println!("speedup_vs_flat: {:.2}x", b.speedup);
            }
            0
        }
        Err(e) => index_error(&e),
    }
}

// ---------------------------------------------------------------------------
// profile

/// Two-point estimate of a device profile: time a small and a large read,
/// solve latency + size/bandwidth through both points. Takes the minimum
/// over `trials` runs per size to shed scheduling noise.
pub fn estimate_profile<R: RangeReader>(
    store: &R,
    small: u64,
    large: u64,
    trials: u32,
) -> Result<StorageProfile> {
    if trials == 0 {
        return Err(Error::Parse("--trials must be at least 1".into()));
    }
    if large <= small || store.total_len() < large {
        return Err(Error::Parse(format!(
            "target too small to measure: need at least {large} bytes"
        )));
    }
    let time_reads = |len: u64| -> Result<f64> {
        let mut best = f64::INFINITY;
        for _ in 0..trials {
            let started = Instant::now();
            store.read_range(0, len)?;
            best = best.min(started.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let t_small = time_reads(small)?;
    let t_large = time_reads(large)?;
    if t_large <= t_small {
        return Err(Error::InvalidProfile(
            "transfer sizes are indistinguishable on this target; cannot solve for bandwidth"
                .into(),
        ));
    }
    let bandwidth = (large - small) as f64 / (t_large - t_small);
    let latency = (t_small - small as f64 / bandwidth).max(0.0);
    StorageProfile::new(latency, bandwidth)
}

pub const PROFILE_SMALL_READ: u64 = 4096;
pub const PROFILE_LARGE_READ: u64 = 4 << 20;

pub fn run_profile(args: &ProfileArgs) -> Result<StorageProfile> {
    let store = FileStore::open(&args.target)?;
    let large = PROFILE_LARGE_READ.min(store.total_len());
    estimate_profile(&store, PROFILE_SMALL_READ, large, args.trials)
}

pub fn cmd_profile(args: &ProfileArgs) -> i32 {
    match run_profile(args) {
        Ok(profile) => {
            eprintln!(
                "warning: measured against {}; results depend on caching, load, and device state",
                args.target.display()
            );
            let json = profile.to_json();
            match &args.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, format!("{json}\n")) {
                        return input_error(&e.into());
                    }
                    eprintln!("wrote: {}", path.display());
                }
                None => println!("{json}"),
            }
            0
        }
        Err(e) => input_error(&e),
    }
}

// ---------------------------------------------------------------------------
// gen-keys

pub fn cmd_gen_keys(args: &GenKeysArgs) -> i32 {
    if args.count == 0 {
        return input_error(&Error::Parse("--count must be at least 1".into()));
    }
    let keys = datagen::generate_uniform_keys(args.count as usize, args.seed);
    match datagen::write_keys_file(&args.out, &keys) {
        Ok(()) => {
            println!("wrote {} keys to {}", keys.len(), args.out.display());
            0
        }
        Err(e) => input_error(&e.into()),
    }
}
