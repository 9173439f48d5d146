use criterion::{black_box, criterion_group, criterion_main, Criterion};

use airx::engine::{Record, RECORD_SIZE};
use airx::format::{open_index, serialize_index};
use airx::optimizer::{search_optimal, SearchSpace};
use airx::regressor::{fit_linear, EntryTable};
use airx::storage::{MemStore, StorageProfile};

fn keys_100k() -> Vec<u64> {
    let mut state = 0xBEEF_u64;
    let mut keys: Vec<u64> = (0..110_000)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.truncate(100_000);
    keys
}

fn bench_fit_linear(c: &mut Criterion) {
    let table = EntryTable::new(keys_100k(), RECORD_SIZE).unwrap();
    c.bench_function("fit_linear_100k_lambda256", |b| {
        b.iter(|| fit_linear(black_box(&table), 256).unwrap())
    });
}

fn bench_search(c: &mut Criterion) {
    let table = EntryTable::new(keys_100k(), RECORD_SIZE).unwrap();
    let profile = StorageProfile::new(1e-4, 134e6).unwrap();
    let space = SearchSpace::default();
    c.bench_function("search_optimal_100k_default_space", |b| {
        b.iter(|| search_optimal(black_box(&table), &profile, &space).unwrap())
    });
}

fn bench_lookup(c: &mut Criterion) {
    let keys = keys_100k();
    let records: Vec<Record> = keys
        .iter()
        .enumerate()
        .map(|(i, &key)| Record {
            key,
            value: i as u64,
        })
        .collect();
    let table = EntryTable::new(keys.clone(), RECORD_SIZE).unwrap();
    let profile = StorageProfile::new(1e-4, 134e6).unwrap();
    let plan = search_optimal(&table, &profile, &SearchSpace::default()).unwrap();
    let mut bytes = Vec::new();
    serialize_index(&plan, &records, &mut bytes).unwrap();
    let handle = open_index(MemStore::new(bytes)).unwrap();
    let mut i = 0usize;
    c.bench_function("lookup_100k_memstore", |b| {
        b.iter(|| {
            i = (i + 7919) % keys.len();
            handle.lookup(black_box(keys[i]), None).unwrap()
        })
    });
}

criterion_group!(benches, bench_fit_linear, bench_search, bench_lookup);
criterion_main!(benches);
