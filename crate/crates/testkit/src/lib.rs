//! Synthetic datasets, stub submissions and platform fixtures shared by
//! the rboard test suites.

pub mod stubs;

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rboard_core::archive::write_deterministic_zip;
use rboard_core::{ColumnSchema, NewDataset, Platform, PlatformConfig, SplitConfig, Task};

/// Split seeds used by fixtures. Long and distinctive so that a byte scan
/// for their decimal form cannot hit by accident.
pub const SECRET_SEEDS: [u64; 4] = [
    9_876_543_210_123_456_789,
    8_765_432_109_876_543_210,
    7_654_321_098_765_432_101,
    6_543_210_987_654_321_012,
];

/// CTR rows `item,context,click`. Each item has its own click
/// probability, so per-item click rates carry signal.
pub fn ctr_raw(data_seed: u64, rows: usize) -> Vec<u8> {
    const ITEMS: usize = 40;
    const CONTEXTS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let item_rate: Vec<f64> = (0..ITEMS).map(|_| 0.02 + 0.7 * rng.random::<f64>().powf(1.5)).collect();
    let context_shift: Vec<f64> = (0..CONTEXTS).map(|_| rng.random_range(-0.05..0.05)).collect();
    let mut out = String::from("item,context,click\n");
    for _ in 0..rows {
        let item = rng.random_range(0..ITEMS);
        let context = rng.random_range(0..CONTEXTS);
        let p = (item_rate[item] + context_shift[context]).clamp(0.01, 0.99);
        let click = u8::from(rng.random::<f64>() < p);
        writeln!(out, "i{item:02},c{context},{click}").unwrap();
    }
    out.into_bytes()
}

/// Top-N interactions `user_id,item_id,timestamp` with a skewed item
/// popularity. About one user in ten has only two interactions.
pub fn topn_raw(data_seed: u64, users: usize, items: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let weights: Vec<f64> = (0..items).map(|j| 1.0 / ((j + 1) as f64).powf(0.9)).collect();
    let mut out = String::from("user_id,item_id,timestamp\n");
    for u in 0..users {
        let n = if rng.random_range(0..10) == 0 { 2 } else { rng.random_range(3..=12) };
        let mut taken = vec![false; items];
        let mut ts: u64 = 1_600_000_000 + rng.random_range(0..100_000);
        for _ in 0..n.min(items) {
            let total: f64 = weights.iter().zip(&taken).filter(|(_, t)| !**t).map(|(w, _)| w).sum();
            let mut draw = rng.random::<f64>() * total;
            let mut pick = 0;
            for (j, w) in weights.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                pick = j;
                draw -= w;
                if draw <= 0.0 {
                    break;
                }
            }
            taken[pick] = true;
            ts += rng.random_range(1..5_000);
            writeln!(out, "u{u:04},m{pick:03},{ts}").unwrap();
        }
    }
    out.into_bytes()
}

pub fn ctr_dataset(id: &str, data_seed: u64, split_seed: u64, rows: usize) -> (NewDataset, Vec<u8>) {
    let new = NewDataset {
        dataset_id: id.to_string(),
        task: Task::Ctr,
        name: format!("Synthetic CTR {id}"),
        schema: ColumnSchema::Ctr {
            features: vec!["item".into(), "context".into()],
            label: "click".into(),
        },
        split_config: SplitConfig::default_for(Task::Ctr, split_seed),
    };
    (new, ctr_raw(data_seed, rows))
}

pub fn topn_dataset(id: &str, data_seed: u64, split_seed: u64, users: usize, items: usize) -> (NewDataset, Vec<u8>) {
    let new = NewDataset {
        dataset_id: id.to_string(),
        task: Task::TopN,
        name: format!("Synthetic Top-N {id}"),
        schema: ColumnSchema::TopN {
            user: "user_id".into(),
            item: "item_id".into(),
            timestamp: "timestamp".into(),
        },
        split_config: SplitConfig::default_for(Task::TopN, split_seed),
    };
    (new, topn_raw(data_seed, users, items))
}

/// Two CTR and two Top-N datasets generated from `data_seed`.
pub fn standard_datasets(data_seed: u64) -> Vec<(NewDataset, Vec<u8>)> {
    let s = data_seed.wrapping_mul(4);
    vec![
        ctr_dataset("ctr-a", s, SECRET_SEEDS[0], 1500),
        ctr_dataset("ctr-b", s + 1, SECRET_SEEDS[1], 1500),
        topn_dataset("topn-a", s + 2, SECRET_SEEDS[2], 120, 60),
        topn_dataset("topn-b", s + 3, SECRET_SEEDS[3], 120, 60),
    ]
}

/// Zip holding `main_py` as `main.py`.
pub fn archive(main_py: &str) -> Vec<u8> {
    write_deterministic_zip(&[("main.py", main_py.as_bytes().to_vec())]).expect("zip of one file")
}

pub fn python3_available() -> bool {
    Command::new("python3")
        .arg("-c")
        .arg("pass")
        .status()
        .is_ok_and(|s| s.success())
}

/// Platform rooted at `dir` with one worker and the given wall timeout.
pub fn platform(dir: &Path, timeout: Duration) -> Platform {
    let mut config = PlatformConfig::new(dir);
    config.limits.wall_timeout = timeout;
    config.workers = 1;
    Platform::open(config).expect("open platform")
}

/// Registers [`standard_datasets`] on `platform`.
pub fn register_standard(platform: &Platform, data_seed: u64) {
    for (new, raw) in standard_datasets(data_seed) {
        platform.register_dataset(new, &raw).expect("register synthetic dataset");
    }
}
