//! Ingest a raw interaction log into the canonical dataset format.
//!
//! Writes a small demo log, runs the filtering and leave-one-out pipeline,
//! and prints the resulting statistics and split manifest.
//!
//! Run with: cargo run --example preprocess_log

use std::fs;

use adasplit::dataio::{
    build_dataset, leave_one_out_split, load_canonical, load_interactions, save_canonical,
    LoadOptions, LogFormat,
};

fn main() -> adasplit::Result<()> {
    let dir = std::env::temp_dir().join("adasplit_example_preprocess");
    fs::create_dir_all(&dir)?;

    // a purchase log: user,item,timestamp — two tastes per user
    let mut log = String::new();
    for u in 0..8 {
        for t in 0..12 {
            let item = if (t / 4) % 2 == 0 { format!("tea_{}", t % 4) } else { format!("coffee_{}", t % 4) };
            log.push_str(&format!("user{u},{item},{t}\n"));
        }
    }
    let raw = dir.join("purchases.csv");
    fs::write(&raw, log)?;

    let loaded = load_interactions(&raw, LogFormat::CsvUit, &LoadOptions::default())?;
    println!("parsed {} records ({} malformed)", loaded.records.len(), loaded.malformed);

    let dataset = build_dataset(&loaded.records, 5, 50)?;
    println!("after filtering: {}", dataset.stats);

    let split = leave_one_out_split(&dataset);
    let out = dir.join("canonical");
    save_canonical(&dataset, &split, &out)?;
    println!("canonical files in {}", out.display());

    // round trip: identical stats and splits
    let (reloaded, _) = load_canonical(&out)?;
    assert_eq!(reloaded.stats, dataset.stats);
    println!("round trip ok: {}", reloaded.stats);

    for user in 0..2 {
        let entry = split.entry(user).unwrap();
        println!(
            "user {user}: {} training items, valid target {}, test target {}",
            entry.train.len(),
            dataset.item_ids[entry.valid_target],
            dataset.item_ids[entry.test_target]
        );
    }
    Ok(())
}
