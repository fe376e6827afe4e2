//! Parse a C-MAPSS subset (or a synthetic fleet in the same layout), label
//! remaining useful life, z-score with training statistics and window.
//!
//! ```text
//! cargo run --release --example ingest_cmapss [DIR [FD001]]
//! ```

use std::path::PathBuf;

use dodem::data::{label_rul, label_test_rul, last_windows_for_set, windows_for_set, Normalizer, DEFAULT_RUL_CAP};
use dodem::experiment::{load_raw, DatasetEntry};
use dodem::synthetic::FleetConfig;

fn main() -> dodem::Result<()> {
    let mut args = std::env::args().skip(1);
    let entry = match args.next().map(PathBuf::from) {
        Some(dir) => DatasetEntry::files(&args.next().unwrap_or_else(|| "FD001".into()), &dir),
        None => DatasetEntry::synthetic("SYN", FleetConfig::default()),
    };
    let raw = load_raw(&entry)?;
    let (lo, hi) = raw.train.cycle_extent().unwrap_or((0, 0));
    println!("{}: {} train units, {} test units", entry.id, raw.train.unit_count(), raw.test.unit_count());
    println!("training lifetimes {lo}..={hi} cycles, {} rows", raw.train.row_count());

    let train = label_rul(&raw.train, DEFAULT_RUL_CAP);
    let test = label_test_rul(&raw.test, &raw.truth, DEFAULT_RUL_CAP)?;
    let norm = Normalizer::fit(&train)?;
    let informative = norm.informative_channels();
    let constant: Vec<usize> = (0..24).filter(|c| !informative.contains(c)).collect();
    println!("informative channels {informative:?}");
    println!("constant channels (zeroed) {constant:?}");

    let windows = windows_for_set(&norm.apply(&train), 80, 1)?;
    let last = last_windows_for_set(&norm.apply(&test), 80)?;
    println!("{} training windows of 80x24, {} test windows (last cycle of each unit)", windows.len(), last.len());
    let capped = windows.iter().filter(|s| s.rul >= DEFAULT_RUL_CAP).count();
    println!("{capped} training windows sit on the {DEFAULT_RUL_CAP}-cycle plateau");
    Ok(())
}
