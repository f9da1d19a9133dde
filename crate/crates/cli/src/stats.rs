//! `stats`: dataset accounting over forged sample files, printed as a table
//! and written as JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use uiforge_core::io::{read_jsonl, write_json_atomic};
use uiforge_core::manifest::DatasetStats;

use crate::{CliError, StatsArgs};

#[derive(Deserialize)]
struct SampleRow {
    app_id: String,
    image_path: String,
    caption: String,
}

const SETS: [(&str, &str); 4] = [
    ("element", "element_captions.jsonl"),
    ("element_list", "element_lists.jsonl"),
    ("screen", "screen_captions.jsonl"),
    ("foresight", "foresight.jsonl"),
];

pub fn run(args: &StatsArgs) -> Result<(), CliError> {
    let mut all: BTreeMap<String, DatasetStats> = BTreeMap::new();
    println!(
        "{:<14} {:>12} {:>12} {:>18}",
        "sample set", "# images", "# samples", "# unique captions"
    );
    for (name, file) in SETS {
        let path = args.out.join(file);
        if !path.exists() {
            println!("{name:<14} {:>12} {:>12} {:>18}", "-", "-", "-");
            continue;
        }
        let stats = stats_of(&path)?;
        println!(
            "{name:<14} {:>12} {:>12} {:>18}",
            stats.unique_images, stats.samples, stats.unique_captions
        );
        all.insert(name.to_string(), stats);
    }
    let json_path = args.out.join("stats.json");
    write_json_atomic(&json_path, &all).map_err(|e| CliError::Schema(e.to_string()))?;
    println!("wrote {}", json_path.display());
    Ok(())
}

fn stats_of(path: &Path) -> Result<DatasetStats, CliError> {
    let rows: Vec<SampleRow> = read_jsonl(path).map_err(|e| CliError::Schema(e.to_string()))?;
    Ok(DatasetStats::compute(rows.iter().map(|r| {
        (r.app_id.as_str(), r.image_path.as_str(), r.caption.as_str())
    })))
}
