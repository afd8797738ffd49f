use std::io::Write;
use std::path::Path;

use serde_json::json;
use shiftlab_core::datasets::save_csv;

use crate::config::RunConfig;
use crate::error::Result;
use crate::fsutil::write_atomic;
use crate::setup::build_splits;

/// Writes `train.csv`, `valid.csv`, `test.csv` and `manifest.json`.
pub fn run_gen_data(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let splits = build_splits(cfg, seed)?;
    for (name, data) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        let tmp = out.join(format!("{name}.csv.tmp"));
        save_csv(data, &tmp)?;
        std::fs::rename(&tmp, out.join(format!("{name}.csv")))?;
    }
    let manifest = json!({
        "command": "gen-data",
        "seed": seed,
        "config": cfg.resolved(),
        "sizes": {"train": splits.train.len(), "valid": splits.valid.len(), "test": splits.test.len()},
        "group_names": splits.train.group_names,
        "group_counts": {
            "train": splits.train.group_counts(),
            "valid": splits.valid.group_counts(),
            "test": splits.test.group_counts(),
        },
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(out.join("manifest.json"), |w| writeln!(w, "{text}"))
}
