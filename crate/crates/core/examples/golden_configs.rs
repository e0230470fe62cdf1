//! Writes the built-in court scenarios as config files that `buls run`
//! accepts.
//!
//! cargo run --example golden_configs -- [DIR]

use std::path::PathBuf;

use buls::scenario::{golden_los, golden_nlos};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    std::fs::create_dir_all(&dir)?;
    for spec in [golden_los(), golden_nlos()] {
        let path = dir.join(format!("{}.json", spec.name));
        let mut text = serde_json::to_string_pretty(&spec).expect("spec serializes");
        text.push('\n');
        std::fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
