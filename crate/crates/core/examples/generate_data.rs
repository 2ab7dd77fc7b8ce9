//! Draws a shifted source/target pair and writes it in the dataset text format.
//!
//! ```text
//! cargo run --example generate_data -- [out_dir]
//! ```

use std::path::PathBuf;

use rada::datagen::{generate_pair, load_dataset, save_dataset, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "generated".into()),
    );
    std::fs::create_dir_all(&out)?;
    let cfg = GenConfig {
        target_classes: Some(vec![0, 1, 2, 3]),
        ..GenConfig::default()
    };
    let pair = generate_pair(&cfg)?;
    println!("source class counts {:?}", pair.source.class_counts()?);
    println!(
        "target class counts {:?} (partial: 4 of 6 classes)",
        pair.target.class_counts()?
    );

    let edges = (0..cfg.classes)
        .flat_map(|i| (i + 1..cfg.classes).map(move |j| (i, j)))
        .filter(|&(i, j)| pair.ground_truth_precision[(i, j)] != 0.0)
        .count();
    println!("ground-truth precision has {edges} class links");

    let path = out.join("source.txt");
    save_dataset(&pair.source, &path)?;
    save_dataset(&pair.target.without_labels(), &out.join("target.txt"))?;
    let back = load_dataset(&path)?;
    println!(
        "wrote {} ({} rows), reload identical: {}",
        path.display(),
        back.len(),
        back == pair.source
    );
    Ok(())
}
