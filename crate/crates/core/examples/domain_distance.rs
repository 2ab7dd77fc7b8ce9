//! Proxy A-distance between domains, on raw inputs and on learned features.

use rada::datagen::{generate_pair, GenConfig};
use rada::eval::proxy_a_distance;
use rada::experiment::Method;
use rada::trainer::{fit, TrainConfig};

fn main() -> rada::error::Result<()> {
    let pair = generate_pair(&GenConfig::default())?;
    let raw = proxy_a_distance(&pair.source.features, &pair.target.features, 5)?;
    println!(
        "raw inputs           eps {:.4}  d_A {:.4}",
        raw.epsilon, raw.d_a
    );

    let base = TrainConfig::default();
    for method in [Method::SourceOnly, Method::Rada] {
        let cfg = method.apply(&base);
        let model = cfg.init_model(pair.source.feature_dim(), pair.source.classes)?;
        let (model, _) = fit(model, &pair.source, &pair.target, &cfg)?;
        let pad = proxy_a_distance(
            &model.features(&pair.source.features)?,
            &model.features(&pair.target.features)?,
            5,
        )?;
        println!(
            "{:<20} eps {:.4}  d_A {:.4}",
            format!("{method} features"),
            pad.epsilon,
            pad.d_a
        );
    }
    Ok(())
}
