//! Trains the detector on the 20-class synthetic fixture and compares it with
//! all-keep kNN linking and kmeans.
//!
//! `cargo run --release --example desk_fixture [-- key=value ...]`, where the
//! keys are those of `TrainConfig` plus `sigma`.

use qclusformer::clusterset::knn_clusters;
use qclusformer::datagen::{synth_blobs, SynthSpec};
use qclusformer::metrics::MetricReport;
use qclusformer::trainer::{
    evaluate, evaluate_predictions, kmeans_baseline, parse_kv, train, TrainConfig, TrainOptions,
};

fn main() -> qclusformer::Result<()> {
    let args = std::env::args().skip(1).collect::<Vec<_>>().join("\n");
    let overrides = parse_kv(&args)?;
    let sigma = match overrides.get("sigma") {
        Some(v) => v
            .parse()
            .map_err(|_| qclusformer::Error::Config(format!("bad sigma {v:?}")))?,
        None => 0.78,
    };
    let f = synth_blobs(&SynthSpec {
        n_classes: 20,
        samples_per_class: 50,
        dim: 16,
        sigma,
        min_separation: 1.0,
        seed: 7,
    })?;
    let clusters = knn_clusters(&f, 8)?;
    let positive = clusters
        .iter()
        .flat_map(|c| c.mask.as_deref().unwrap_or_default())
        .filter(|&&m| m)
        .count();
    println!(
        "raw kNN masks: {:.1}% positive",
        100.0 * positive as f64 / (8 * clusters.len()) as f64
    );

    let mut cfg = TrainConfig {
        tau: 0.9,
        ..TrainConfig::default()
    };
    cfg.apply_kv(&overrides)?;

    let keep_all = clusters.iter().map(|c| vec![1.0; c.k()]).collect();
    let raw = evaluate_predictions(&f, &clusters, keep_all, cfg.tau)?;
    println!("\nraw kNN\n{}", raw.report.expect("labeled"));
    let km = kmeans_baseline(&f, 20, cfg.seed)?;
    println!(
        "\nkmeans\n{}",
        MetricReport::compute(f.labels().expect("labeled"), &km)?
    );

    let out = train(&cfg, &f, &clusters, TrainOptions::default())?;
    for (epoch, loss) in out.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:2} loss {loss:.6}");
    }
    let eval = evaluate(&out.checkpoint, &f, &clusters, cfg.tau)?;
    println!(
        "\ntrained ({})\n{}",
        cfg.sharing,
        eval.report.expect("labeled")
    );
    Ok(())
}
