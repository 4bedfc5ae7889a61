//! wasm-bindgen bindings for the static page in `www/`.
//!
//! Build with `wasm-pack build --target web crates/demo` and serve
//! `crates/demo/www` next to the generated `pkg/` directory.

use ndarray::Array2;
use qclusformer::clusterset::knn_clusters;
use qclusformer::datagen::{synth_blobs, SynthSpec};
use qclusformer::metrics::MetricReport;
use qclusformer::pqc::Entangler;
use qclusformer::qsim::{bloch_vector, PauliAxis, QuantumState};
use qclusformer::qtransformer::{quantum_self_attention, AttentionConfig, SharingMode};
use qclusformer::trainer::evaluate_predictions;
use qclusformer::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: qclusformer::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Bloch vector of `RZ(rz)·RY(ry)·RX(rx)|0⟩`.
pub fn bloch_after(rx: f64, ry: f64, rz: f64) -> CoreResult<[f64; 3]> {
    let mut s = QuantumState::zero(1)?;
    s.apply_rotation(PauliAxis::X, 0, rx)?;
    s.apply_rotation(PauliAxis::Y, 0, ry)?;
    s.apply_rotation(PauliAxis::Z, 0, rz)?;
    bloch_vector(&s)
}

#[wasm_bindgen]
pub fn bloch_after_rotations(rx: f64, ry: f64, rz: f64) -> Result<Vec<f64>, JsError> {
    bloch_after(rx, ry, rz).map(|r| r.to_vec()).map_err(js)
}

/// Row-major `k × k` attention weights of a random 2-qubit QSA block over
/// `k` random 4-dimensional tokens.
pub fn attention_weights(seed: u64, k: usize, sharing: SharingMode) -> CoreResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Array2::from_shape_fn((k, 4), |_| rng.random_range(-1.0..1.0));
    let cfg = AttentionConfig {
        sharing,
        n_qubits: 2,
        depth: 2,
        input_dim: 4,
        entangle: Entangler::Ring,
    };
    let circuit = qclusformer::pqc::build_ansatz(2, 2, Entangler::Ring);
    let thetas: Vec<Vec<f64>> = sharing
        .readouts()
        .iter()
        .map(|_| {
            (0..circuit.n_params)
                .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
    let out = quantum_self_attention(&s, &cfg, &refs)?;
    Ok(out.weights.iter().copied().collect())
}

/// `mode` is one of `1QKV`, `1QK-1V`, `1Q-1K-1V`.
#[wasm_bindgen]
pub fn attention_map(seed: u32, k: usize, mode: &str) -> Result<Vec<f64>, JsError> {
    let sharing: SharingMode = mode.parse().map_err(js)?;
    attention_weights(seed as u64, k.clamp(2, 16), sharing).map_err(js)
}

/// Points, labels and scores of one linking run.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct LinkResult {
    points: Vec<f64>,
    truth: Vec<u32>,
    labels: Vec<u32>,
    f_pairwise: f64,
    f_bcubed: f64,
}

#[wasm_bindgen]
impl LinkResult {
    /// Interleaved `x, y` coordinates on the unit circle.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn truth(&self) -> Vec<u32> {
        self.truth.clone()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    pub fn f_pairwise(&self) -> f64 {
        self.f_pairwise
    }

    pub fn f_bcubed(&self) -> f64 {
        self.f_bcubed
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| *m as usize + 1)
    }
}

/// Links 2-D blobs, scoring each neighbor by its cosine similarity to the
/// center and keeping those at or above `tau`.
pub fn link_blobs(
    seed: u64,
    classes: usize,
    sigma: f64,
    k: usize,
    tau: f64,
) -> CoreResult<LinkResult> {
    let f = synth_blobs(&SynthSpec {
        n_classes: classes,
        samples_per_class: 30,
        dim: 2,
        sigma,
        min_separation: 2.0 * std::f64::consts::PI / (2.0 * classes as f64),
        seed,
    })?;
    let clusters = knn_clusters(&f, k)?;
    let scores = clusters.iter().map(|c| c.sims.clone()).collect();
    let eval = evaluate_predictions(&f, &clusters, scores, tau)?;
    let truth = f.labels().expect("synthetic data is labeled").to_vec();
    let report = MetricReport::compute(&truth, &eval.labels)?;
    Ok(LinkResult {
        points: f.features().iter().copied().collect(),
        truth,
        labels: eval.labels,
        f_pairwise: report.pairwise.f,
        f_bcubed: report.bcubed.f,
    })
}

#[wasm_bindgen]
pub fn link_demo(
    seed: u32,
    classes: usize,
    sigma: f64,
    k: usize,
    tau: f64,
) -> Result<LinkResult, JsError> {
    link_blobs(seed as u64, classes.clamp(2, 8), sigma, k.clamp(1, 30), tau).map_err(js)
}
