//! Wraps a model living in another process. The program reads one JSON
//! array (an encoded row) per line and answers with one probability per line.
//!
//! `cargo run --example external_model` (needs `python3` on PATH)

use fairknn::model::{ExternalPredictor, Predictor};
use ndarray::array;

const SCRIPT: &str = r#"
import sys, json, math
for line in sys.stdin:
    row = json.loads(line)
    print(1 / (1 + math.exp(-(2 * row[0] - row[1]))))
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ExternalPredictor::new(vec!["python3".into(), "-c".into(), SCRIPT.into()], 2)?;
    let rows = array![[0.0, 0.0], [1.0, 0.5], [0.2, 1.0]];
    let probs = model.predict_proba_batch(rows.view())?;
    for (row, p) in rows.outer_iter().zip(probs) {
        println!("{row} -> p {p:.4} ({})", if p >= model.threshold() { "positive" } else { "negative" });
    }
    Ok(())
}
