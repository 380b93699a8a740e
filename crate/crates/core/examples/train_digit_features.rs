//! Regenerates `assets/toy_mnist.safetensors`, the weights of the
//! `toy-mnist` feature extractor.
//!
//! cargo run -p maskcycle-core --example train_digit_features [steps]

use maskcycle_core::evaluation::features::train_digit_features;

fn main() {
    let steps = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("steps must be an integer"))
        .unwrap_or(1500);
    let out = train_digit_features(steps, 32, 7).expect("training failed");
    println!("held-out accuracy {:.3}", out.accuracy);
    let tensors: Vec<(String, candle_core::Tensor)> = out
        .params
        .iter()
        .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
        .collect();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy_mnist.safetensors");
    safetensors::serialize_to_file(tensors.iter().map(|(k, t)| (k.as_str(), t)), None, path.as_ref())
        .expect("cannot write weights");
    println!("wrote {path}");
}
