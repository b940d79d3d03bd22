//! Writes a LoRA file, parses it back and flattens it per sub-network.

use lora_style::dataset::{model_from_vector, synthetic_layout};
use lora_style::lora_io::{parse_safetensors, vectorize, Dtype, SubnetworkSelector};

fn main() -> lora_style::Result<()> {
    let (d, rank) = (4_000, 4);
    let layout = synthetic_layout(d, rank)?;
    let values: Vec<f64> = (0..d).map(|i| ((i % 97) as f64 - 48.0) * 1e-3).collect();
    let model = model_from_vector(&layout, rank, &values)?;

    let dir = std::env::temp_dir().join("lora-style-vectorize");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("example.safetensors");
    model.save(&path, Dtype::F32)?;

    let parsed = parse_safetensors(&path)?;
    println!("{} layers, rank {}", parsed.layers().len(), parsed.rank());
    for selector in [
        SubnetworkSelector::Full,
        SubnetworkSelector::FeedForward,
        SubnetworkSelector::SelfAttention,
        SubnetworkSelector::CrossAttention,
    ] {
        let v = vectorize(&parsed, selector)?;
        println!("{:>10}: d = {:>5}  layout {}", selector.as_str(), v.dim(), &v.layout_hash.0[..12]);
    }
    Ok(())
}
