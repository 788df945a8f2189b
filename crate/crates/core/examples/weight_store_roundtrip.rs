//! Models and activation probes are stored as a JSON manifest next to a raw
//! little-endian blob. Loading verifies shapes, offsets and a CRC32 of the
//! blob.
//!
//!     cargo run --example weight_store_roundtrip

use dualmerge::model::{build_model, capture_probe, ModelSpec};
use dualmerge::store::{load_model, load_probe, save_model, save_probe, store_paths};
use dualmerge::{Error, Tensor};

fn main() -> dualmerge::Result<()> {
    let dir = std::env::temp_dir().join(format!("dualmerge-store-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let spec: ModelSpec = "6-16g4-8-3".parse()?;
    let model = build_model(&spec, 11)?;
    let path = dir.join("model");
    save_model(&model, &path)?;
    assert_eq!(load_model(&path)?, model);

    let (manifest, blob) = store_paths(&path);
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    println!("{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));
    println!("...");

    let x = Tensor::matrix(4, 6, (0..24).map(|i| i as f32 / 24.0).collect())?;
    let probe = capture_probe(&model, &x)?;
    save_probe(&probe, &dir.join("probe"))?;
    assert_eq!(load_probe(&dir.join("probe"))?, probe);
    println!("model and probe round-trip bit for bit");

    let mut bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    bytes[0] ^= 0x40;
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    match load_model(&path) {
        Err(e) => println!("flipped one bit: {} ({})", e.kind(), e),
        Ok(_) => println!("corruption went unnoticed"),
    }
    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(())
}
