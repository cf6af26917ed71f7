//! The on-disk formats: 8-bit PGM images and masks, the raw f64 tensor
//! format, and the `{images,masks}` directory loader.
//!
//! cargo run --release --example data_formats [-- <scratch dir>]

use std::path::PathBuf;

use gradmorph::data::netpbm::{self, quantize};
use gradmorph::data::tensor_io::{decode_tensor, encode_tensor};
use gradmorph::data::{generate_synthetic, load_directory, write_samples, Split, SplitDirs, SynthConfig};
use gradmorph::Result;

fn main() -> Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data-formats-example".into()));
    let data = generate_synthetic(&SynthConfig {
        count: 10,
        image_size: 24,
        ..SynthConfig::default()
    })?;
    let sample = &data.train[0];

    // PGM keeps 8 bits per pixel. Generated images already sit on the k/255
    // grid; anything else moves to the nearest grid value.
    let bytes = netpbm::write_image(&sample.image)?;
    let exact = netpbm::read_image(&bytes)? == sample.image;
    let off_grid = sample.image.map(|v| 0.9 * v + 0.037);
    let worst = off_grid.sub(&netpbm::read_image(&netpbm::write_image(&off_grid)?)?)?.linf_norm();
    println!("PGM: {} bytes; generated image exact: {exact}", bytes.len());
    println!("off-grid image: worst round-trip error {worst:.5} (bound {:.5})", 0.5 / 255.0);
    println!("quantize(1.0) = {}, which decodes to {}", quantize(1.0), netpbm::read_image(b"P5 1 1 255\n\xff")?.data()[0]);

    // Masks store class indices spread over the 8-bit range.
    let mask_bytes = netpbm::write_label_map(&sample.mask, 2);
    assert_eq!(netpbm::read_label_map(&mask_bytes, 2)?, sample.mask);
    println!("mask PGM round trip is exact ({:.1}% foreground)", 100.0 * sample.mask.fraction(1));

    // The raw tensor format stores f64 bit patterns, so nothing is lost.
    let delta = sample.image.map(|v| (v * 7.3).sin() * 1e-3);
    let raw = encode_tensor(&delta);
    let same = decode_tensor(&raw)?;
    let bit_exact = delta.data().iter().zip(same.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("raw tensor: {} bytes for shape {:?}, bit-exact: {bit_exact}", raw.len(), same.shape());

    // A dataset directory is just PGM files with matching stems.
    let dirs = SplitDirs::new(&root, Split::Train);
    let written = write_samples(&dirs, &data.train, 2)?;
    let loaded = load_directory(&dirs.images(), &dirs.masks(), 2)?;
    println!("wrote {} files under {}, loaded {} samples:", written.len(), root.display(), loaded.len());
    for s in loaded.iter().take(3) {
        println!("  {}  image {:?}  mask {}x{}", s.id, s.image.shape(), s.mask.height(), s.mask.width());
    }
    Ok(())
}
