//! Learn an image-to-image mapping with the SSIM + L1 loss.
//!
//! Pairs come from perturbing training images against a trained segmenter;
//! the translator then applies the learned shift to unseen test images.
//!
//! cargo run --release --example translation [-- <lambda>]

use gradmorph::data::{generate_synthetic, Pair, SynthConfig};
use gradmorph::losses::TranslationLossConfig;
use gradmorph::metrics::dice;
use gradmorph::optim::{AdadeltaConfig, AdadeltaState};
use gradmorph::perturb::{batch_perturb, PerturbConfig};
use gradmorph::segnet::{build_segnet, train_segmentation, SegNetConfig};
use gradmorph::train::Schedule;
use gradmorph::translator::{build_translator, reconstruction_fidelity, train_translator, TranslatorConfig};
use gradmorph::Result;

fn main() -> Result<()> {
    let lambda = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("lambda"));
    let data = generate_synthetic(&SynthConfig {
        count: 100,
        image_size: 32,
        ..SynthConfig::default()
    })?;
    let mut seg = build_segnet(SegNetConfig::default(), 1)?;
    let mut opt = AdadeltaState::new(AdadeltaConfig::default());
    train_segmentation(&mut seg, &data.train, Schedule { epochs: 15, batch_size: 8 }, &mut opt, 2)?;

    let batch = batch_perturb(&seg, &data.train, &PerturbConfig::default())?;
    let pairs: Vec<Pair> = batch.pairs(&data.train);
    println!("{} training pairs, mean oracle Dice {:.4}", pairs.len(), batch.mean_final_dice().unwrap_or(0.0));

    let loss = TranslationLossConfig {
        lambda,
        ..TranslationLossConfig::default()
    };
    let mut translator = build_translator(TranslatorConfig::default(), 3)?;
    let mut opt = AdadeltaState::new(AdadeltaConfig::default());
    let curve = train_translator(&mut translator, &pairs, &loss, Schedule { epochs: 10, batch_size: 8 }, &mut opt, 4)?;
    println!("translator loss {:.4} -> {:.4}", curve[0], curve[curve.len() - 1]);
    let fidelity = reconstruction_fidelity(&translator, &pairs, &loss)?.summary("ssim").expect("pairs");
    println!("train reconstruction SSIM {:.4} +- {:.4}", fidelity.mean, fidelity.std_err);

    let (mut orig, mut moved) = (0.0, 0.0);
    for s in &data.test {
        orig += dice(&seg.predict(&s.image)?, &s.mask, 1)?;
        moved += dice(&seg.predict(&translator.translate(&s.image)?)?, &s.mask, 1)?;
    }
    let n = data.test.len() as f64;
    println!("test Dice: direct {:.4}, through translator {:.4}", orig / n, moved / n);
    Ok(())
}
