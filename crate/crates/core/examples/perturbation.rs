//! Push a test image towards its ground truth with gradient steps on the
//! input, then print the per-iteration trace.
//!
//! cargo run --release --example perturbation [-- <gamma>]

use gradmorph::data::{generate_synthetic, SynthConfig};
use gradmorph::metrics::dice;
use gradmorph::optim::{AdadeltaConfig, AdadeltaState};
use gradmorph::perturb::{compute_perturbation, PerturbConfig};
use gradmorph::segnet::{build_segnet, train_segmentation, SegNetConfig};
use gradmorph::train::Schedule;
use gradmorph::Result;

fn main() -> Result<()> {
    let gamma = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("gamma"));
    let data = generate_synthetic(&SynthConfig {
        count: 80,
        image_size: 32,
        ..SynthConfig::default()
    })?;
    let mut model = build_segnet(SegNetConfig::default(), 1)?;
    let mut opt = AdadeltaState::new(AdadeltaConfig::default());
    train_segmentation(&mut model, &data.train, Schedule { epochs: 20, batch_size: 8 }, &mut opt, 2)?;

    // Take the median test image: partly right, so there is something to fix.
    let mut scored = data
        .test
        .iter()
        .map(|s| Ok((dice(&model.predict(&s.image)?, &s.mask, 1)?, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (before, sample) = scored[scored.len() / 2];
    println!("{}: Dice {before:.4} before perturbation", sample.id);

    let cfg = PerturbConfig {
        gamma,
        ..PerturbConfig::default()
    };
    let result = compute_perturbation(&model, &sample.image, &sample.mask, &cfg)?;
    println!("iter  objective        Dice  |grad|_inf");
    for r in &result.trace {
        println!("{:4}  {:9.3}  {:10.4}  {:10.4}", r.iteration, r.objective, r.dice, r.delta_linf);
    }
    println!(
        "stopped by {} after {} evaluations; final Dice {:.4}; perturbation range [{:.3}, {:.3}]",
        result.terminated_by,
        result.trace.len(),
        result.final_dice,
        result.delta_total.min(),
        result.delta_total.max()
    );
    Ok(())
}
