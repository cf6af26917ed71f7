//! Train the segmentation network on synthetic data and score the test split.
//!
//! cargo run --release --example segmentation [-- <epochs> <image_size>]

use gradmorph::data::{generate_synthetic, SynthConfig};
use gradmorph::metrics::MetricsReport;
use gradmorph::optim::{AdadeltaConfig, AdadeltaState};
use gradmorph::segnet::{build_segnet, train_segmentation, SegNetConfig};
use gradmorph::train::Schedule;
use gradmorph::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(15);
    let image_size = args.next().unwrap_or(32);

    let data = generate_synthetic(&SynthConfig {
        count: 160,
        image_size,
        ..SynthConfig::default()
    })?;
    let mut model = build_segnet(SegNetConfig::default(), 1)?;
    println!(
        "{} train / {} test images, {}x{}; network has {} parameters",
        data.train.len(),
        data.test.len(),
        image_size,
        image_size,
        model.params.count()
    );

    let mut opt = AdadeltaState::new(AdadeltaConfig::default());
    let schedule = Schedule { epochs, batch_size: 8 };
    let curve = train_segmentation(&mut model, &data.train, schedule, &mut opt, 2)?;
    for (i, loss) in curve.iter().enumerate().filter(|(i, _)| i % 5 == 4 || *i + 1 == curve.len()) {
        println!("epoch {:3}  cross-entropy {loss:.4}", i + 1);
    }

    let preds = data.test.iter().map(|s| model.predict(&s.image)).collect::<Result<Vec<_>>>()?;
    let gts: Vec<_> = data.test.iter().map(|s| s.mask.clone()).collect();
    let ids = data.test.iter().map(|s| s.id.clone()).collect();
    let report = MetricsReport::segmentation(ids, &preds, &gts)?;
    for metric in ["dice", "fpr", "fnr"] {
        let s = report.summary(metric).expect("non-empty test split");
        println!("test {metric:4} {:.4} +- {:.4}", s.mean, s.std_err);
    }
    Ok(())
}
