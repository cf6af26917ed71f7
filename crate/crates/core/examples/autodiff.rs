//! Record a small convolutional graph, backpropagate, and check the analytic
//! gradient against central finite differences.
//!
//! cargo run --release --example autodiff

use gradmorph::graph::gradcheck::{check_coords, max_rel_err};
use gradmorph::graph::{Graph, Padding};
use gradmorph::{Result, Tensor};

fn main() -> Result<()> {
    let image = Tensor::from_fn([1, 6, 6], |i| (i as f64 * 1.37).sin() * 0.8);
    let kernel = Tensor::from_fn([2, 1, 3, 3], |i| (i as f64 * 2.11 + 0.3).cos() * 0.5);
    let bias = Tensor::new([2], vec![0.1, -0.2])?;

    // loss(k) = mean(sigmoid(maxpool(relu(conv(image, k)))))
    let loss_of = |k: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let (x, k, b) = (g.constant(image.clone()), g.constant(k.clone()), g.constant(bias.clone()));
        let y = g.conv2d(x, k, b, Padding::Same)?;
        let y = g.relu(y);
        let y = g.maxpool2d(y)?;
        let y = g.sigmoid(y);
        let loss = g.mean(y);
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let k = g.leaf(kernel.clone());
    let b = g.constant(bias.clone());
    let y = g.conv2d(x, k, b, Padding::Same)?;
    let y = g.relu(y);
    let y = g.maxpool2d(y)?;
    let y = g.sigmoid(y);
    let loss = g.mean(y);
    let grads = g.backward(loss)?;
    let dk = grads.get(k).expect("kernel is a leaf");

    println!("loss = {:.6}  ({} tape nodes)", g.value(loss).data()[0], g.len());
    let all: Vec<usize> = (0..kernel.numel()).collect();
    let checks = check_coords(loss_of, &kernel, dk, &all, 1e-5)?;
    for c in checks.iter().take(6) {
        println!("  dL/dk[{:2}] analytic {:+.8}  numeric {:+.8}", c.index, c.analytic, c.numeric);
    }
    let worst = checks.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).expect("coordinates");
    println!(
        "max relative error over {} coordinates: {:.2e} (at k[{}])",
        checks.len(),
        max_rel_err(&checks),
        worst.index
    );
    Ok(())
}
