//! Reverse-mode gradients of a small attention-like expression, checked
//! against central differences.

use hivt5::{Rng, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> Tensor {
    let scores = x.matmul(w).unwrap().softmax(1).unwrap();
    scores.mul(&scores).unwrap().sum()
}

fn main() {
    let mut rng = Rng::new(7);
    let mut leaf = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::param((0..n).map(|_| rng.normal()).collect(), shape).unwrap()
    };
    let x = leaf(&[3, 4]);
    let w = leaf(&[4, 5]);

    let out = loss(&x, &w);
    out.backward().unwrap();
    println!("loss = {:.6}", out.item());

    let analytic = w.grad().unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.numel() {
        let shifted = |delta: f64| {
            let mut d = w.to_vec();
            d[i] += delta;
            loss(&x, &Tensor::new(d, w.shape()).unwrap()).item()
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    println!("dL/dW: {} coordinates, worst relative error {worst:.2e}", w.numel());
}
