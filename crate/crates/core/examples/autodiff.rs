//! Reverse-mode gradients on a two-layer network, checked against central
//! differences.

use viscom::tensor::{Tape, Tensor};

fn loss(w1: &Tensor<f64>, w2: &Tensor<f64>, x: &Tensor<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::<f64>::new();
    let (a, b, xv) = (tape.param(w1.clone()), tape.param(w2.clone()), tape.constant(x.clone()));
    let h = tape.matmul(xv, a).unwrap();
    let h = tape.gelu(h);
    let logits = tape.matmul(h, b).unwrap();
    let l = tape.cross_entropy_opt(logits, &[Some(1), None, Some(0)]).unwrap();
    tape.backward(l).unwrap();
    let v = tape.value(l).item();
    (v, tape.grad(a).unwrap().to_vec(), tape.grad(b).unwrap().to_vec())
}

fn main() {
    let fill = |r: usize, c: usize, k: f64| {
        Tensor::new(vec![r, c], (0..r * c).map(|i| ((i as f64 + k) * 0.7).sin()).collect()).unwrap()
    };
    let (w1, w2, x) = (fill(4, 5, 0.0), fill(5, 3, 1.0), fill(3, 4, 2.0));
    let (l, g1, _) = loss(&w1, &w2, &x);
    println!("loss {l:.6}");
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..w1.len() {
        let mut up = w1.clone();
        up.data_mut()[i] += h;
        let mut down = w1.clone();
        down.data_mut()[i] -= h;
        let numeric = (loss(&up, &w2, &x).0 - loss(&down, &w2, &x).0) / (2.0 * h);
        worst = worst.max((numeric - g1[i]).abs());
    }
    println!("max |analytic - numeric| over w1: {worst:.2e}");
}
