#![allow(dead_code)]

use ovo_core::autodiff::{rng, Tensor};
use rand_distr::{Distribution, StandardNormal};

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

/// Ridge regression of `y` on `[x, 1]`, solved by Gaussian elimination.
pub fn ridge_fit(x: &Tensor, y: &[f64], alpha: f64) -> Vec<f64> {
    let n = x.rows();
    let p = x.numel() / n + 1;
    let row = |r: usize| -> Vec<f64> {
        let mut v = x.row(r).to_vec();
        v.push(1.0);
        v
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..n {
        let v = row(r);
        for i in 0..p {
            for j in 0..p {
                a[i][j] += v[i] * v[j];
            }
            a[i][p] += v[i] * y[r];
        }
    }
    for (i, ai) in a.iter_mut().enumerate().take(p - 1) {
        ai[i] += alpha;
    }
    for c in 0..p {
        let pivot = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, pivot);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

pub fn ridge_predict(x: &Tensor, w: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|r| {
            let (last, head) = w.split_last().unwrap();
            x.row(r).iter().zip(head).map(|(a, b)| a * b).sum::<f64>() + last
        })
        .collect()
}
