//! Independent oracles and data generators shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hinge objective evaluated directly from its definition.
pub fn hinge_objective(w: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64, bias: bool) -> f64 {
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5;
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let mut s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            if bias {
                s += w[x.len()];
            }
            (1.0 - y * s).max(0.0)
        })
        .sum();
    reg + c * loss
}

/// Accelerated projected gradient ascent on the SVM dual over the box `[0, C]^n`,
/// run for exactly `steps` iterations. Returns the primal weights `sum_i alpha_i y_i z_i`.
pub fn dual_projected_gradient(xs: &[Vec<f64>], ys: &[f64], c: f64, bias: bool, steps: usize) -> Vec<f64> {
    let n = xs.len();
    let z: Vec<Vec<f64>> = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let mut v: Vec<f64> = x.iter().map(|a| a * y).collect();
            if bias {
                v.push(y);
            }
            v
        })
        .collect();
    let d = z[0].len();
    // largest eigenvalue of Z Z^T by power iteration on Z^T Z (d x d)
    let mut v = vec![1.0; d];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut next = vec![0.0; d];
        for zi in &z {
            let p: f64 = zi.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (nj, zij) in next.iter_mut().zip(zi) {
                *nj += p * zij;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lambda * 1.01 + 1e-12);
    let dual = |alpha: &[f64], w: &[f64]| alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|x| x * x).sum::<f64>();

    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut y_alpha = alpha.clone();
    let mut y_w = w.clone();
    let mut next_alpha = alpha.clone();
    let mut next_w = w.clone();
    let mut t = 1.0f64;
    let mut best = dual(&alpha, &w);
    for _ in 0..steps {
        next_w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let g = 1.0 - z[i].iter().zip(&y_w).map(|(a, b)| a * b).sum::<f64>();
            let a = (y_alpha[i] + step * g).clamp(0.0, c);
            next_alpha[i] = a;
            for (wj, zij) in next_w.iter_mut().zip(&z[i]) {
                *wj += a * zij;
            }
        }
        let value = dual(&next_alpha, &next_w);
        if value < best {
            // adaptive restart
            t = 1.0;
            y_alpha.copy_from_slice(&alpha);
            y_w.copy_from_slice(&w);
            continue;
        }
        best = value;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        for i in 0..n {
            y_alpha[i] = next_alpha[i] + beta * (next_alpha[i] - alpha[i]);
        }
        for j in 0..d {
            y_w[j] = next_w[j] + beta * (next_w[j] - w[j]);
        }
        std::mem::swap(&mut alpha, &mut next_alpha);
        std::mem::swap(&mut w, &mut next_w);
        t = t_next;
    }
    w
}

/// Random instance with both labels present: `(xs, ys)`.
pub fn random_svm_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    loop {
        let shift: f64 = rng.random_range(0.0..1.5);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) + y * shift * 0.5).collect();
            xs.push(x);
            ys.push(y);
        }
        if ys.iter().any(|&y| y > 0.0) && ys.iter().any(|&y| y < 0.0) {
            return (xs, ys);
        }
    }
}

/// All-points AP by direct enumeration: each positive's rank is counted from scratch.
pub fn ap_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
    let rank_of = |i: usize| -> usize {
        1 + (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut ranked: Vec<(usize, usize)> = (0..scores.len()).filter(|&i| labels[i]).map(|i| (rank_of(i), i)).collect();
    ranked.sort();
    let positives = ranked.len();
    let mut sum = 0.0;
    for &(r, _) in &ranked {
        let hits = ranked.iter().filter(|&&(r2, _)| r2 <= r).count();
        sum += hits as f64 / r as f64;
    }
    sum / positives as f64
}

/// `(recall, precision)` at every prefix that ends on a positive, by recounting each prefix.
pub fn pr_bruteforce(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..n).collect();
    // selection by repeated max, earliest index on ties
    let mut ranked = Vec::with_capacity(n);
    while !order.is_empty() {
        let mut best = 0;
        for k in 1..order.len() {
            if scores[order[k]] > scores[order[best]] {
                best = k;
            }
        }
        ranked.push(order.remove(best));
    }
    (1..=n)
        .filter(|&len| labels[ranked[len - 1]])
        .map(|len| {
            let hits = ranked[..len].iter().filter(|&&i| labels[i]).count();
            (hits as f64 / positives as f64, hits as f64 / len as f64)
        })
        .collect()
}

/// Gaussian blobs: `k` centers drawn on a sphere of radius `separation`, unit-variance noise.
pub fn gaussian_blobs(
    rng: &mut ChaCha8Rng,
    k: usize,
    per_class: usize,
    d: usize,
    separation: f64,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm * separation).collect()
        })
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            xs.push(center.iter().map(|m| m + normal.sample(rng)).collect());
            ys.push(c);
        }
    }
    (xs, ys, centers)
}

/// Accuracy of assigning each test point to the nearest training-class centroid.
pub fn nearest_centroid_accuracy(train: &[Vec<f64>], train_y: &[usize], test: &[Vec<f64>], test_y: &[usize], k: usize) -> f64 {
    let d = train[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &y) in train.iter().zip(train_y) {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(x) {
            *s += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect();
    let correct = test
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let dist = |c: &Vec<f64>| c.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == y
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Smooth random texture: a sum of a few oriented sinusoids squashed into [0, 1].
pub fn texture(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            out.push(0.5 + 0.5 * (s / 2.0).tanh());
        }
    }
    out
}

/// `count` textured images of `side x side` plus the centered crop of each covering `crop_fraction` of the side.
pub fn crop_corpus(
    seed: u64,
    count: usize,
    side: u32,
    crop_fraction: f64,
) -> (Vec<ots_core::extract::ImageSource>, Vec<ots_core::extract::ImageSource>) {
    use ots_core::extract::ImageSource;
    use ots_core::{PixelGrid, Rect};
    let mut r = rng(seed);
    let crop = (side as f64 * crop_fraction).round() as u32;
    let offset = (side - crop) / 2;
    let mut refs = Vec::new();
    let mut queries = Vec::new();
    for i in 0..count {
        let grid = PixelGrid::new(side, side, texture(&mut r, side, side)).unwrap();
        let q = grid.crop(Rect::new(offset, offset, crop, crop)).unwrap();
        refs.push(ImageSource::from_pixels(format!("ref{i:02}"), grid));
        queries.push(ImageSource::from_pixels(format!("ref{i:02}"), q));
    }
    (refs, queries)
}
