//! Scratch amplitude sweep (temporary).

use advgrad::data::Dataset;
use advgrad::eval::{clean_accuracy, robust_accuracy, EvalConfig};
use advgrad::attack::Norm;
use advgrad::train::{reference_cnn, train_with_transform, TrainConfig};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gen(seed: u64, n: usize, k: usize, shape: (usize, usize, usize), split: &str, amp_med: f64, sig: f64, noise_sd: f64, q: f64, slots: usize, shift: usize) -> Dataset<f32> {
    let (c, h, w) = shape;
    let d = c * h * w;
    let block = (h.min(w) / 8).max(1);
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let nb = c * bh * bw;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x53_59_4e_54_48);
    let support: Vec<bool> = (0..nb).map(|_| prng.random::<f64>() < q).collect();
    // patterns[class][slot] -> per-block signs
    let patterns: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| (0..slots).map(|_| {
            support.iter().map(|&on| {
                let s = if prng.random::<bool>() { 1.0 } else { -1.0 };
                if on { s } else { 0.0 }
            }).collect()
        }).collect())
        .collect();
    let sigma_blob = 0.30 * h.min(w) as f64;
    let (cy0, cx0) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let gd = Normal::new(0.0, sig).unwrap();
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let sb = split.as_bytes();
    key[8..8 + sb.len().min(23)].copy_from_slice(&sb[..sb.len().min(23)]);
    key[31] = 0x5D;
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let kk = i % k;
        labels.push(kk);
        let jy = cy0 + (rng.random::<f64>() - 0.5) * 0.10 * h as f64;
        let jx = cx0 + (rng.random::<f64>() - 0.5) * 0.10 * w as f64;
        let g: f64 = gd.sample(&mut rng);
        let amp = amp_med * g.exp();
        let slot = rng.random_range(0..slots);
        let (sy, sx) = if shift > 0 {
            (rng.random_range(0..shift), rng.random_range(0..shift))
        } else { (0, 0) };
        let signs = &patterns[kk][slot];
        for ch in 0..c {
            let cg = 0.95 + 0.1 * rng.random::<f64>();
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - jy).powi(2) + (x as f64 - jx).powi(2);
                    let blob = 0.18 * cg * (-d2 / (2.0 * sigma_blob * sigma_blob)).exp();
                    let pat = signs[(ch * bh + ((y + sy) % h) / block) * bw + ((x + sx) % w) / block];
                    let v = 0.45 + blob + amp * pat + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Dataset::new(Array4::from_shape_vec((n, c, h, w), data).unwrap(), labels, None, split).unwrap()
}

fn main() {
    // GRID = "amp:sig:noise:q;..."
    let grid = std::env::var("GRID").unwrap_or("0.10:0.3:0.06:0.06:1:0".into());
    for item in grid.split(';') {
        let f: Vec<f64> = item.split(':').map(|s| s.parse().unwrap()).collect();
        let (amp, sig, noise_sd, q) = (f[0], f[1], f[2], f[3]);
        let (slots, shift) = (f[4] as usize, f[5] as usize);
        let tr = gen(42, 6000, 10, (3, 32, 32), "train", amp, sig, noise_sd, q, slots, shift);
        let te = gen(42, 300, 10, (3, 32, 32), "test", amp, sig, noise_sd, q, slots, shift);
        let center = advgrad::data::model_file::mean_image_transform(&tr).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 64, learning_rate: 0.02, momentum: 0.9, seed: 7, ..Default::default() };
        let net = reference_cnn::<f32>((3, 32, 32), 10).unwrap();
        let (net, curve) = train_with_transform(net, &center, &tr, &cfg).unwrap();
        let ca = clean_accuracy(&net, &center, &te).unwrap();
        print!("amp {amp} sig {sig} noise {noise_sd} q {q} slots {slots} shift {shift}: clean {:.1}% loss {:.3}", ca * 100.0, curve.last().unwrap());
        for (p, norm) in [("FGSM", Norm::Linf), ("FGSM-10", Norm::Linf), ("BIM-10", Norm::Linf), ("BIM-50", Norm::Linf),
                          ("FGM", Norm::L2), ("BIM-10", Norm::L2), ("BIM-100", Norm::L2)] {
            let mut c = EvalConfig::new(p, norm, advgrad::attack::default_epsilon(norm));
            c.max_samples = Some(300);
            c.seed = 1;
            let r = robust_accuracy(&net, &center, &te, &c).unwrap();
            print!("  {p}/{}={:.1}%", norm.name(), r.robust_accuracy * 100.0);
        }
        println!();
    }
}
