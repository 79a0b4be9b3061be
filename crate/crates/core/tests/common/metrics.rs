//! Slow, obviously-correct metric references.

pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in id {
        for b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Scans every observed ID score as a threshold and keeps the largest one
/// with TPR >= target.
pub fn brute_fpr(id: &[f64], ood: &[f64], target: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &t in id {
        let tp = id.iter().filter(|s| **s >= t).count();
        if tp as f64 >= target * id.len() as f64 - 1e-9 && t > best {
            best = t;
        }
    }
    ood.iter().filter(|s| **s >= best).count() as f64 / ood.len() as f64
}

pub fn brute_ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&k| (conf[k] > lo || (b == 0 && conf[k] >= 0.0)) && conf[k] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&k| correct[k]).count() as f64 / m;
        let avg = members.iter().map(|&k| conf[k]).sum::<f64>() / m;
        total += m / conf.len() as f64 * (acc - avg).abs();
    }
    total
}
