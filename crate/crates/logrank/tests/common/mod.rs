//! Shared instance generators and small statistics helpers for the
//! acceptance suite.

use logrank::hashing::SplitMix64;
use logrank::stream_io::StreamUpdate;

pub fn up(row: u32, col: u32, delta: i64) -> StreamUpdate {
    StreamUpdate { row, col, delta }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[(xs.len() - 1) / 2]
}

pub fn linear_fit_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Planted heavy-hitter instance with disjoint column supports: one heavy
/// column of `heavy_rows` entries of value 3 among single-entry light
/// columns; every bucket norm is exactly additive.
pub fn planted_heavy_instance(heavy_rows: u32, n_light: u32, heavy_col: u32) -> Vec<StreamUpdate> {
    let mut updates = Vec::new();
    for r in 0..heavy_rows {
        updates.push(up(r, heavy_col, 3));
    }
    for l in 0..n_light {
        let col = if l == heavy_col { n_light } else { l };
        updates.push(up(heavy_rows + l, col, 3));
    }
    updates
}

/// Dense-ish random matrix with smoothly decaying column scales, so a few
/// dozen columns clear any fixed probability threshold while the rest form
/// a long tail.
pub fn skewed_random_updates(n: usize, seed: u64) -> Vec<StreamUpdate> {
    let mut rng = SplitMix64::new(seed ^ 0x51ab_77ee_0110_d001);
    let mut updates = Vec::new();
    for c in 0..n {
        let scale = (40.0 * ((c + 1) as f64).powf(-0.7)).max(1.0) as i64;
        for r in 0..n {
            let span = 2 * scale + 1;
            let v = (rng.next_u64() % span as u64) as i64 - scale;
            if v != 0 {
                updates.push(up(r as u32, c as u32, v));
            }
        }
    }
    updates
}

/// Sampling fidelity instance: a handful of heavy columns holding most of
/// the transformed mass over a sea of single-entry light columns.
pub fn planted_sampling_updates(n: usize, n_heavy: usize, heavy_rows: u32) -> Vec<StreamUpdate> {
    let heavy_cols: Vec<usize> = (0..n_heavy).map(|h| (h * 61 + 7) % n).collect();
    let mut updates = Vec::new();
    for (h, &col) in heavy_cols.iter().enumerate() {
        // distinct shifted supports keep the heavy columns distinguishable
        for r in 0..heavy_rows {
            let row = (h as u32 * 64 + r) % n as u32;
            updates.push(up(row, col as u32, 3));
        }
    }
    let mut lights = 0u32;
    for col in 0..n {
        if heavy_cols.contains(&col) {
            continue;
        }
        if lights >= 480 {
            break;
        }
        updates.push(up(lights % n as u32, col as u32, 3));
        lights += 1;
    }
    updates
}
