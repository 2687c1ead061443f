use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::config::FitConfig;
use crate::raster::CloudGrads;
use crate::scene::{Gaussian, GaussianCloud};

/// Screen-space statistics gathered between densification events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
    pub max_radius: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
            max_radius: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    pub fn accumulate(&mut self, g: &CloudGrads) {
        for i in 0..self.len() {
            self.grad_sum[i] += g.screen_grad_norm[i];
            self.count[i] += g.hit_count[i];
            self.max_radius[i] = self.max_radius[i].max(g.max_screen_radius[i]);
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub iteration: usize,
    pub before: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub after: usize,
}

/// Clone small and split large high-gradient Gaussians, prune transparent and
/// oversized ones. Survivors keep their order and moments; new Gaussians are
/// appended (clones first, then split children) with zeroed moments.
///
/// `stats` is reset to the new cloud size.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    state: &mut OptimizerState,
    stats: &mut DensifyStats,
    config: &FitConfig,
    extent: f64,
    image_height: usize,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    assert_eq!(stats.len(), n, "densification stats out of sync with the cloud");
    assert_eq!(state.len(), n, "optimizer state out of sync with the cloud");
    let radius_cap = config.prune_screen_fraction * image_height as f64;
    let dense_scale = config.percent_dense * extent;

    let prune: Vec<bool> = (0..n)
        .map(|i| {
            let g = &cloud.gaussians()[i];
            g.opacity() < config.prune_opacity_threshold || stats.max_radius[i] > radius_cap
        })
        .collect();

    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| !prune[i] && stats.count[i] > 0 && stats.mean_grad(i) > config.densify_grad_threshold)
        .collect();
    // When the budget is tight, the strongest gradients win.
    let survivors = prune.iter().filter(|p| !**p).count();
    let mut budget = config.max_gaussians.saturating_sub(survivors);
    candidates.sort_by(|&a, &b| stats.mean_grad(b).total_cmp(&stats.mean_grad(a)).then(a.cmp(&b)));
    let mut clone = vec![false; n];
    let mut split = vec![false; n];
    for &i in &candidates {
        if cloud.gaussians()[i].max_scale() > dense_scale {
            // Replaces one with two.
            if budget >= 1 {
                split[i] = true;
                budget -= 1;
            }
        } else if budget >= 1 {
            clone[i] = true;
            budget -= 1;
        }
    }

    let mut new: Vec<Gaussian> = Vec::new();
    for i in 0..n {
        if clone[i] {
            new.push(cloud.gaussians()[i]);
        }
    }
    let cloned = new.len();
    let mut n_split = 0;
    for i in 0..n {
        if !split[i] {
            continue;
        }
        n_split += 1;
        let g = &cloud.gaussians()[i];
        let r = g.rotation_matrix();
        let s = g.scales();
        for _ in 0..2 {
            let z = Vector3::new(
                rng.sample::<f64, _>(StandardNormal) * s[0],
                rng.sample::<f64, _>(StandardNormal) * s[1],
                rng.sample::<f64, _>(StandardNormal) * s[2],
            );
            let off = r * z;
            let mut c = *g;
            for k in 0..3 {
                c.mean[k] += off[k];
                c.log_scale[k] -= config.split_factor.ln();
            }
            new.push(c);
        }
    }

    let keep: Vec<bool> = (0..n).map(|i| !prune[i] && !split[i]).collect();
    let mut rows: Vec<Option<usize>> = (0..n).filter(|&i| keep[i]).map(Some).collect();
    rows.extend(std::iter::repeat_n(None, new.len()));
    cloud.retain_mask(&keep);
    for g in new {
        cloud.push(g);
    }
    state.remap(&rows);
    *stats = DensifyStats::new(cloud.len());

    DensifyReport {
        iteration: 0,
        before: n,
        cloned,
        split: n_split,
        pruned: prune.iter().filter(|p| **p).count(),
        after: cloud.len(),
    }
}
