use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::net::{TinyDit, TrainBatch};
use crate::error::Result;
use crate::policy::PePolicy;
use crate::rng::stream;

/// One analytic-versus-finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub block: String,
    pub kind: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.analytic.abs().max(self.numeric.abs()).max(f64::MIN_POSITIVE)
    }

    /// Passes when either the relative or the absolute error is within bounds.
    pub fn passes(&self, rel: f64, abs: f64) -> bool {
        self.abs_error() <= abs || self.rel_error() <= rel
    }
}

/// Compares the analytic gradient with central differences of step `h` on
/// up to `per_kind` random parameters of every block kind (`qkv.w`,
/// `mlp1.b`, ...), pooled over layers.
pub fn gradient_check(
    model: &TinyDit,
    batch: &TrainBatch,
    seed: u64,
    policy: &PePolicy,
    per_kind: usize,
    h: f64,
    pick_seed: u64,
) -> Result<Vec<GradCheckEntry>> {
    let grad = model.backward(batch, seed, policy)?;
    let mut kinds: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for block in model.layout().blocks() {
        kinds.entry(block.kind().to_string()).or_default().extend(block.range());
    }
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (k, (kind, indices)) in kinds.iter().enumerate() {
        let mut rng = stream(pick_seed, 0xC0DE, k as u64);
        let amount = per_kind.min(indices.len());
        for pick in sample(&mut rng, indices.len(), amount).into_iter() {
            let i = indices[pick];
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = probe.loss(batch, seed, policy)?;
            probe.params_mut()[i] = orig - h;
            let down = probe.loss(batch, seed, policy)?;
            probe.params_mut()[i] = orig;
            out.push(GradCheckEntry {
                block: model.layout().block_of(i).expect("index in layout").name.clone(),
                kind: kind.clone(),
                index: i,
                analytic: grad[i],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    Ok(out)
}
