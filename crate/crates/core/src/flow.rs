//! Flow-matching noising and deterministic Euler sampling.
//!
//! Linear schedule `x_t = (1 - t) x + t eps`; the velocity along the path is
//! `eps - x`. Sampling integrates from `t = 1` (noise) to `t = 0` (data).

use ndarray::{Array4, Axis as NdAxis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamic::check_time;
use crate::error::{Error, Result};
use crate::policy::PePolicy;
use crate::rng::{domain, stream};

/// Batch of latents, shape `[batch, channels, height, width]`.
pub type LatentBatch = Array4<f64>;

/// Default number of sampling steps.
pub const DEFAULT_STEPS: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: LatentBatch,
    pub t: f64,
}

impl DiffusionState {
    pub fn alpha(&self) -> f64 {
        1.0 - self.t
    }

    pub fn sigma(&self) -> f64 {
        self.t
    }
}

/// `(1 - t) x + t eps`.
pub fn forward_noise(x: &LatentBatch, epsilon: &LatentBatch, t: f64) -> Result<DiffusionState> {
    check_time(t)?;
    if x.dim() != epsilon.dim() {
        return Err(Error::Shape(format!(
            "data {:?} and noise {:?} differ",
            x.dim(),
            epsilon.dim()
        )));
    }
    let a = 1.0 - t;
    let mut out = x.clone();
    out.zip_mut_with(epsilon, |xv, &e| *xv = a * *xv + t * e);
    Ok(DiffusionState { x: out, t })
}

/// Strictly decreasing sampling times from 1 to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    times: Vec<f64>,
}

impl StepGrid {
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("step grid needs at least one step".into()));
        }
        let n = steps as f64;
        Ok(Self {
            times: (0..=steps).map(|k| 1.0 - k as f64 / n).collect(),
        })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(Error::InvalidParameter(
                "step grid must run from 1 to 0 with at least one step".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidParameter("step grid must be strictly decreasing".into()));
        }
        Ok(Self { times })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// A policy frozen at the time of one sampler step.
#[derive(Debug, Clone, Copy)]
pub struct TimedPolicy<'a> {
    pub policy: &'a PePolicy,
    pub t: f64,
}

/// Anything that predicts the flow velocity at `(x_t, t)` under a policy.
pub trait VelocityModel {
    fn velocity(&self, x_t: &LatentBatch, t: f64, pe: TimedPolicy<'_>) -> Result<LatentBatch>;
}

impl<F> VelocityModel for F
where
    F: Fn(&LatentBatch, f64, TimedPolicy<'_>) -> Result<LatentBatch>,
{
    fn velocity(&self, x_t: &LatentBatch, t: f64, pe: TimedPolicy<'_>) -> Result<LatentBatch> {
        self(x_t, t, pe)
    }
}

/// Per-step log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub grid_t: f64,
    pub policy_t: f64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub samples: LatentBatch,
    pub trace: Vec<StepRecord>,
}

/// Initial noise; element `i` of the batch draws from its own stream.
pub fn initial_noise(seed: u64, shape: (usize, usize, usize, usize)) -> LatentBatch {
    let (b, c, h, w) = shape;
    let mut out = Array4::zeros(shape);
    for (i, mut elem) in out.axis_iter_mut(NdAxis(0)).enumerate() {
        let mut rng = stream(seed, domain::SAMPLER_NOISE, i as u64);
        elem.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
    }
    debug_assert_eq!(out.len(), b * c * h * w);
    out
}

/// Euler integration `x <- x + (t_{k+1} - t_k) v(x, t_k)` from noise drawn with `seed`.
pub fn euler_sample<M: VelocityModel + ?Sized>(
    model: &M,
    grid: &StepGrid,
    policy: &PePolicy,
    seed: u64,
    shape: (usize, usize, usize, usize),
) -> Result<SampleOutput> {
    euler_integrate(model, grid, policy, initial_noise(seed, shape))
}

/// Euler integration starting from an explicit `x_1`.
pub fn euler_integrate<M: VelocityModel + ?Sized>(
    model: &M,
    grid: &StepGrid,
    policy: &PePolicy,
    start: LatentBatch,
) -> Result<SampleOutput> {
    let mut x = start;
    let mut trace = Vec::with_capacity(grid.steps());
    for (k, w) in grid.times().windows(2).enumerate() {
        let (t, t_next) = (w[0], w[1]);
        let pe = TimedPolicy { policy, t };
        trace.push(StepRecord {
            step: k,
            grid_t: t,
            policy_t: pe.t,
        });
        let v = model.velocity(&x, t, pe)?;
        if v.dim() != x.dim() {
            return Err(Error::Shape(format!(
                "model returned {:?} for input {:?} at step {k}",
                v.dim(),
                x.dim()
            )));
        }
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::numeric(format!("sampler step {k}"), "non-finite velocity"));
        }
        let dt = t_next - t;
        x.zip_mut_with(&v, |xv, &vv| *xv += dt * vv);
    }
    Ok(SampleOutput { samples: x, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope2d::AxisContext;
    use std::cell::RefCell;

    fn data(shape: (usize, usize, usize, usize)) -> LatentBatch {
        Array4::from_shape_fn(shape, |(b, c, y, x)| ((b * 7 + c * 3 + y * 5 + x) as f64 * 0.37).sin())
    }

    fn policy() -> PePolicy {
        PePolicy::vanilla(AxisContext::native(4))
    }

    #[test]
    fn noising_endpoints() {
        let x = data((2, 1, 3, 3));
        let e = initial_noise(5, (2, 1, 3, 3));
        assert_eq!(forward_noise(&x, &e, 0.0).unwrap().x, x);
        assert_eq!(forward_noise(&x, &e, 1.0).unwrap().x, e);
        let mid = forward_noise(&x, &e, 0.5).unwrap();
        for ((m, a), b) in mid.x.iter().zip(x.iter()).zip(e.iter()) {
            assert!((m - (a + b) / 2.0).abs() < 1e-15);
        }
        assert_eq!(mid.alpha() + mid.sigma(), 1.0);
        assert!(forward_noise(&x, &e, 1.1).is_err());
        assert!(forward_noise(&x, &data((1, 1, 3, 3)), 0.5).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = StepGrid::uniform(28).unwrap();
        assert_eq!(g.times().len(), 29);
        assert_eq!(g.times()[0], 1.0);
        assert_eq!(g.times()[28], 0.0);
        assert!(StepGrid::from_times(vec![1.0, 0.5, 0.5, 0.0]).is_err());
        assert!(StepGrid::from_times(vec![1.0, 0.2]).is_err());
    }

    #[test]
    fn oracle_velocity_recovers_data() {
        let shape = (3, 1, 4, 4);
        let x = data(shape);
        let eps = initial_noise(11, shape);
        let oracle = |_: &LatentBatch, _: f64, _: TimedPolicy<'_>| -> Result<LatentBatch> { Ok(&eps - &x) };
        let one = euler_sample(&oracle, &StepGrid::uniform(1).unwrap(), &policy(), 11, shape).unwrap();
        for (a, b) in one.samples.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON, "{a} vs {b}");
        }
        let many = euler_sample(&oracle, &StepGrid::uniform(28).unwrap(), &policy(), 11, shape).unwrap();
        for (a, b) in many.samples.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_velocity_keeps_noise() {
        let shape = (2, 1, 3, 5);
        let zero =
            |x: &LatentBatch, _: f64, _: TimedPolicy<'_>| -> Result<LatentBatch> { Ok(LatentBatch::zeros(x.dim())) };
        let out = euler_sample(&zero, &StepGrid::uniform(5).unwrap(), &policy(), 9, shape).unwrap();
        assert_eq!(out.samples, initial_noise(9, shape));
    }

    #[test]
    fn policy_time_matches_grid() {
        let seen = RefCell::new(Vec::new());
        let rec = |x: &LatentBatch, t: f64, pe: TimedPolicy<'_>| -> Result<LatentBatch> {
            seen.borrow_mut().push((t, pe.t));
            Ok(LatentBatch::zeros(x.dim()))
        };
        let grid = StepGrid::uniform(7).unwrap();
        let out = euler_sample(&rec, &grid, &policy(), 1, (1, 1, 2, 2)).unwrap();
        assert_eq!(out.trace.len(), 7);
        for (k, r) in out.trace.iter().enumerate() {
            assert_eq!(r.grid_t, grid.times()[k]);
            assert_eq!(r.policy_t, r.grid_t);
            assert_eq!(seen.borrow()[k], (grid.times()[k], grid.times()[k]));
        }
    }

    #[test]
    fn non_finite_velocity_reports_step() {
        let bad = |x: &LatentBatch, t: f64, _: TimedPolicy<'_>| -> Result<LatentBatch> {
            let fill = if t < 0.5 { f64::NAN } else { 0.0 };
            Ok(LatentBatch::from_elem(x.dim(), fill))
        };
        let err = euler_sample(&bad, &StepGrid::uniform(4).unwrap(), &policy(), 1, (1, 1, 2, 2)).unwrap_err();
        assert!(err.to_string().contains("step 3"), "{err}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = |x: &LatentBatch, t: f64, _: TimedPolicy<'_>| -> Result<LatentBatch> { Ok(x.mapv(|v| (v * t).tanh())) };
        let g = StepGrid::uniform(6).unwrap();
        let a = euler_sample(&f, &g, &policy(), 42, (2, 1, 4, 4)).unwrap();
        let b = euler_sample(&f, &g, &policy(), 42, (2, 1, 4, 4)).unwrap();
        assert_eq!(a.samples, b.samples);
        // Element streams are independent of batch size.
        let c = euler_sample(&f, &g, &policy(), 42, (1, 1, 4, 4)).unwrap();
        assert_eq!(c.samples.index_axis(NdAxis(0), 0), a.samples.index_axis(NdAxis(0), 0));
    }
}
