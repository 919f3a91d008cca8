use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NdeError;
use crate::tensor::Tensor;

/// Coefficients and discretization of the reference spiral SDE
/// `du1 = (-a u1^3 + b u2^3) dt + c u1 dW1`, `du2 = (-b u1^3 - a u2^3) dt + c u2 dW2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpiralSystem {
    pub damping: f64,
    pub rotation: f64,
    pub noise: f64,
    pub initial: [f64; 2],
    pub t_end: f64,
    /// Largest Euler-Maruyama substep.
    pub max_step: f64,
}

impl Default for SpiralSystem {
    fn default() -> Self {
        SpiralSystem {
            damping: 0.1,
            rotation: 2.0,
            noise: 0.2,
            initial: [2.0, 0.0],
            t_end: 1.0,
            max_step: 1e-4,
        }
    }
}

impl SpiralSystem {
    pub fn drift(&self, u: [f64; 2]) -> [f64; 2] {
        let (x3, y3) = (u[0].powi(3), u[1].powi(3));
        [
            -self.damping * x3 + self.rotation * y3,
            -self.rotation * x3 - self.damping * y3,
        ]
    }
}

/// Sampled reference trajectories, `paths[k]` of shape `(points, 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpiralDataset {
    pub times: Vec<f64>,
    /// Shape `(trajectories, points, 2)`.
    pub paths: Tensor,
}

impl SpiralDataset {
    pub fn trajectories(&self) -> usize {
        self.paths.shape()[0]
    }

    pub fn points(&self) -> usize {
        self.paths.shape()[1]
    }

    /// Per-time-point means and population variances, each of shape `(2)`.
    pub fn moments(&self) -> (Vec<Tensor>, Vec<Tensor>) {
        let (n, m) = (self.trajectories(), self.points());
        let data = self.paths.data();
        let mut means = Vec::with_capacity(m);
        let mut vars = Vec::with_capacity(m);
        for i in 0..m {
            let mut mean = [0.0; 2];
            for k in 0..n {
                for d in 0..2 {
                    mean[d] += data[(k * m + i) * 2 + d];
                }
            }
            mean.iter_mut().for_each(|v| *v /= n as f64);
            let mut var = [0.0; 2];
            for k in 0..n {
                for d in 0..2 {
                    var[d] += (data[(k * m + i) * 2 + d] - mean[d]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            means.push(Tensor::vector(mean.to_vec()));
            vars.push(Tensor::vector(var.to_vec()));
        }
        (means, vars)
    }
}

/// `points` uniformly spaced sample times on `[0, t_end]`.
pub fn uniform_times(points: usize, t_end: f64) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| if i + 1 == points { t_end } else { t_end * i as f64 / (points - 1) as f64 })
        .collect()
}

/// Simulates the reference system with fixed-step Euler-Maruyama and records
/// every trajectory at `points` uniformly spaced times.
pub fn spiral_truth_simulate(
    system: &SpiralSystem,
    trajectories: usize,
    points: usize,
    seed: u64,
) -> Result<SpiralDataset, NdeError> {
    if trajectories == 0 || points == 0 {
        return Err(NdeError::InvalidArgument("need at least one trajectory and one time point".into()));
    }
    if !(system.max_step > 0.0 && system.t_end > 0.0) {
        return Err(NdeError::InvalidArgument("step and horizon must be positive".into()));
    }
    let times = uniform_times(points, system.t_end);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(trajectories * points * 2);
    for _ in 0..trajectories {
        let mut u = system.initial;
        data.extend_from_slice(&u);
        for w in times.windows(2) {
            let span = w[1] - w[0];
            let substeps = (span / system.max_step).ceil() as usize;
            let h = span / substeps as f64;
            let sqrt_h = h.sqrt();
            for _ in 0..substeps {
                let f = system.drift(u);
                let dw1: f64 = StandardNormal.sample(&mut rng);
                let dw2: f64 = StandardNormal.sample(&mut rng);
                u = [
                    u[0] + f[0] * h + system.noise * u[0] * dw1 * sqrt_h,
                    u[1] + f[1] * h + system.noise * u[1] * dw2 * sqrt_h,
                ];
            }
            data.extend_from_slice(&u);
        }
    }
    let paths = Tensor::new(vec![trajectories, points, 2], data).expect("sized above");
    Ok(SpiralDataset { times, paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let sys = SpiralSystem {
            max_step: 1e-3,
            ..SpiralSystem::default()
        };
        let a = spiral_truth_simulate(&sys, 5, 30, 1).unwrap();
        assert_eq!(a.paths.shape(), &[5, 30, 2]);
        assert_eq!(a.times.len(), 30);
        assert_eq!(a.times[29], 1.0);
        assert_eq!(a, spiral_truth_simulate(&sys, 5, 30, 1).unwrap());
        assert_ne!(a, spiral_truth_simulate(&sys, 5, 30, 2).unwrap());
    }

    #[test]
    fn noiseless_quartic_energy_never_grows() {
        // d(u1^4 + u2^4)/dt = -4a (u1^6 + u2^6); the Euclidean radius is not monotone
        let sys = SpiralSystem {
            noise: 0.0,
            ..SpiralSystem::default()
        };
        let d = spiral_truth_simulate(&sys, 1, 30, 0).unwrap();
        let energy: Vec<f64> = d.paths.data().chunks(2).map(|u| u[0].powi(4) + u[1].powi(4)).collect();
        assert!(energy.windows(2).all(|w| w[1] <= w[0]));
        let radius: Vec<f64> = d.paths.data().chunks(2).map(|u| u[0].hypot(u[1])).collect();
        assert!(radius[3] > radius[0]);
    }

    #[test]
    fn moments_use_population_variance() {
        let d = SpiralDataset {
            times: vec![0.0],
            paths: Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 3.0, 2.0]).unwrap(),
        };
        let (m, v) = d.moments();
        assert_eq!(m[0].data(), &[2.0, 1.0]);
        assert_eq!(v[0].data(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_empty_requests() {
        assert!(spiral_truth_simulate(&SpiralSystem::default(), 0, 30, 0).is_err());
        assert!(spiral_truth_simulate(&SpiralSystem::default(), 3, 0, 0).is_err());
    }
}
