//! Analytic-versus-finite-difference gradient comparison at random points
//! kept away from fold cell boundaries and ReLU kinks.

use super::{
    boundary_margins, build_training_set, loss, loss_and_gradients, Classifier, GradientFault, StructNetParams,
    TrainingSet, HIDDEN_WIDTHS,
};
use crate::channel::{generate_taps, realize, ChannelConfig};
use crate::error::Result;
use crate::numerics::{finite_diff_grad, RngStream};
use crate::phy::{build_subframe, transmit, Modulation, SubframeConfig};

/// Minimum distance of every fold projection from a cell boundary, as a fraction of the period.
pub const FOLD_MARGIN: f64 = 1e-3;
/// Minimum |pre-activation| of every hidden unit.
pub const RELU_MARGIN: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub points: usize,
    pub seed: u64,
    pub subcarriers: usize,
    pub batch: usize,
    pub smoothness: f64,
    pub snr_db: f64,
    pub fault: GradientFault,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { points: 100, seed: 0, subcarriers: 6, batch: 12, smoothness: 0.1, snr_db: 10.0, fault: GradientFault::None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub points: usize,
    /// Worst relative error over all points, channel-layer group.
    pub max_rel_channel: f64,
    /// Worst relative error over all points, classifier group.
    pub max_rel_classifier: f64,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_channel.max(self.max_rel_classifier)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel() <= tol
    }
}

/// `max |a - f| / max(|a|, |f|)` over one parameter group.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

struct Problem {
    set: TrainingSet,
    truth: crate::channel::ChannelGrid,
}

fn problem(cfg: &GradCheckConfig, point: u64) -> Result<Problem> {
    let k = cfg.subcarriers;
    let ccfg = ChannelConfig { num_subcarriers: k, speed_mps: 0.0, ..ChannelConfig::default() };
    let root = RngStream::new(cfg.seed, 0x6772_6164);
    let taps = generate_taps(&ccfg, &mut root.derive(&[point, 0]))?;
    let real = realize(&taps, &ccfg)?;
    let scfg = SubframeConfig { num_subcarriers: k, modulation: Modulation::Qpsk, ..SubframeConfig::default() };
    let sf = build_subframe(&scfg, &mut root.derive(&[point, 1]), &mut root.derive(&[point, 2]))?;
    let y = transmit(&sf, &real, cfg.snr_db, &mut root.derive(&[point, 3]))?;
    Ok(Problem { set: build_training_set(&sf, &y)?, truth: real.grid })
}

/// Random parameters near the true channel, redrawn until the batch is off every boundary.
fn off_boundary(cfg: &GradCheckConfig, p: &Problem, rng: &mut RngStream) -> Result<(StructNetParams, Vec<u32>)> {
    let set = &p.set;
    let sizes = [2 * set.nt, HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], 1];
    loop {
        let cl = Classifier::random(&sizes, rng);
        let mut params = StructNetParams::new(set.nr, set.nt, set.subcarriers.clone(), cl, set.modulation)?;
        params.set_weights_from_grid(&p.truth, 0);
        for w in params.weights_mut() {
            *w += rng.complex_normal(0.05);
        }
        let batch: Vec<u32> = (0..cfg.batch).map(|_| rng.below(set.len()) as u32).collect();
        let m = boundary_margins(set, &batch, &params)?;
        if m.fold > FOLD_MARGIN && m.relu > RELU_MARGIN {
            return Ok((params, batch));
        }
    }
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { points: 0, max_rel_channel: 0.0, max_rel_classifier: 0.0 };
    for point in 0..cfg.points as u64 {
        let p = problem(cfg, point)?;
        let mut rng = RngStream::new(cfg.seed, 0x67_63).derive(&[point]);
        let (params, batch) = off_boundary(cfg, &p, &mut rng)?;
        let (_, grad) = loss_and_gradients(&p.set, &batch, &params, cfg.smoothness, cfg.fault)?;
        let mut probe = params.clone();
        let mut failure = None;
        let fd = finite_diff_grad(
            |x| {
                if let Err(e) = probe.unflatten(x) {
                    failure.get_or_insert(e);
                    return f64::NAN;
                }
                loss(&p.set, &batch, &probe, cfg.smoothness).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    f64::NAN
                })
            },
            &params.flatten(),
            FD_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let an = grad.flatten();
        let nw = params.num_channel_params();
        report.max_rel_channel = report.max_rel_channel.max(relative_error(&an[..nw], &fd[..nw]));
        report.max_rel_classifier = report.max_rel_classifier.max(relative_error(&an[nw..], &fd[nw..]));
        report.points += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0, 0.0], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!((relative_error(&[200.0, 0.0], &[100.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn clean_gradients_pass_and_faults_fail() {
        let cfg = GradCheckConfig { points: 4, seed: 3, ..GradCheckConfig::default() };
        let good = run_gradcheck(&cfg).unwrap();
        assert_eq!(good.points, 4);
        assert!(good.passed(1e-5), "{good:?}");
        for fault in [GradientFault::ScaleChannel(1.01), GradientFault::OffsetClassifier(1e-3)] {
            let bad = run_gradcheck(&GradCheckConfig { fault, ..cfg.clone() }).unwrap();
            assert!(!bad.passed(1e-5), "{fault:?}: {bad:?}");
        }
    }
}
