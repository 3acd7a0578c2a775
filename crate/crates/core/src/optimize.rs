//! Derivative-free intensity optimizer: coordinate grid descent over a box,
//! halving each coordinate's step after a sweep that found no improvement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::predict_skr;
use crate::model::{ChannelModel, DetectorModel, ModelError, ProtocolParams};

/// Closed interval for one search coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    fn width(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub mu1: Range,
    pub mu2: Range,
    /// Probability of sending mu1; mu2 takes the rest after `p_mu[2]`.
    pub p_mu1: Range,
    pub p_z_alice: Range,
    pub p_z_bob: Range,
    /// Grid points per coordinate per sweep.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Number of step halvings before stopping.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    /// Reconciliation inefficiency used by the objective.
    #[serde(default = "default_f_ec")]
    pub f_ec: f64,
}

fn default_points() -> usize {
    9
}

fn default_refinements() -> usize {
    8
}

fn default_f_ec() -> f64 {
    crate::finite_key::DEFAULT_F_EC
}

impl SearchSpec {
    /// Box that only moves the intensities and their probabilities.
    pub fn intensities_only(template: &ProtocolParams) -> Self {
        Self {
            mu1: Range { min: 0.05, max: 1.0 },
            mu2: Range { min: 0.01, max: 0.6 },
            p_mu1: Range { min: 0.05, max: 0.95 },
            p_z_alice: Range::fixed(template.p_z_alice),
            p_z_bob: Range::fixed(template.p_z_bob),
            points: default_points(),
            refinements: default_refinements(),
            f_ec: default_f_ec(),
        }
    }

    fn ranges(&self) -> [Range; 5] {
        [self.mu1, self.mu2, self.p_mu1, self.p_z_alice, self.p_z_bob]
    }

    fn validate(&self) -> Result<(), ModelError> {
        for (name, r) in ["mu1", "mu2", "p_mu1", "p_z_alice", "p_z_bob"].iter().zip(self.ranges()) {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(ModelError::InvalidParameters(format!(
                    "search range for {name} is empty: [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        if self.mu1.max <= self.mu2.min || self.mu2.max < 0.0 {
            return Err(ModelError::InvalidParameters(
                "search box has no point with mu1 > mu2 >= 0".into(),
            ));
        }
        if self.points < 2 {
            return Err(ModelError::InvalidParameters("points must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub params: ProtocolParams,
    pub skr: f64,
    pub evaluations: usize,
}

type Point = [f64; 5];

fn apply(template: &ProtocolParams, x: &Point) -> ProtocolParams {
    let mut p = template.clone();
    p.mu1 = x[0];
    p.mu2 = x[1];
    p.p_mu = [x[2], (1.0 - x[2] - template.p_mu[2]).max(0.0), template.p_mu[2]];
    p.p_z_alice = x[3];
    p.p_z_bob = x[4];
    p
}

fn feasible(x: &Point) -> bool {
    x[0] > x[1] && x[1] >= 0.0
}

/// Maximizes the predicted SKR over the box, starting from the template.
pub fn optimize_intensities(
    template: &ProtocolParams,
    channel: &ChannelModel,
    detector_z: &DetectorModel,
    detector_x: &DetectorModel,
    spec: &SearchSpec,
) -> Result<Optimum, ModelError> {
    spec.validate()?;
    let ranges = spec.ranges();
    let objective = |x: &Point| -> f64 {
        if !feasible(x) {
            return f64::NEG_INFINITY;
        }
        predict_skr(&apply(template, x), channel, detector_z, detector_x, spec.f_ec).map_or(f64::NEG_INFINITY, |p| p.skr())
    };

    let mut x: Point = [
        ranges[0].clamp(template.mu1),
        ranges[1].clamp(template.mu2),
        ranges[2].clamp(template.p_mu[0]),
        ranges[3].clamp(template.p_z_alice),
        ranges[4].clamp(template.p_z_bob),
    ];
    if !feasible(&x) {
        x[0] = ranges[0].max;
        x[1] = ranges[1].min.max(0.0);
    }
    let mut best = objective(&x);
    let mut evaluations = 1;
    let mut steps: Vec<f64> = ranges.iter().map(|r| r.width() / (spec.points - 1) as f64).collect();

    for _ in 0..=spec.refinements {
        loop {
            let mut improved = false;
            for (d, range) in ranges.iter().enumerate() {
                if steps[d] <= 0.0 {
                    continue;
                }
                let half = (spec.points / 2) as f64;
                let candidates: Vec<Point> = (0..spec.points)
                    .map(|i| {
                        let mut c = x;
                        c[d] = range.clamp(x[d] + (i as f64 - half) * steps[d]);
                        c
                    })
                    .collect();
                let scores: Vec<f64> = candidates.par_iter().map(&objective).collect();
                evaluations += candidates.len();
                // Candidates ascend along the coordinate and only strict gains
                // are taken, so ties resolve to the smaller parameter value.
                for (c, s) in candidates.iter().zip(scores) {
                    if s > best {
                        best = s;
                        x = *c;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        for s in &mut steps {
            *s /= 2.0;
        }
    }

    if best == f64::NEG_INFINITY {
        return Err(ModelError::InvalidParameters(
            "no feasible point in the search box could be evaluated".into(),
        ));
    }
    Ok(Optimum {
        params: apply(template, &x),
        skr: best.max(0.0),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::predict_skr;
    use crate::model::DetectorMode;

    fn setup() -> (ProtocolParams, ChannelModel, DetectorModel) {
        let params = ProtocolParams {
            block_size_nz: 1_000_000_000,
            ..Default::default()
        };
        let det = DetectorModel {
            name: "t".into(),
            efficiency: 0.2,
            dark_rate: 1e4,
            mode: DetectorMode::Gated,
            gate_rate: 119e6,
            gate_on_window: 1e-9,
            holdoff_time: 1e-6,
            afterpulse_amplitude: 0.0,
            afterpulse_tau: 1e-6,
            timing_error: 0.01,
        };
        (params, ChannelModel::default().with_loss(10.0), det)
    }

    #[test]
    fn singleton_box_returns_its_point() {
        let (p, ch, d) = setup();
        let spec = SearchSpec {
            mu1: Range::fixed(0.46),
            mu2: Range::fixed(0.16),
            p_mu1: Range::fixed(0.6),
            p_z_alice: Range::fixed(0.5),
            p_z_bob: Range::fixed(0.5),
            points: 5,
            refinements: 2,
            f_ec: 1.16,
        };
        let o = optimize_intensities(&p, &ch, &d, &d, &spec).unwrap();
        assert_eq!((o.params.mu1, o.params.mu2, o.params.p_mu[0]), (0.46, 0.16, 0.6));
    }

    #[test]
    fn optimum_dominates_the_template() {
        let (p, ch, d) = setup();
        let spec = SearchSpec::intensities_only(&p);
        let o = optimize_intensities(&p, &ch, &d, &d, &spec).unwrap();
        let base = predict_skr(&p, &ch, &d, &d, 1.16).unwrap().skr();
        assert!(o.skr >= base);
        assert!(o.params.mu1 > o.params.mu2 && o.params.mu2 >= 0.0);
    }

    #[test]
    fn infeasible_box_is_rejected() {
        let (p, ch, d) = setup();
        let mut spec = SearchSpec::intensities_only(&p);
        spec.mu1 = Range { min: 0.1, max: 0.2 };
        spec.mu2 = Range { min: 0.3, max: 0.5 };
        assert!(optimize_intensities(&p, &ch, &d, &d, &spec).is_err());
    }

    #[test]
    fn finer_grid_changes_little() {
        let (p, ch, d) = setup();
        let coarse = SearchSpec::intensities_only(&p);
        let fine = SearchSpec {
            points: 2 * coarse.points - 1,
            ..coarse.clone()
        };
        let a = optimize_intensities(&p, &ch, &d, &d, &coarse).unwrap().skr;
        let b = optimize_intensities(&p, &ch, &d, &d, &fine).unwrap().skr;
        assert!((a - b).abs() / b < 0.02, "{a} vs {b}");
    }
}
