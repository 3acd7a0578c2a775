//! One-decoy finite-key bounds and the secret key length.
//!
//! The decoy estimators follow Lim, Curty, Walenta, Xu and Zbinden,
//! "Concise security bounds for practical decoy-state quantum key
//! distribution", PRA 89, 022307 (2014), specialised to two non-zero
//! intensities as in Rusca et al., APL 112, 171104 (2018). Statistical
//! fluctuations use the Hoeffding deviation `sqrt(n ln(1/eps) / 2)`.
//!
//! The phase-error correction is the random-sampling term of Lim et al.:
//!
//! ```text
//! gamma(a, b, c, d) = sqrt( (c+d)(1-b)b / (c d ln 2) * log2( (c+d) / (c d (1-b) b a^2) ) )
//! ```
//!
//! evaluated at `a = eps_sec / 19`, `b = v_x1 / s_x1`, `c = s_z1`, `d = s_x1`.

use serde::{Deserialize, Serialize};

use crate::model::{
    binary_entropy, epsilon_budget, poisson_pmf, Basis, Intensity, ModelError, ProtocolParams,
    SecretKeyReport, TallyCounts,
};

/// Default reconciliation inefficiency used for the error-correction charge.
pub const DEFAULT_F_EC: f64 = 1.16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub s_z0_lower: f64,
    pub s_z0_upper: f64,
    pub s_z1_lower: f64,
    pub s_x1_lower: f64,
    pub v_x1_upper: f64,
    pub phi_z_upper: f64,
}

impl DecoyBounds {
    pub fn vacuous() -> Self {
        Self {
            s_z0_lower: 0.0,
            s_z0_upper: 0.0,
            s_z1_lower: 0.0,
            s_x1_lower: 0.0,
            v_x1_upper: 0.0,
            phi_z_upper: 0.5,
        }
    }
}

/// Hoeffding deviation for a sum of `total` bounded trials.
pub fn hoeffding_delta(total: f64, eps: f64) -> Result<f64, ModelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::Domain {
            name: "eps",
            value: eps,
            domain: "(0, 1)",
        });
    }
    if !(total.is_finite() && total >= 0.0) {
        return Err(ModelError::Domain {
            name: "total",
            value: total,
            domain: "[0, inf)",
        });
    }
    Ok((total * (1.0 / eps).ln() / 2.0).sqrt())
}

/// Probability that a pulse carries `n` photons, averaged over intensities.
fn tau(params: &ProtocolParams, n: u32) -> f64 {
    Intensity::ALL
        .iter()
        .map(|&k| params.p_mu[k.index()] * poisson_pmf(params.intensity(k), n))
        .sum()
}

/// Finite-size correction for estimating one basis's phase error from the
/// other basis's sample. Returns 0 where the expression is not defined.
pub fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if !(b > 0.0 && b < 1.0 && c > 0.0 && d > 0.0 && a > 0.0) {
        return 0.0;
    }
    let spread = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2);
    let arg = (c + d) / (c * d * (1.0 - b) * b * a * a);
    if arg <= 1.0 {
        return 0.0;
    }
    (spread * arg.log2()).sqrt()
}

struct Scaled {
    lower: [f64; 2],
    upper: [f64; 2],
}

/// `(e^mu_k / p_k)(count_k -/+ delta)` for the two non-zero intensities.
fn scaled(params: &ProtocolParams, counts: [u64; 2], delta: f64) -> Scaled {
    let mut lower = [0.0; 2];
    let mut upper = [0.0; 2];
    for (i, k) in [Intensity::Mu1, Intensity::Mu2].into_iter().enumerate() {
        let w = params.intensity(k).exp() / params.p_mu[k.index()];
        lower[i] = w * (counts[i] as f64 - delta);
        upper[i] = w * (counts[i] as f64 + delta);
    }
    Scaled { lower, upper }
}

struct BasisBounds {
    s0_lower: f64,
    s0_upper: f64,
    s1_lower: f64,
}

fn basis_bounds(tallies: &TallyCounts, params: &ProtocolParams, basis: Basis, eps: f64) -> Result<BasisBounds, ModelError> {
    let (mu1, mu2) = (params.mu1, params.mu2);
    let (tau0, tau1) = (tau(params, 0), tau(params, 1));
    let c = tallies.basis(basis);
    let n_b: u64 = c.iter().map(|x| x.detections).sum();
    let m_b: u64 = c.iter().map(|x| x.errors).sum();
    let n = scaled(params, [c[0].detections, c[1].detections], hoeffding_delta(n_b as f64, eps)?);
    let delta_m = hoeffding_delta(m_b as f64, eps)?;

    let s0_lower = (tau0 * (mu1 * n.lower[1] - mu2 * n.upper[0]) / (mu1 - mu2)).max(0.0);
    let s0_upper = [Intensity::Mu1, Intensity::Mu2]
        .into_iter()
        .map(|k| {
            let w = params.intensity(k).exp() / params.p_mu[k.index()];
            2.0 * tau0 * w * (c[k.index()].errors as f64 + delta_m)
        })
        .fold(f64::INFINITY, f64::min)
        .min(n_b as f64)
        .max(s0_lower);
    let s1_lower = (tau1 * mu1 / (mu2 * (mu1 - mu2))
        * (n.lower[1]
            - (mu2 * mu2 / (mu1 * mu1)) * n.upper[0]
            - ((mu1 * mu1 - mu2 * mu2) / (mu1 * mu1)) * s0_upper / tau0))
        .max(0.0);
    Ok(BasisBounds {
        s0_lower,
        s0_upper,
        s1_lower,
    })
}

/// Decoy bounds on vacuum and single-photon detections and on the phase
/// error of the Z-basis single-photon events.
pub fn decoy_bounds(tallies: &TallyCounts, params: &ProtocolParams, eps_per_test: f64) -> Result<DecoyBounds, ModelError> {
    let (mu1, mu2) = (params.mu1, params.mu2);
    if !(mu1 > mu2 && mu2 > 0.0) {
        return Err(ModelError::InvalidParameters(format!(
            "decoy bounds need mu1 > mu2 > 0, got mu1 = {mu1}, mu2 = {mu2}"
        )));
    }
    if !(params.p_mu[0] > 0.0 && params.p_mu[1] > 0.0) {
        return Err(ModelError::InvalidParameters(
            "decoy bounds need p_mu1 > 0 and p_mu2 > 0".into(),
        ));
    }
    tallies.validate()?;

    let z = basis_bounds(tallies, params, Basis::Z, eps_per_test)?;
    let x = basis_bounds(tallies, params, Basis::X, eps_per_test)?;

    let c = tallies.basis(Basis::X);
    let m = scaled(
        params,
        [c[0].errors, c[1].errors],
        hoeffding_delta(tallies.m_x() as f64, eps_per_test)?,
    );
    let tau1 = tau(params, 1);
    let v_x1_upper = (tau1 * (m.upper[0] - m.lower[1]) / (mu1 - mu2)).max(0.0);

    let phi_z_upper = if x.s1_lower <= 0.0 || z.s1_lower <= 0.0 {
        0.5
    } else {
        let ratio = v_x1_upper / x.s1_lower;
        let phi = ratio + gamma(eps_per_test, ratio, z.s1_lower, x.s1_lower);
        if phi.is_nan() {
            0.5
        } else {
            phi.clamp(0.0, 0.5)
        }
    };

    Ok(DecoyBounds {
        s_z0_lower: z.s0_lower,
        s_z0_upper: z.s0_upper,
        s_z1_lower: z.s1_lower,
        s_x1_lower: x.s1_lower,
        v_x1_upper,
        phi_z_upper,
    })
}

/// Extractable key length in bits:
/// `floor(s_z0 + s_z1 (1 - H2(phi)) - lambda_ec - 6 log2(19/eps_sec) - log2(2/eps_corr))`,
/// clamped at zero.
pub fn secret_key_length(bounds: &DecoyBounds, lambda_ec: f64, eps_sec: f64, eps_corr: f64) -> u64 {
    let phi = if bounds.phi_z_upper.is_nan() {
        0.5
    } else {
        bounds.phi_z_upper.clamp(0.0, 0.5)
    };
    let h = binary_entropy(phi).expect("phi is clamped into [0, 0.5]");
    let value = bounds.s_z0_lower + bounds.s_z1_lower * (1.0 - h)
        - lambda_ec
        - 6.0 * (crate::model::EPSILON_SPLIT / eps_sec).log2()
        - (2.0 / eps_corr).log2();
    if value.is_finite() && value > 0.0 {
        value.floor() as u64
    } else {
        0
    }
}

/// Bits charged for error correction: `f_ec * n * H2(q)`.
pub fn lambda_ec(n: u64, qber: f64, f_ec: f64) -> Result<f64, ModelError> {
    Ok(f_ec * n as f64 * binary_entropy(qber)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub bounds: DecoyBounds,
    pub report: SecretKeyReport,
}

/// Full finite-key evaluation of a set of tallies collected over
/// `elapsed_protocol_time` seconds.
pub fn analyze(
    tallies: &TallyCounts,
    params: &ProtocolParams,
    qber_z_for_ec: f64,
    f_ec: f64,
    elapsed_protocol_time: f64,
) -> Result<Analysis, ModelError> {
    let eps = epsilon_budget(params.eps_sec);
    let bounds = if tallies.n_z() == 0 && tallies.n_x() == 0 {
        tallies.validate()?;
        DecoyBounds::vacuous()
    } else {
        decoy_bounds(tallies, params, eps)?
    };
    let lambda = lambda_ec(tallies.n_z(), qber_z_for_ec, f_ec)?;
    let l = secret_key_length(&bounds, lambda, params.eps_sec, params.eps_corr);
    let skr = if elapsed_protocol_time > 0.0 {
        l as f64 / elapsed_protocol_time
    } else {
        0.0
    };
    Ok(Analysis {
        bounds,
        report: SecretKeyReport {
            s_z0_lower: bounds.s_z0_lower,
            s_z1_lower: bounds.s_z1_lower,
            phi_z_upper: bounds.phi_z_upper,
            lambda_ec: lambda,
            key_length_l: l,
            skr,
            elapsed_protocol_time,
        },
    })
}
