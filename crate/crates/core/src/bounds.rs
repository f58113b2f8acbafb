//! Closed-form performance bounds for CUSUM and KCUSUM.
//!
//! All functions are plain `f64` formulas. Inputs outside the region where a
//! bound is defined produce [`Error::Domain`].

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v < 0.0 {
        return Err(Error::domain(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    finite(name, v)?;
    if v <= 0.0 {
        return Err(Error::domain(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

/// Parameters shared by the bound formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub h: f64,
    pub delta: f64,
    /// Sup-norm of the kernel.
    pub k_inf: f64,
    /// Squared MMD between the pre- and post-change distributions.
    pub dk_sq: f64,
    /// `d_KL(p1, p0)` for the CUSUM delay bound.
    pub kl: f64,
    /// `E_1[((log f1/f0)^+)^2]`.
    pub second_moment: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        non_negative("h", self.h)?;
        non_negative("delta", self.delta)?;
        positive("k_inf", self.k_inf)?;
        non_negative("dk_sq", self.dk_sq)?;
        positive("kl", self.kl)?;
        non_negative("second_moment", self.second_moment)
    }
}

/// CUSUM worst-case delay bound `h / kl + second_moment / kl^2`.
pub fn cusum_esadd_bound(h: f64, kl: f64, second_moment: f64) -> Result<f64> {
    non_negative("h", h)?;
    positive("kl", kl)?;
    non_negative("second_moment", second_moment)?;
    Ok(h / kl + second_moment / (kl * kl))
}

/// CUSUM false-alarm guarantee `ARL2FA >= e^h`.
pub fn cusum_arl2fa_lower(h: f64) -> Result<f64> {
    non_negative("h", h)?;
    Ok(h.exp())
}

/// Chernoff rate `r = log(1 + delta / (4 k_inf)) / (4 k_inf)`.
pub fn kcusum_rate(delta: f64, k_inf: f64) -> Result<f64> {
    non_negative("delta", delta)?;
    positive("k_inf", k_inf)?;
    let c = 4.0 * k_inf;
    Ok((delta / c).ln_1p() / c)
}

/// KCUSUM false-alarm guarantee `ARL2FA >= 2 e^{h r}`.
pub fn kcusum_arl2fa_lower(h: f64, delta: f64, k_inf: f64) -> Result<f64> {
    non_negative("h", h)?;
    Ok(2.0 * (h * kcusum_rate(delta, k_inf)?).exp())
}

/// KCUSUM worst-case delay bound
/// `2h / (dk_sq - delta) + 8 k_inf^2 / (dk_sq - delta)^2`, defined only when
/// `dk_sq > delta`.
pub fn kcusum_esadd_upper(h: f64, delta: f64, k_inf: f64, dk_sq: f64) -> Result<f64> {
    non_negative("h", h)?;
    non_negative("delta", delta)?;
    positive("k_inf", k_inf)?;
    non_negative("dk_sq", dk_sq)?;
    let gap = dk_sq - delta;
    if gap <= 0.0 {
        return Err(Error::domain(format!(
            "dk_sq ({dk_sq}) must exceed delta ({delta}); the change is not detectable"
        )));
    }
    Ok(2.0 * h / gap + 8.0 * k_inf * k_inf / (gap * gap))
}

/// Mean exit time bound for a positive-drift random walk leaving `[a, b]`:
/// `((1 - alpha) b + a alpha) / mu + second_moment_plus / mu^2`, with
/// `alpha = P(S_T < a)`.
pub fn walk_exit_bound(mu: f64, second_moment_plus: f64, a: f64, b: f64, alpha: f64) -> Result<f64> {
    positive("mu", mu)?;
    non_negative("second_moment_plus", second_moment_plus)?;
    finite("a", a)?;
    finite("b", b)?;
    if a > 0.0 || b < 0.0 {
        return Err(Error::domain(format!("need a <= 0 <= b, got a={a} b={b}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(((1.0 - alpha) * b + a * alpha) / mu + second_moment_plus / (mu * mu))
}

/// `P(sup_n S_n > h) <= e^{-q h}` for a walk whose increments satisfy
/// `E[e^{q a}] <= 1`. The caller is responsible for that condition.
pub fn sup_crossing_bound(q: f64, h: f64) -> Result<f64> {
    positive("q", q)?;
    non_negative("h", h)?;
    Ok((-q * h).exp())
}

/// Smallest `h` with `kcusum_arl2fa_lower(h) >= target`; zero for
/// `target <= 2`.
pub fn smallest_h_for_arl2fa(target: f64, delta: f64, k_inf: f64) -> Result<f64> {
    finite("target", target)?;
    let r = kcusum_rate(delta, k_inf)?;
    if r <= 0.0 {
        return Err(Error::domain("rate is zero (delta = 0); no finite threshold reaches the target"));
    }
    if target <= 2.0 {
        return Ok(0.0);
    }
    Ok((target / 2.0).ln() / r)
}
