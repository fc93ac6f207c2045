//! UWB double-sided two-way ranging and planar multilateration.
//!
//! Timestamps are integer ticks of one yoctosecond (1e-24 s). Device clocks
//! carry large arbitrary offsets; holding them as floats would lose the
//! picosecond-scale differences the formula depends on. Integer ticks make
//! the four-term combination exact and leave one rounding, at the end.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const TICKS_PER_SECOND: f64 = 1e24;

pub type Ticks = i128;

pub fn seconds_to_ticks(s: f64) -> Ticks {
    (s * TICKS_PER_SECOND).round() as Ticks
}

pub fn ticks_to_seconds(t: Ticks) -> f64 {
    t as f64 / TICKS_PER_SECOND
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RangingError {
    #[error("timestamps out of order on the {0} clock")]
    Order(&'static str),
    #[error("negative time of flight {0} s")]
    NegativeTof(f64),
    #[error("distance must be finite and non-negative, got {0}")]
    BadDistance(f64),
}

/// One Poll/Response/Final exchange. `t_sp`, `t_rr`, `t_sf` are on the
/// initiator's clock; `t_rp`, `t_sr`, `t_rf` on the responder's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwrTimestamps {
    pub t_sp: Ticks,
    pub t_rp: Ticks,
    pub t_sr: Ticks,
    pub t_rr: Ticks,
    pub t_sf: Ticks,
    pub t_rf: Ticks,
}

impl TwrTimestamps {
    /// Order: `[t_sp, t_rp, t_sr, t_rr, t_sf, t_rf]`.
    pub fn from_seconds(s: [f64; 6]) -> Self {
        let t = s.map(seconds_to_ticks);
        TwrTimestamps { t_sp: t[0], t_rp: t[1], t_sr: t[2], t_rr: t[3], t_sf: t[4], t_rf: t[5] }
    }

    pub fn check_order(&self) -> Result<(), RangingError> {
        if !(self.t_sp < self.t_rr && self.t_rr < self.t_sf) {
            return Err(RangingError::Order("initiator"));
        }
        if !(self.t_rp < self.t_sr && self.t_sr < self.t_rf) {
            return Err(RangingError::Order("responder"));
        }
        Ok(())
    }

    /// `4·ToF` in ticks, exactly.
    pub fn four_tof_ticks(&self) -> Ticks {
        (self.t_rr - self.t_sp) - (self.t_sr - self.t_rp) + (self.t_rf - self.t_sr) - (self.t_sf - self.t_rr)
    }
}

/// `¼[(T_RR − T_SP) − (T_SR − T_RP) + (T_RF − T_SR) − (T_SF − T_RR)]`, seconds.
pub fn time_of_flight(ts: &TwrTimestamps) -> Result<f64, RangingError> {
    ts.check_order()?;
    Ok(ticks_to_seconds(ts.four_tof_ticks()) / 4.0)
}

pub fn distance(tof: f64) -> Result<f64, RangingError> {
    if tof < 0.0 || !tof.is_finite() {
        return Err(RangingError::NegativeTof(tof));
    }
    Ok(tof * SPEED_OF_LIGHT)
}

/// Responder turnaround and initiator reply times, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeDelays {
    pub responder_reply: f64,
    pub initiator_reply: f64,
}

impl Default for ExchangeDelays {
    fn default() -> Self {
        ExchangeDelays { responder_reply: 300e-6, initiator_reply: 300e-6 }
    }
}

/// Builds an exchange for a tag at `true_distance` metres. The responder
/// clock reads `clock_offset` seconds ahead of the initiator's. Each
/// timestamp then gets independent Gaussian jitter of `jitter_sd` seconds.
pub fn simulate_exchange<R: Rng + ?Sized>(
    true_distance: f64,
    delays: ExchangeDelays,
    clock_offset: f64,
    jitter_sd: f64,
    rng: &mut R,
) -> Result<TwrTimestamps, RangingError> {
    if !(true_distance >= 0.0 && true_distance.is_finite()) {
        return Err(RangingError::BadDistance(true_distance));
    }
    let tof = seconds_to_ticks(true_distance / SPEED_OF_LIGHT);
    let off = seconds_to_ticks(clock_offset);
    let r1 = seconds_to_ticks(delays.responder_reply);
    let r2 = seconds_to_ticks(delays.initiator_reply);
    let t_sp: Ticks = 0;
    let t_rp = t_sp + tof + off;
    let t_sr = t_rp + r1;
    let t_rr = t_sr - off + tof;
    let t_sf = t_rr + r2;
    let t_rf = t_sf + tof + off;
    let mut ts = TwrTimestamps { t_sp, t_rp, t_sr, t_rr, t_sf, t_rf };
    if jitter_sd > 0.0 {
        let n = Normal::new(0.0, jitter_sd).expect("positive sd");
        for t in [&mut ts.t_sp, &mut ts.t_rp, &mut ts.t_sr, &mut ts.t_rr, &mut ts.t_sf, &mut ts.t_rf] {
            *t += seconds_to_ticks(n.sample(rng));
        }
    }
    Ok(ts)
}

/// Standard deviation of the recovered distance when every timestamp has
/// independent jitter `sd`. In the order sp, rp, sr, rr, sf, rf the
/// timestamps enter with weights ¼·(−1, 1, −2, 2, −1, 1), so the ToF
/// variance is `¾ sd²`.
pub fn jitter_distance_sd(sd: f64) -> f64 {
    SPEED_OF_LIGHT * sd * 3f64.sqrt() / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: u32,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub anchor_id: u32,
    pub distance: f64,
    pub timestamp: u64,
}

/// Anchors at the corners of a `width × height` room.
pub fn corner_anchors(width: f64, height: f64) -> Vec<Anchor> {
    [[0.0, 0.0], [width, 0.0], [0.0, height], [width, height]]
        .into_iter()
        .enumerate()
        .map(|(i, position)| Anchor { id: i as u32, position })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fix {
    pub position: [f64; 2],
    pub rms_residual: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoFix {
    #[error("need at least 3 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("{anchors} anchors but {distances} distances")]
    Mismatch { anchors: usize, distances: usize },
    #[error("anchors are collinear")]
    Collinear,
    #[error("normal equations singular at iteration {0}")]
    Singular(u32),
    #[error("no convergence after {iterations} iterations (last step {last_step} m)")]
    NotConverged { iterations: u32, last_step: f64 },
    #[error("non-finite input")]
    NonFinite,
}

pub const MAX_ITERATIONS: u32 = 50;
pub const STEP_TOLERANCE: f64 = 1e-10;

pub fn rms_residual(anchors: &[Anchor], distances: &[f64], x: [f64; 2]) -> f64 {
    let ss: f64 = anchors
        .iter()
        .zip(distances)
        .map(|(a, d)| {
            let r = (x[0] - a.position[0]).hypot(x[1] - a.position[1]) - d;
            r * r
        })
        .sum();
    (ss / anchors.len() as f64).sqrt()
}

/// Least-squares position from anchor distances by Gauss–Newton, started
/// at the anchors' centroid.
pub fn multilaterate(anchors: &[Anchor], distances: &[f64]) -> Result<Fix, NoFix> {
    if anchors.len() != distances.len() {
        return Err(NoFix::Mismatch { anchors: anchors.len(), distances: distances.len() });
    }
    if anchors.len() < 3 {
        return Err(NoFix::TooFewAnchors(anchors.len()));
    }
    if anchors.iter().any(|a| !a.position.iter().all(|v| v.is_finite())) || distances.iter().any(|d| !d.is_finite()) {
        return Err(NoFix::NonFinite);
    }
    let n = anchors.len() as f64;
    let cx = anchors.iter().map(|a| a.position[0]).sum::<f64>() / n;
    let cy = anchors.iter().map(|a| a.position[1]).sum::<f64>() / n;

    // Collinear iff the anchor scatter matrix is rank one.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for a in anchors {
        let (dx, dy) = (a.position[0] - cx, a.position[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let trace = sxx + syy;
    if trace == 0.0 || (sxx * syy - sxy * sxy) <= 1e-12 * trace * trace {
        return Err(NoFix::Collinear);
    }

    let mut x = [cx, cy];
    let mut last_step = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, &d) in anchors.iter().zip(distances) {
            let (dx, dy) = (x[0] - a.position[0], x[1] - a.position[1]);
            let rho = dx.hypot(dy);
            if rho == 0.0 {
                continue;
            }
            let (jx, jy) = (dx / rho, dy / rho);
            let r = rho - d;
            a11 += jx * jx;
            a12 += jx * jy;
            a22 += jy * jy;
            b1 -= jx * r;
            b2 -= jy * r;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-300 {
            return Err(NoFix::Singular(it));
        }
        let sx = (a22 * b1 - a12 * b2) / det;
        let sy = (a11 * b2 - a12 * b1) / det;
        x = [x[0] + sx, x[1] + sy];
        last_step = sx.hypot(sy);
        if !last_step.is_finite() {
            return Err(NoFix::NotConverged { iterations: it, last_step });
        }
        if last_step < STEP_TOLERANCE {
            return Ok(Fix { position: x, rms_residual: rms_residual(anchors, distances, x), iterations: it });
        }
    }
    Err(NoFix::NotConverged { iterations: MAX_ITERATIONS, last_step })
}
