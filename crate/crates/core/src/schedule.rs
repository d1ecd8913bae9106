//! Learning-rate schedules `η_t`, indexed from `t = 1`.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup to `peak`, hold, then exponential decay to `peak * final_scale`.
    TriStage {
        peak: f64,
        warmup: u64,
        hold: u64,
        decay: u64,
        final_scale: f64,
    },
    /// Linear warmup then `peak * sqrt(warmup / t)`.
    InverseSqrt { peak: f64, warmup: u64 },
    /// Half-cosine from `peak` to `min` over `horizon` steps.
    Cosine { peak: f64, min: f64, horizon: u64 },
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        let t = t.max(1);
        match *self {
            LrSchedule::Constant(eta) => eta,
            LrSchedule::TriStage {
                peak,
                warmup,
                hold,
                decay,
                final_scale,
            } => {
                if t <= warmup {
                    peak * t as f64 / warmup as f64
                } else if t <= warmup + hold {
                    peak
                } else if decay == 0 {
                    peak * final_scale
                } else {
                    let frac = ((t - warmup - hold) as f64 / decay as f64).min(1.0);
                    peak * final_scale.powf(frac)
                }
            }
            LrSchedule::InverseSqrt { peak, warmup } => {
                if warmup == 0 {
                    peak / (t as f64).sqrt()
                } else if t <= warmup {
                    peak * t as f64 / warmup as f64
                } else {
                    peak * (warmup as f64 / t as f64).sqrt()
                }
            }
            LrSchedule::Cosine { peak, min, horizon } => {
                let frac = (t as f64 / horizon.max(1) as f64).min(1.0);
                min + 0.5 * (peak - min) * (1.0 + (PI * frac).cos())
            }
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant(1e-3)
    }
}
