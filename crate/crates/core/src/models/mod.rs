//! Bundled models with closed-form references.

pub mod channel;
pub mod reset;
pub mod webcrawl;

use crate::model::{ExtReal, ThresholdSpec};

pub use channel::ChannelParams;
pub use reset::ResetParams;
pub use webcrawl::WebCrawlParams;

/// Iterates `h_t(x)` of the passive affine map `h(x) = offset + rate * x`,
/// `0 < rate < 1`, which contracts toward `offset / (1 - rate)`.
///
/// Iterates are computed by applying the map step by step, exactly as the
/// model kernel does, so a threshold sitting on a ladder point is classified
/// the same way here and in the numeric engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateLadder {
    pub offset: f64,
    pub rate: f64,
}

/// Safety stop for the hitting-time search; far beyond the point where the
/// ladder has collapsed onto its fixed point in double precision.
const MAX_STEPS: usize = 100_000;

impl IterateLadder {
    pub fn fixed_point(&self) -> f64 {
        self.offset / (1.0 - self.rate)
    }

    #[inline]
    pub fn step(&self, x: f64) -> f64 {
        self.offset + self.rate * x
    }

    pub fn at(&self, x: f64, t: usize) -> f64 {
        let mut y = x;
        for _ in 0..t {
            let next = self.step(y);
            if next == y {
                break;
            }
            y = next;
        }
        y
    }

    /// Backward iterate `h_{-t}(z)` (closed form).
    pub fn back(&self, z: f64, t: usize) -> f64 {
        let fp = self.fixed_point();
        fp - (fp - z) * self.rate.powi(-(t as i32))
    }

    /// Hitting time `min{t >= 0 : h_t(x) in active region}`, `None` if the
    /// ladder settles on its floating-point fixed point first.
    pub fn tau(&self, x: f64, policy: &ThresholdSpec) -> Option<usize> {
        if policy.is_active(x) {
            return Some(0);
        }
        match policy.z {
            ExtReal::NegInf => return Some(0),
            ExtReal::PosInf => return None,
            ExtReal::Finite(_) => {}
        }
        let mut y = x;
        for t in 1..=MAX_STEPS {
            let next = self.step(y);
            if policy.is_active(next) {
                return Some(t);
            }
            if next == y {
                return None;
            }
            y = next;
        }
        None
    }
}
