use super::{Interaction, Medium};
use crate::math::{Ray, Vec3};
use crate::rng::{uniform, Rng};
use crate::{Error, Result};

impl Medium {
    /// Woodcock tracking: samples the first real collision along `ray`, or
    /// `None` if the ray leaves `[t_min, t_max]` (or the unit cube) first.
    pub fn delta_track(&self, ray: &Ray, rng: &mut Rng) -> Result<Option<Interaction>> {
        ray.validate()?;
        Ok(self.delta_track_unchecked(ray, rng))
    }

    pub(crate) fn delta_track_unchecked(&self, ray: &Ray, rng: &mut Rng) -> Option<Interaction> {
        let sigma_max = self.sigma_max();
        if sigma_max <= 0.0 {
            return None;
        }
        let (mut t, t_end) = self.world_box().clip(ray)?;
        loop {
            t -= (1.0 - uniform(rng)).ln() / sigma_max;
            if t >= t_end {
                return None;
            }
            let position = ray.at(t);
            let (scalar, rgba) = self.classify(position);
            let sigma = self.density_scale() * rgba[3];
            if uniform(rng) * sigma_max < sigma {
                return Some(Interaction {
                    position,
                    scalar,
                    rgba,
                });
            }
        }
    }

    /// Fraction of `n_trials` delta-tracking flights from `a` that reach `b`
    /// without a real collision.
    pub fn transmittance(&self, a: Vec3, b: Vec3, rng: &mut Rng, n_trials: usize) -> Result<f64> {
        if n_trials == 0 {
            return Err(Error::input("transmittance needs at least one trial"));
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::input("non-finite segment endpoints"));
        }
        if (b - a).length() == 0.0 {
            return Ok(1.0);
        }
        let ray = Ray::segment(a, b);
        if self.world_box().clip(&ray).is_none() || self.sigma_max() <= 0.0 {
            return Ok(1.0);
        }
        let passed = (0..n_trials)
            .filter(|_| self.delta_track_unchecked(&ray, rng).is_none())
            .count();
        Ok(passed as f64 / n_trials as f64)
    }

    /// Ratio-tracking transmittance estimate from `a` to `b`: same tentative
    /// collisions as delta tracking, but each one multiplies the estimate by
    /// the null-collision probability instead of terminating.
    pub fn ratio_transmittance(&self, a: Vec3, b: Vec3, rng: &mut Rng) -> f64 {
        let len = (b - a).length();
        if len == 0.0 || self.sigma_max() <= 0.0 {
            return 1.0;
        }
        let ray = Ray::segment(a, b);
        let Some((mut t, t_end)) = self.world_box().clip(&ray) else {
            return 1.0;
        };
        let sigma_max = self.sigma_max();
        let mut tr = 1.0;
        loop {
            t -= (1.0 - uniform(rng)).ln() / sigma_max;
            if t >= t_end {
                return tr;
            }
            tr *= 1.0 - self.extinction(ray.at(t)) / sigma_max;
            if tr <= 0.0 {
                return 0.0;
            }
        }
    }
}
