//! Time-domain, spectral and combined training losses.
//!
//! The spectral loss compares `|Re| + |Im|` of the clean and enhanced STFT
//! bin by bin and averages the absolute difference over frames and bins.

use super::stft::StftSpec;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{ensure_shape, Error, Result};
use crate::tensor::{Real, Tensor};

/// Scalar loss nodes of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub frequency: Var,
    pub time: Var,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("{alpha} outside [0, 1]")));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// Mean over the batch, frames and bins of
    /// `| (|X_r| + |X_i|) - (|Y_r| + |Y_i|) |` for `[B, L]` signals.
    pub fn frequency_loss(&mut self, clean: Var, enhanced: Var, spec: StftSpec) -> Result<Var> {
        ensure_shape!(
            self.shape(clean) == self.shape(enhanced),
            "loss inputs differ in shape: {:?} vs {:?}",
            self.shape(clean),
            self.shape(enhanced)
        );
        let magnitude = |g: &mut Self, x: Var| -> Result<Var> {
            let s = g.stft(x, spec)?;
            let s = g.abs(s);
            let re = g.narrow(s, 3, 0, 1)?;
            let im = g.narrow(s, 3, 1, 1)?;
            g.add(re, im)
        };
        let a = magnitude(self, clean)?;
        let b = magnitude(self, enhanced)?;
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean(d))
    }

    /// Mean squared error.
    pub fn time_loss(&mut self, clean: Var, enhanced: Var) -> Result<Var> {
        let d = self.sub(clean, enhanced)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// `alpha * frequency + (1 - alpha) * time`.
    pub fn combined_loss(&mut self, clean: Var, enhanced: Var, spec: StftSpec, alpha: f64) -> Result<LossVars> {
        check_alpha(alpha)?;
        let frequency = self.frequency_loss(clean, enhanced, spec)?;
        let time = self.time_loss(clean, enhanced)?;
        let f = self.scale(frequency, T::lit(alpha));
        let t = self.scale(time, T::lit(1.0 - alpha));
        let total = self.add(f, t)?;
        Ok(LossVars { total, frequency, time })
    }
}

fn with_pair<T: Real>(clean: &[T], enhanced: &[T], f: impl FnOnce(&mut Graph<T>, Var, Var) -> Result<Var>) -> Result<T> {
    ensure_shape!(
        clean.len() == enhanced.len(),
        "length mismatch: {} vs {}",
        clean.len(),
        enhanced.len()
    );
    ensure_shape!(!clean.is_empty(), "empty signals");
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let shape = [1, clean.len()];
    let c = g.constant(Tensor::new(&shape, clean.to_vec())?);
    let e = g.constant(Tensor::new(&shape, enhanced.to_vec())?);
    let out = f(&mut g, c, e)?;
    Ok(g.value(out).item())
}

pub fn loss_frequency<T: Real>(clean: &[T], enhanced: &[T], spec: &StftSpec) -> Result<T> {
    let spec = *spec;
    with_pair(clean, enhanced, |g, c, e| g.frequency_loss(c, e, spec))
}

pub fn loss_time<T: Real>(clean: &[T], enhanced: &[T]) -> Result<T> {
    with_pair(clean, enhanced, |g, c, e| g.time_loss(c, e))
}

pub fn loss_combined<T: Real>(clean: &[T], enhanced: &[T], spec: &StftSpec, alpha: f64) -> Result<T> {
    let spec = *spec;
    with_pair(clean, enhanced, |g, c, e| Ok(g.combined_loss(c, e, spec, alpha)?.total))
}

/// Combines already computed component losses.
pub fn combine(loss_f: f64, loss_t: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * loss_f + (1.0 - alpha) * loss_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, random_tensor};
    use crate::training::stft::Window;

    #[test]
    fn time_loss_arithmetic() {
        assert_eq!(loss_time(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss_time(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(loss_time(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert!(matches!(loss_time(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn combination_arithmetic() {
        for a in [0.0, 0.2, 0.7, 1.0] {
            assert!((combine(1.0, 1.0, a).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((combine(2.0, 0.0, 0.2).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(combine(5.0, 3.0, 0.0).unwrap(), 3.0);
        assert!(matches!(combine(1.0, 1.0, 1.2), Err(Error::Config { .. })));
    }

    #[test]
    fn rectangular_single_frame_by_hand() {
        // x = [1, 0, 0, 0] -> X = [1, 1, 1]; y = [0, 1, 0, 0] -> Y = [1, -i, -1]
        // |Re|+|Im|: [1, 1, 1] vs [1, 1, 1] -> 0
        // z = [1, 1, 0, 0] -> Z = [2, 1 - i, 0] -> [2, 2, 0]; vs x: |1-2| + |1-2| + |1-0| = 3 over 3 bins
        let spec = StftSpec {
            fft_size: 4,
            hop: 4,
            window: Window::Rectangular,
        };
        let x = [1.0f64, 0.0, 0.0, 0.0];
        assert!(loss_frequency(&x, &[0.0, 1.0, 0.0, 0.0], &spec).unwrap().abs() < 1e-15);
        assert!((loss_frequency(&x, &[1.0, 1.0, 0.0, 0.0], &spec).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frequency_loss_is_nonnegative_and_zero_on_equal() {
        let spec = StftSpec::new(16, 8).unwrap();
        let a = random_tensor(&[50], 1).into_data();
        let b = random_tensor(&[50], 2).into_data();
        assert_eq!(loss_frequency(&a, &a, &spec).unwrap(), 0.0);
        assert!(loss_frequency(&a, &b, &spec).unwrap() > 0.0);
    }

    #[test]
    fn gradcheck_combined_loss() {
        let c = random_tensor(&[2, 19], 3);
        let e = random_tensor(&[2, 19], 4);
        let spec = StftSpec::new(8, 4).unwrap();
        let r = check_inputs("combined_loss", &[c, e], |g, v| Ok(g.combined_loss(v[0], v[1], spec, 0.2)?.total)).unwrap();
        assert!(r.passed(), "{r}");
    }
}
