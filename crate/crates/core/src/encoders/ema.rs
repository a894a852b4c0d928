use serde::{Deserialize, Serialize};

use super::{EncoderError, Mlp, Result, ToyPair};

/// `shadow ← m·shadow + (1−m)·live`, elementwise.
pub fn ema_update(shadow: &mut [f64], live: &[f64], momentum: f64) -> Result<()> {
    if shadow.len() != live.len() {
        return Err(EncoderError::ShapeMismatch(format!("{} vs {} elements", shadow.len(), live.len())));
    }
    if momentum == 1.0 {
        return Ok(());
    }
    for (s, &l) in shadow.iter_mut().zip(live) {
        *s = momentum * *s + (1.0 - momentum) * l;
    }
    Ok(())
}

/// Moving-average copies of both encoders. The temperature is not averaged;
/// an EMA model always uses the live τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaShadow {
    pub image: Mlp,
    pub text: Mlp,
    pub momentum: f64,
}

impl EmaShadow {
    pub fn new(live: &ToyPair, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(EncoderError::Config(format!("momentum must lie in [0, 1], got {momentum}")));
        }
        Ok(EmaShadow { image: live.image.clone(), text: live.text.clone(), momentum })
    }

    pub fn update(&mut self, live: &ToyPair) -> Result<()> {
        let m = self.momentum;
        update_mlp(&mut self.image, &live.image, m, "image")?;
        update_mlp(&mut self.text, &live.text, m, "text")
    }

    /// Shadow encoders paired with the given log-temperature.
    pub fn to_pair(&self, log_tau: f64) -> ToyPair {
        ToyPair { image: self.image.clone(), text: self.text.clone(), log_tau }
    }
}

fn update_mlp(shadow: &mut Mlp, live: &Mlp, m: f64, which: &str) -> Result<()> {
    let pairs = [
        (shadow.w1.shape() == live.w1.shape(), "w1"),
        (shadow.b1.shape() == live.b1.shape(), "b1"),
        (shadow.w2.shape() == live.w2.shape(), "w2"),
    ];
    if let Some((_, name)) = pairs.iter().find(|(ok, _)| !ok) {
        return Err(EncoderError::ShapeMismatch(format!("{which}.{name}")));
    }
    shadow.w1.zip_mut_with(&live.w1, |s, &l| *s = m * *s + (1.0 - m) * l);
    shadow.b1.zip_mut_with(&live.b1, |s, &l| *s = m * *s + (1.0 - m) * l);
    shadow.w2.zip_mut_with(&live.w2, |s, &l| *s = m * *s + (1.0 - m) * l);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{make_toy_pair, ToyConfig};

    #[test]
    fn scalar_examples() {
        let mut s = [1.0];
        ema_update(&mut s, &[0.0], 0.98).unwrap();
        assert!((s[0] - 0.98).abs() < 1e-15);
        let mut s = [0.3, -2.0];
        ema_update(&mut s, &[5.0, 7.0], 1.0).unwrap();
        assert_eq!(s, [0.3, -2.0]);
        ema_update(&mut s, &[5.0, 7.0], 0.0).unwrap();
        assert_eq!(s, [5.0, 7.0]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(ema_update(&mut [1.0], &[1.0, 2.0], 0.5), Err(EncoderError::ShapeMismatch(_))));
        let cfg = ToyConfig { embed_dim: 3, image_dim: 4, text_dim: 4, hidden_dim: 5, temperature_init: 1.0 };
        let a = make_toy_pair(&cfg, 0).unwrap();
        let b = make_toy_pair(&ToyConfig { hidden_dim: 6, ..cfg }, 0).unwrap();
        let mut shadow = EmaShadow::new(&a, 0.5).unwrap();
        assert!(shadow.update(&b).is_err());
        assert!(EmaShadow::new(&a, 1.5).is_err());
    }

    #[test]
    fn shadow_moves_toward_live_and_leaves_live_alone() {
        let cfg = ToyConfig { embed_dim: 3, image_dim: 4, text_dim: 4, hidden_dim: 5, temperature_init: 1.0 };
        let init = make_toy_pair(&cfg, 1).unwrap();
        let live = make_toy_pair(&cfg, 2).unwrap();
        let before = live.clone();
        let mut shadow = EmaShadow::new(&init, 0.5).unwrap();
        shadow.update(&live).unwrap();
        assert_eq!(live, before);
        let expect = 0.5 * init.image.w1[[0, 0]] + 0.5 * live.image.w1[[0, 0]];
        assert!((shadow.image.w1[[0, 0]] - expect).abs() < 1e-15);
    }
}
