use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the geometry transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Square patch edge in pixels; a power of two.
    pub patch_size: usize,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub encoder_heads: usize,
    pub decoder_depth: usize,
    pub decoder_width: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: usize,
    /// 1-based decoder block indices whose outputs form the latent pyramid.
    pub pyramid_taps: [usize; 4],
    pub head_channels: usize,
    /// Weight of the `−log C` confidence regularizer.
    pub alpha: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            image_height: 96,
            image_width: 96,
            patch_size: 8,
            encoder_depth: 6,
            encoder_width: 192,
            encoder_heads: 3,
            decoder_depth: 6,
            decoder_width: 192,
            decoder_heads: 3,
            mlp_ratio: 4,
            pyramid_taps: [2, 3, 4, 6],
            head_channels: 32,
            alpha: 0.2,
        }
    }
}

impl GeoConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn tokens_per_view(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("geotrans: {msg}")));
        let p = self.patch_size;
        if p < 2 || !p.is_power_of_two() {
            return bad(format!("patch_size {p} must be a power of two >= 2"));
        }
        if self.image_height == 0 || self.image_width == 0 || self.image_height % p != 0 || self.image_width % p != 0 {
            return bad(format!(
                "image {}x{} not divisible by patch_size {p}",
                self.image_height, self.image_width
            ));
        }
        for (name, width, heads, depth) in [
            ("encoder", self.encoder_width, self.encoder_heads, self.encoder_depth),
            ("decoder", self.decoder_width, self.decoder_heads, self.decoder_depth),
        ] {
            if depth == 0 || heads == 0 || width == 0 || width % heads != 0 {
                return bad(format!("{name} depth {depth}, width {width}, heads {heads} invalid"));
            }
        }
        if self.encoder_width % 4 != 0 {
            return bad("encoder_width must be divisible by 4 for 2-D positional encodings".into());
        }
        let t = self.pyramid_taps;
        if t[0] == 0 || t.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("pyramid_taps {t:?} must be strictly increasing and 1-based"));
        }
        if t[3] != self.decoder_depth {
            return bad(format!("last tap {} must equal decoder_depth {}", t[3], self.decoder_depth));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if self.mlp_ratio == 0 || self.head_channels == 0 {
            return bad("mlp_ratio and head_channels must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = GeoConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens_per_view(), 144);
    }

    #[test]
    fn invariants_enforced() {
        let base = GeoConfig::default();
        for c in [
            GeoConfig { image_width: 100, ..base.clone() },
            GeoConfig { pyramid_taps: [2, 2, 4, 6], ..base.clone() },
            GeoConfig { pyramid_taps: [1, 2, 3, 5], ..base.clone() },
            GeoConfig { alpha: 0.0, ..base.clone() },
            GeoConfig { patch_size: 6, image_height: 96, ..base.clone() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
