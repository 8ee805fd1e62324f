//! Feature connectors from the geometry transformer's latent pyramid to the
//! policy's token space.
//!
//! All variants concatenate the stereo grids along the width axis, so the
//! token at `(row, col)` of view `v` lands at index `row·2W' + v·W' + col`
//! where `W'` is the grid width. Every connector is a per-token map: there is
//! no mixing across spatial positions.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotrans::LatentPyramid;
use crate::nn::{LayerNorm, Linear, Mlp, ParamStore};

pub const PYRAMID_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectorVariant {
    /// Multi-level: per-level projection, feature concatenation, MLP.
    Msfc,
    /// Last tapped level only, through an MLP.
    Lfc,
    /// Separate per-level projections, routed to different policy blocks.
    Msc,
}

impl std::str::FromStr for ConnectorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msfc" => Ok(Self::Msfc),
            "lfc" => Ok(Self::Lfc),
            "msc" => Ok(Self::Msc),
            other => Err(Error::Config(format!("unknown connector variant {other:?} (msfc, lfc, msc)"))),
        }
    }
}

impl std::fmt::Display for ConnectorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Msfc => "msfc",
            Self::Lfc => "lfc",
            Self::Msc => "msc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectorConfig {
    pub variant: ConnectorVariant,
    /// Reduced per-level width for MSFC; 0 means `policy_width / 4`.
    pub d_low: usize,
    /// Hidden width of the alignment MLP; 0 means `policy_width`.
    pub hidden: usize,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        Self {
            variant: ConnectorVariant::Msfc,
            d_low: 0,
            hidden: 0,
        }
    }
}

/// Level serving policy block `block` under MSC routing: `block mod 4`.
pub fn msc_level_for_block(block: usize) -> usize {
    block % PYRAMID_LEVELS
}

/// Connector output: one token set, or one per pyramid level for MSC.
/// Each set is `[B, 2·N, policy_width]`.
#[derive(Debug, Clone)]
pub struct SpatialTokens {
    pub variant: ConnectorVariant,
    pub sets: Vec<Tensor>,
}

impl SpatialTokens {
    /// Tokens attended by policy block `block`.
    pub fn for_block(&self, block: usize) -> &Tensor {
        match self.variant {
            ConnectorVariant::Msc => &self.sets[msc_level_for_block(block)],
            _ => &self.sets[0],
        }
    }
}

/// `[B, N, D]` per view (row-major `rows × cols` grids) → `[B, rows·2cols, D]`.
pub fn concat_stereo(left: &Tensor, right: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (b, n, d) = left.dims3()?;
    if n != rows * cols || right.dims3()? != (b, n, d) {
        return Err(Error::Shape(format!(
            "stereo grids {:?} / {:?} do not match {rows}x{cols}",
            left.dims(),
            right.dims()
        )));
    }
    let l = left.reshape((b, rows, cols, d))?;
    let r = right.reshape((b, rows, cols, d))?;
    Ok(Tensor::cat(&[&l, &r], 2)?.reshape((b, rows * 2 * cols, d))?)
}

enum Body {
    Msfc {
        norms: Vec<LayerNorm>,
        projections: Vec<Linear>,
        mlp: Mlp,
    },
    Lfc {
        norm: LayerNorm,
        mlp: Mlp,
    },
    Msc {
        norms: Vec<LayerNorm>,
        projections: Vec<Linear>,
    },
}

pub struct Connector {
    pub variant: ConnectorVariant,
    pub policy_width: usize,
    grid: (usize, usize),
    body: Body,
}

impl Connector {
    pub fn new(
        ps: &mut ParamStore,
        config: &ConnectorConfig,
        geo_width: usize,
        policy_width: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        let d_low = if config.d_low == 0 { policy_width / 4 } else { config.d_low };
        let hidden = if config.hidden == 0 { policy_width } else { config.hidden };
        if d_low == 0 || hidden == 0 || policy_width == 0 {
            return Err(Error::Config("connector widths must be positive".into()));
        }
        let body = match config.variant {
            ConnectorVariant::Msfc => Body::Msfc {
                norms: (0..PYRAMID_LEVELS)
                    .map(|l| LayerNorm::new(ps, &format!("connector.level{l}.ln"), geo_width))
                    .collect::<Result<_>>()?,
                projections: (0..PYRAMID_LEVELS)
                    .map(|l| Linear::new(ps, &format!("connector.level{l}.proj"), geo_width, d_low))
                    .collect::<Result<_>>()?,
                mlp: Mlp::new(ps, "connector.mlp", PYRAMID_LEVELS * d_low, hidden, policy_width)?,
            },
            ConnectorVariant::Lfc => Body::Lfc {
                norm: LayerNorm::new(ps, "connector.ln", geo_width)?,
                mlp: Mlp::new(ps, "connector.mlp", geo_width, hidden, policy_width)?,
            },
            ConnectorVariant::Msc => Body::Msc {
                norms: (0..PYRAMID_LEVELS)
                    .map(|l| LayerNorm::new(ps, &format!("connector.level{l}.ln"), geo_width))
                    .collect::<Result<_>>()?,
                projections: (0..PYRAMID_LEVELS)
                    .map(|l| Linear::new(ps, &format!("connector.level{l}.proj"), geo_width, policy_width))
                    .collect::<Result<_>>()?,
            },
        };
        Ok(Self {
            variant: config.variant,
            policy_width,
            grid,
            body,
        })
    }

    fn stereo(&self, level: &[Tensor; 2]) -> Result<Tensor> {
        concat_stereo(&level[0], &level[1], self.grid.0, self.grid.1)
    }

    pub fn forward(&self, pyramid: &LatentPyramid) -> Result<SpatialTokens> {
        if pyramid.levels.len() != PYRAMID_LEVELS {
            return Err(Error::Shape(format!(
                "pyramid has {} levels, expected {PYRAMID_LEVELS}",
                pyramid.levels.len()
            )));
        }
        let sets = match &self.body {
            Body::Msfc {
                norms,
                projections,
                mlp,
            } => {
                let parts = pyramid
                    .levels
                    .iter()
                    .enumerate()
                    .map(|(l, lv)| projections[l].forward(&norms[l].forward(&self.stereo(lv)?)?))
                    .collect::<Result<Vec<_>>>()?;
                vec![mlp.forward(&Tensor::cat(&parts, 2)?)?]
            }
            Body::Lfc { norm, mlp } => {
                vec![mlp.forward(&norm.forward(&self.stereo(&pyramid.levels[PYRAMID_LEVELS - 1])?)?)?]
            }
            Body::Msc { norms, projections } => pyramid
                .levels
                .iter()
                .enumerate()
                .map(|(l, lv)| projections[l].forward(&norms[l].forward(&self.stereo(lv)?)?))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(SpatialTokens {
            variant: self.variant,
            sets,
        })
    }
}

#[cfg(test)]
mod tests;
