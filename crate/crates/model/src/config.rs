//! Generator and critic configurations with startup shape validation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Inputs are zero-padded (centered) to padded x padded before encoding;
    /// the head's center crop inverts this.
    pub padded: usize,
    /// Output channels of each encoder stage, shallow to deep.
    pub stage_channels: Vec<usize>,
    /// Lag window u: contexts carry (u+1) months of covariates and u lagged
    /// index maps.
    pub lag_u: usize,
    pub noise_dim: usize,
    pub embed_dim: usize,
    pub n_covariates: usize,
    pub dropout_rate: f32,
    pub leaky_slope: f32,
}

impl GeneratorConfig {
    pub fn paper() -> Self {
        Self {
            grid_h: 37,
            grid_w: 44,
            padded: 48,
            stage_channels: vec![64, 128, 256, 256, 256],
            lag_u: 8,
            noise_dim: 32,
            embed_dim: 5,
            n_covariates: 11,
            dropout_rate: 0.5,
            leaky_slope: 0.2,
        }
    }

    /// Desk-scale preset: trains in minutes on a laptop core.
    pub fn desk() -> Self {
        Self {
            grid_h: 16,
            grid_w: 16,
            padded: 16,
            stage_channels: vec![8, 16, 16],
            lag_u: 2,
            noise_dim: 8,
            embed_dim: 5,
            n_covariates: 3,
            dropout_rate: 0.3,
            leaky_slope: 0.2,
        }
    }

    pub fn n_stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Context channel count: (u+1) covariate windows + u index lags
    /// + time embedding + broadcast noise.
    pub fn input_channels(&self) -> usize {
        (self.lag_u + 1) * self.n_covariates + self.lag_u + self.embed_dim + self.noise_dim
    }

    /// Walk the stride arithmetic and derive the full stage plan; fails when
    /// a stage collapses or the decoder cannot realign with a skip extent.
    pub fn plan(&self) -> Result<StagePlan, ConfigError> {
        let n = self.n_stages();
        if n < 2 {
            return Err(invalid("at least two stages are required"));
        }
        if self.grid_h > self.padded || self.grid_w > self.padded {
            return Err(invalid(format!(
                "grid {}x{} exceeds padded extent {}",
                self.grid_h, self.grid_w, self.padded
            )));
        }
        if self.n_covariates == 0 || self.noise_dim == 0 || self.embed_dim == 0 {
            return Err(invalid(
                "covariate, noise and embedding dims must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!(
                "dropout rate {} out of [0,1)",
                self.dropout_rate
            )));
        }

        // Encoder: resblock at the incoming extent, then a 2x2/2 conv which
        // floors odd extents (3 -> 1).
        let mut enc_extents = Vec::with_capacity(n);
        let mut e = self.padded;
        for k in 0..n {
            enc_extents.push(e);
            if e < 2 {
                return Err(invalid(format!(
                    "stage {} input extent {} collapses",
                    k + 1,
                    e
                )));
            }
            e = (e - 2) / 2 + 1;
        }
        let encoded_extent = e;

        // Decoder stage k upsamples by 2 and must land on the extent of the
        // matching encoder skip, possibly via a +1 zero pad (bottom/right).
        let mut dec = Vec::with_capacity(n);
        let mut cur = encoded_extent;
        for k in 0..n {
            let target = enc_extents[n - 1 - k];
            let up = cur * 2;
            let pad = if up == target {
                0
            } else if up + 1 == target {
                1
            } else {
                return Err(invalid(format!(
                    "decoder stage {} cannot reach extent {} from {} (upsamples to {})",
                    k + 1,
                    target,
                    cur,
                    up
                )));
            };
            dec.push(DecoderStagePlan {
                in_channels: if k == 0 {
                    *self.stage_channels.last().unwrap()
                } else {
                    self.stage_channels[n - k]
                },
                out_channels: self.stage_channels[n - 1 - k],
                skip_channels: self.stage_channels[n - 1 - k],
                extent: target,
                zero_pad: pad,
            });
            cur = target;
        }

        let mut enc = Vec::with_capacity(n);
        let mut in_ch = self.input_channels();
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            enc.push(EncoderStagePlan {
                in_channels: in_ch,
                out_channels: self.stage_channels[k],
                extent: enc_extents[k],
            });
            in_ch = self.stage_channels[k];
        }

        Ok(StagePlan {
            encoder: enc,
            decoder: dec,
            encoded_extent,
            center_channels: *self.stage_channels.last().unwrap(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStagePlan {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial extent at which the stage's residual block operates.
    pub extent: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStagePlan {
    pub in_channels: usize,
    pub out_channels: usize,
    pub skip_channels: usize,
    /// Extent after upsampling (and the stage's output extent).
    pub extent: usize,
    /// Rows/cols of zero padding (bottom/right) after the 2x stride upsample.
    pub zero_pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub encoder: Vec<EncoderStagePlan>,
    pub decoder: Vec<DecoderStagePlan>,
    pub encoded_extent: usize,
    pub center_channels: usize,
}

/// One conv layer of the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub padding: usize,
    pub instance_norm: bool,
    pub activation: bool,
    /// Normalize the weight by its largest singular value before use.
    /// On for every layer of the shipped configs; toy critics in tests
    /// opt out to realize exact linear scores.
    pub spectral_norm: bool,
}

impl ConvSpec {
    fn new(kernel: usize, filters: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            filters,
            stride,
            padding,
            instance_norm: true,
            activation: true,
            spectral_norm: true,
        }
    }

    fn plain(kernel: usize, filters: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            filters,
            stride,
            padding,
            instance_norm: false,
            activation: false,
            spectral_norm: true,
        }
    }

    pub fn out_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = (h + 2 * self.padding).checked_sub(self.kernel)? / self.stride + 1;
        let ow = (w + 2 * self.padding).checked_sub(self.kernel)? / self.stride + 1;
        if oh == 0 || ow == 0 {
            None
        } else {
            Some((oh, ow))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub base: Vec<ConvSpec>,
    pub frame: Vec<ConvSpec>,
    pub patch: Vec<ConvSpec>,
    pub leaky_slope: f32,
}

impl CriticConfig {
    pub fn paper() -> Self {
        Self {
            base: vec![
                ConvSpec::new(3, 32, 2, 1),
                ConvSpec::new(3, 64, 2, 1),
                ConvSpec::new(3, 128, 2, 1),
            ],
            frame: vec![
                ConvSpec::new(2, 256, 1, 0),
                ConvSpec::new(2, 256, 2, 0),
                ConvSpec::plain(2, 1, 2, 1),
            ],
            patch: vec![ConvSpec::new(2, 256, 1, 0), ConvSpec::plain(1, 1, 1, 0)],
            leaky_slope: 0.2,
        }
    }

    /// Desk preset for 16x16 grids: 4x4 base features, a 3x3 patch grid.
    /// Layers that would realize a 1x1 extent skip instance norm (a single
    /// normalized value collapses to the bias and kills the gradient).
    pub fn desk() -> Self {
        Self {
            base: vec![ConvSpec::new(3, 8, 2, 1), ConvSpec::new(3, 16, 2, 1)],
            frame: vec![ConvSpec::new(2, 32, 1, 0), ConvSpec::plain(2, 1, 2, 0)],
            patch: vec![ConvSpec::new(2, 32, 1, 0), ConvSpec::plain(1, 1, 1, 0)],
            leaky_slope: 0.2,
        }
    }

    /// Realized spatial extents of every critic layer for a grid_h x grid_w
    /// input. Recorded in run manifests; the last frame extent may exceed
    /// 1x1, in which case the frame score is the mean over it.
    pub fn realized_extents(
        &self,
        grid_h: usize,
        grid_w: usize,
    ) -> Result<CriticExtents, ConfigError> {
        let walk = |part: &str, specs: &[ConvSpec], mut h: usize, mut w: usize| {
            let mut out = Vec::with_capacity(specs.len());
            for (i, s) in specs.iter().enumerate() {
                match s.out_extent(h, w) {
                    Some((oh, ow)) => {
                        h = oh;
                        w = ow;
                        out.push((oh, ow));
                    }
                    None => {
                        return Err(invalid(format!(
                            "{part} layer {} collapses from {}x{}",
                            i + 1,
                            h,
                            w
                        )))
                    }
                }
            }
            Ok(out)
        };
        let base = walk("base", &self.base, grid_h, grid_w)?;
        let (bh, bw) = *base.last().unwrap();
        let frame = walk("frame", &self.frame, bh, bw)?;
        let patch = walk("patch", &self.patch, bh, bw)?;
        Ok(CriticExtents { base, frame, patch })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticExtents {
    pub base: Vec<(usize, usize)>,
    pub frame: Vec<(usize, usize)>,
    pub patch: Vec<(usize, usize)>,
}
