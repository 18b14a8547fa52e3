use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolution. Unless `plain` is set, the conv is followed by ReLU and batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    /// ReLU threshold: activations are `max(z, relu_eps)`.
    #[serde(default)]
    pub relu_eps: f64,
    /// Bare convolution with no activation or normalization (used for the output layer).
    #[serde(default)]
    pub plain: bool,
}

fn one() -> usize {
    1
}

/// Output length of a strided, zero-padded correlation, or `None` if it would be empty.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = input + 2 * padding;
    if stride == 0 || kernel == 0 || span < kernel {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

impl ConvSpec {
    /// Square kernel, stride 1, with ReLU and batch norm.
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: 0,
            relu_eps: 0.0,
            plain: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn plain(mut self) -> Self {
        self.plain = true;
        self
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_dim(h, self.kernel_h, self.stride, self.padding)?,
            conv_output_dim(w, self.kernel_w, self.stride, self.padding)?,
        ))
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Learnable values: the kernel plus α and β unless plain.
    pub fn param_count(&self) -> usize {
        self.kernel_len() + if self.plain { 0 } else { 2 * self.out_channels }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err("kernel and stride must be >= 1".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err("channel counts must be >= 1".into());
        }
        if !self.relu_eps.is_finite() {
            return Err("relu_eps must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemMode {
    /// One convolution over all input channels.
    Joint,
    /// One convolution per input channel; feature maps are concatenated.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// Feature extraction from the raw input. In separate mode `conv.in_channels` is the total
    /// input channel count and each channel gets `conv.out_channels / in_channels` maps.
    Stem { mode: StemMode, conv: ConvSpec },
    /// `depth` shape-preserving conv layers with growth rate `growth`; layer `l` sees the
    /// concatenation of the block input and all earlier layer outputs.
    DenseBlock {
        depth: usize,
        growth: usize,
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default)]
        relu_eps: f64,
    },
    Resize { target_h: usize, target_w: usize },
}

fn three() -> usize {
    3
}

impl LayerSpec {
    pub fn conv_count(&self) -> usize {
        match self {
            LayerSpec::Conv(_) => 1,
            LayerSpec::Stem { mode: StemMode::Joint, .. } => 1,
            LayerSpec::Stem { mode: StemMode::Separate, conv } => conv.in_channels,
            LayerSpec::DenseBlock { depth, .. } => *depth,
            LayerSpec::Resize { .. } => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Stem { .. } => "stem",
            LayerSpec::DenseBlock { .. } => "dense_block",
            LayerSpec::Resize { .. } => "resize",
        }
    }
}

/// Input channel count seen by layer `l` (1-based) of a dense block.
pub fn dense_layer_inputs(block_in: usize, growth: usize, l: usize) -> usize {
    block_in + growth * (l - 1)
}

/// `(height, width, channels)` of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Schema {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Schema { h, w, c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: Schema,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.9
}

impl NetworkSpec {
    pub fn new(input: Schema, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            input,
            layers,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }

    /// Shape after each layer (index 0 is the input), or a build error naming the layer.
    pub fn shapes(&self) -> Result<Vec<Schema>> {
        let bad = |i: usize, msg: String| Error::Mismatch { layer: i, detail: msg };
        if self.input.h == 0 || self.input.w == 0 || self.input.c == 0 {
            return Err(Error::invalid("input schema has a zero dimension"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("bn_eps must be > 0 and bn_momentum in [0, 1)"));
        }
        let mut out = vec![self.input];
        let mut s = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            s = match layer {
                LayerSpec::Conv(c) => {
                    c.check().map_err(|m| bad(i, m))?;
                    if c.in_channels != s.c {
                        return Err(bad(i, format!("conv expects {} channels, gets {}", c.in_channels, s.c)));
                    }
                    let (h, w) = c
                        .output_hw(s.h, s.w)
                        .ok_or_else(|| bad(i, format!("conv output of {}x{} input is empty", s.h, s.w)))?;
                    Schema::new(h, w, c.out_channels)
                }
                LayerSpec::Stem { mode, conv } => {
                    conv.check().map_err(|m| bad(i, m))?;
                    if i != 0 {
                        return Err(bad(i, "stem must be the first layer".into()));
                    }
                    if conv.in_channels != s.c {
                        return Err(bad(i, format!("stem expects {} channels, gets {}", conv.in_channels, s.c)));
                    }
                    if *mode == StemMode::Separate && conv.out_channels % conv.in_channels != 0 {
                        return Err(bad(
                            i,
                            format!(
                                "separate stem needs out_channels ({}) divisible by in_channels ({})",
                                conv.out_channels, conv.in_channels
                            ),
                        ));
                    }
                    let (h, w) = conv
                        .output_hw(s.h, s.w)
                        .ok_or_else(|| bad(i, format!("stem output of {}x{} input is empty", s.h, s.w)))?;
                    Schema::new(h, w, conv.out_channels)
                }
                LayerSpec::DenseBlock {
                    depth,
                    growth,
                    kernel,
                    relu_eps,
                } => {
                    if *depth > 0 && (*growth == 0 || kernel % 2 == 0) {
                        return Err(bad(i, "dense block needs growth >= 1 and an odd kernel".into()));
                    }
                    if !relu_eps.is_finite() {
                        return Err(bad(i, "relu_eps must be finite".into()));
                    }
                    Schema::new(s.h, s.w, s.c + growth * depth)
                }
                LayerSpec::Resize { target_h, target_w } => {
                    if *target_h == 0 || *target_w == 0 {
                        return Err(bad(i, "resize targets must be >= 1".into()));
                    }
                    Schema::new(*target_h, *target_w, s.c)
                }
            };
            out.push(s);
        }
        Ok(out)
    }

    pub fn output(&self) -> Result<Schema> {
        Ok(*self.shapes()?.last().unwrap())
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::conv_count).sum()
    }

    /// Analytic learnable-value count.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, s)| match layer {
                LayerSpec::Conv(c) | LayerSpec::Stem { mode: StemMode::Joint, conv: c } => c.param_count(),
                LayerSpec::Stem { mode: StemMode::Separate, conv } => {
                    let per = ConvSpec {
                        in_channels: 1,
                        out_channels: conv.out_channels / conv.in_channels,
                        ..*conv
                    };
                    per.param_count() * conv.in_channels
                }
                LayerSpec::DenseBlock { depth, growth, kernel, .. } => (1..=*depth)
                    .map(|l| ConvSpec::new(*kernel, dense_layer_inputs(s.c, *growth, l), *growth).param_count())
                    .sum(),
                LayerSpec::Resize { .. } => 0,
            })
            .sum())
    }

    /// 21-conv encoder–decoder for one field in, `c_out` fields out (64×64 → 31 → 17 → 31 → 64).
    pub fn fr21(grid: usize, c_in: usize, c_out: usize, stem: StemMode) -> Result<Self> {
        Self::fr_preset(grid, c_in, c_out, stem, false)
    }

    /// FR-21 with one more depth-4 dense block before the output conv (72 → 144 maps).
    pub fn fr25(grid: usize, c_in: usize, c_out: usize, stem: StemMode) -> Result<Self> {
        Self::fr_preset(grid, c_in, c_out, stem, true)
    }

    fn fr_preset(grid: usize, c_in: usize, c_out: usize, stem: StemMode, extra_block: bool) -> Result<Self> {
        let stem_width = if c_in > 1 { 64 } else { 48 };
        let r1 = conv_output_dim(grid, 3, 2, 0).ok_or_else(|| Error::invalid("grid too small for preset"))?;
        let mut c = stem_width;
        let mut layers = vec![LayerSpec::Stem {
            mode: stem,
            conv: ConvSpec::new(3, c_in, c).stride(2),
        }];
        let block = |layers: &mut Vec<LayerSpec>, c: &mut usize, depth: usize, growth: usize| {
            layers.push(LayerSpec::DenseBlock {
                depth,
                growth,
                kernel: 3,
                relu_eps: 0.0,
            });
            *c += depth * growth;
        };
        block(&mut layers, &mut c, 4, 16);
        layers.push(LayerSpec::Conv(ConvSpec::new(1, c, c / 2)));
        c /= 2;
        layers.push(LayerSpec::Conv(ConvSpec::new(3, c, c).stride(2).padding(2)));
        block(&mut layers, &mut c, 6, 16);
        layers.push(LayerSpec::Conv(ConvSpec::new(1, c, c / 2)));
        c /= 2;
        layers.push(LayerSpec::Resize { target_h: r1, target_w: r1 });
        layers.push(LayerSpec::Conv(ConvSpec::new(3, c, c).padding(1)));
        block(&mut layers, &mut c, 4, 16);
        layers.push(LayerSpec::Resize {
            target_h: grid,
            target_w: grid,
        });
        layers.push(LayerSpec::Conv(ConvSpec::new(3, c, 72).padding(1)));
        c = 72;
        if extra_block {
            block(&mut layers, &mut c, 4, 18);
        }
        layers.push(LayerSpec::Conv(ConvSpec::new(3, c, c_out).padding(1).plain()));
        let spec = NetworkSpec::new(Schema::new(grid, grid, c_in), layers);
        spec.shapes()?;
        Ok(spec)
    }

    /// Nine-conv network for small desk-scale grids (one stride-2 level).
    pub fn small(grid: usize, c_in: usize, c_out: usize, stem: StemMode) -> Result<Self> {
        let stem_width = if c_in > 1 { 12 * c_in } else { 24 };
        let layers = vec![
            LayerSpec::Stem {
                mode: stem,
                conv: ConvSpec::new(3, c_in, stem_width).padding(1),
            },
            LayerSpec::DenseBlock {
                depth: 2,
                growth: 12,
                kernel: 3,
                relu_eps: 0.0,
            },
            LayerSpec::Conv(ConvSpec::new(3, stem_width + 24, 32).stride(2).padding(1)),
            LayerSpec::DenseBlock {
                depth: 2,
                growth: 12,
                kernel: 3,
                relu_eps: 0.0,
            },
            LayerSpec::Conv(ConvSpec::new(1, 56, 32)),
            LayerSpec::Resize {
                target_h: grid,
                target_w: grid,
            },
            LayerSpec::Conv(ConvSpec::new(3, 32, 24).padding(1)),
            LayerSpec::Conv(ConvSpec::new(3, 24, c_out).padding(1).plain()),
        ];
        let spec = NetworkSpec::new(Schema::new(grid, grid, c_in), layers);
        spec.shapes()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("network spec: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_arithmetic() {
        assert_eq!(ConvSpec::new(3, 1, 1).stride(2).padding(1).output_hw(5, 5), Some((3, 3)));
        assert_eq!(conv_output_dim(64, 3, 2, 0), Some(31));
        assert_eq!(conv_output_dim(31, 3, 2, 2), Some(17));
        assert_eq!(conv_output_dim(2, 3, 1, 0), None);
    }

    #[test]
    fn dense_channel_law() {
        assert_eq!(dense_layer_inputs(2, 4, 4), 14);
        let spec = NetworkSpec::new(
            Schema::new(8, 8, 48),
            vec![LayerSpec::DenseBlock {
                depth: 3,
                growth: 16,
                kernel: 3,
                relu_eps: 0.0,
            }],
        );
        assert_eq!(spec.output().unwrap().c, 96);
    }

    #[test]
    fn preset_conv_counts_and_shapes() {
        let fr21 = NetworkSpec::fr21(64, 1, 1, StemMode::Joint).unwrap();
        assert_eq!(fr21.conv_count(), 21);
        let res: Vec<usize> = fr21.shapes().unwrap().iter().map(|s| s.h).collect();
        assert!(res.windows(2).any(|w| w == [64, 31]));
        assert!(res.windows(2).any(|w| w == [31, 17]));
        assert_eq!(*res.last().unwrap(), 64);

        let fr25 = NetworkSpec::fr25(64, 1, 3, StemMode::Joint).unwrap();
        assert_eq!(fr25.conv_count(), 25);
        let shapes = fr25.shapes().unwrap();
        assert_eq!(*shapes.last().unwrap(), Schema::new(64, 64, 3));
        let n = shapes.len();
        assert_eq!((shapes[n - 3].c, shapes[n - 2].c), (72, 144));

        let sep = NetworkSpec::fr21(64, 2, 2, StemMode::Separate).unwrap();
        assert_eq!(sep.shapes().unwrap()[1], Schema::new(31, 31, 64));

        assert_eq!(NetworkSpec::small(16, 1, 1, StemMode::Joint).unwrap().conv_count(), 9);
    }

    #[test]
    fn rejects_broken_chains() {
        let spec = NetworkSpec::new(
            Schema::new(8, 8, 1),
            vec![LayerSpec::Conv(ConvSpec::new(3, 1, 4)), LayerSpec::Conv(ConvSpec::new(3, 5, 4))],
        );
        assert!(matches!(spec.shapes(), Err(Error::Mismatch { layer: 1, .. })));
        let spec = NetworkSpec::new(Schema::new(2, 2, 1), vec![LayerSpec::Conv(ConvSpec::new(3, 1, 4))]);
        assert!(matches!(spec.shapes(), Err(Error::Mismatch { layer: 0, .. })));
    }

    #[test]
    fn json_round_trip() {
        let spec = NetworkSpec::fr25(64, 2, 2, StemMode::Separate).unwrap();
        assert_eq!(NetworkSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
}
