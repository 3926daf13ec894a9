use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::gradcore::{Activation, Var};
use crate::rng::Pcg32;
use crate::{Graph, Tensor};

const MAGIC: &[u8; 4] = b"MDET";
const VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.1;

/// Backbone layout: one `[3x3 conv, leaky-ReLU, 2x2 max-pool]` block per entry,
/// followed by a 1x1 head conv to the output channel count.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub block_channels: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::reference()
    }
}

impl Architecture {
    pub fn reference() -> Self {
        Architecture { block_channels: vec![16, 32, 64, 64] }
    }

    /// Reference layout with a 32-channel third block.
    pub fn narrow_third() -> Self {
        Architecture { block_channels: vec![16, 32, 32, 64] }
    }

    pub fn tag(&self) -> String {
        let parts: Vec<String> = self.block_channels.iter().map(|c| c.to_string()).collect();
        parts.join("-")
    }

    /// Kernel and bias shapes in declaration order.
    pub fn weight_shapes(&self, config: &DetectorConfig) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut cin = 3;
        for &cout in &self.block_channels {
            shapes.push(vec![3, 3, cin, cout]);
            shapes.push(vec![cout]);
            cin = cout;
        }
        shapes.push(vec![1, 1, cin, config.channels()]);
        shapes.push(vec![config.channels()]);
        shapes
    }

    pub fn validate(&self, config: &DetectorConfig) -> Result<()> {
        config.validate()?;
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::config("/arch/block_channels", "need at least one block, all widths positive"));
        }
        let stride = 1usize << self.block_channels.len();
        if config.grid * stride != config.input_size {
            return Err(Error::config(
                "/arch/block_channels",
                format!(
                    "{} pooling blocks map {} px to {} cells, config wants {}",
                    self.block_channels.len(),
                    config.input_size,
                    config.input_size / stride,
                    config.grid
                ),
            ));
        }
        Ok(())
    }
}

/// Detector weights plus the layout they realise. Immutable once built;
/// inference only reads it, so it can be shared across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub arch: Architecture,
    /// `[k0, b0, k1, b1, ..., k_head, b_head]`.
    pub weights: Vec<Tensor>,
}

impl DetectorModel {
    /// He-normal kernels (gain for leaky-ReLU), zero biases.
    pub fn init(config: DetectorConfig, arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate(&config)?;
        let mut rng = Pcg32::new(seed, 0x6d6f64656c);
        let shapes = arch.weight_shapes(&config);
        let n_blocks = arch.block_channels.len();
        let mut weights = Vec::with_capacity(shapes.len());
        for (i, shape) in shapes.into_iter().enumerate() {
            if shape.len() == 1 {
                weights.push(Tensor::zeros(shape));
                continue;
            }
            let fan_in = (shape[0] * shape[1] * shape[2]) as f64;
            let gain = if i / 2 < n_blocks { 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE) } else { 1.0 };
            let std = (gain / fan_in).sqrt();
            let n = shape.iter().product();
            weights.push(Tensor::new(shape, (0..n).map(|_| std * rng.normal()).collect())?);
        }
        Ok(DetectorModel { config, arch, weights })
    }

    /// Loads the weights into `g`, as parameters when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.weights.iter().map(|w| if trainable { g.param(w.clone()) } else { g.constant(w.clone()) }).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let n = self.config.input_size;
        if shape != [n, n, 3] {
            return Err(Error::shape(format!("detector expects {n}x{n}x3 input, got {shape:?}")));
        }
        Ok(())
    }

    /// Records the network on `g` and returns the raw `S x S x B(5+C)` output.
    pub fn forward_graph(&self, g: &mut Graph, image: Var, weights: &[Var]) -> Result<Var> {
        self.check_input(g.shape(image))?;
        let n_blocks = self.arch.block_channels.len();
        let mut x = image;
        for b in 0..n_blocks {
            x = g.conv2d(x, weights[2 * b], 1, 1)?;
            x = g.add_bias(x, weights[2 * b + 1])?;
            x = g.activation(x, Activation::LeakyRelu(LEAKY_SLOPE))?;
            x = g.max_pool2(x)?;
        }
        x = g.conv2d(x, weights[2 * n_blocks], 1, 0)?;
        g.add_bias(x, weights[2 * n_blocks + 1])
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let w = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let raw = self.forward_graph(&mut g, x, &w)?;
        Ok(g.value(raw).clone())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    /// Short identity string: architecture plus a digest of the weights.
    pub fn tag(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        format!("minidet[{}]#{hex}", self.arch.tag())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, c.grid);
        put_u32(&mut out, c.boxes);
        put_u32(&mut out, c.classes);
        put_u32(&mut out, c.input_size);
        put_u32(&mut out, self.arch.block_channels.len());
        for &ch in &self.arch.block_channels {
            put_u32(&mut out, ch);
        }
        for &(w, h) in &c.anchors {
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&c.score_threshold.to_le_bytes());
        out.extend_from_slice(&c.nms_iou_threshold.to_le_bytes());
        for w in &self.weights {
            for v in w.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "missing MDET magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported model version {version}")));
        }
        let grid = r.u32()? as usize;
        let boxes = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let input_size = r.u32()? as usize;
        let n_blocks = r.u32()? as usize;
        if n_blocks > 16 || boxes > 64 {
            return Err(Error::format(r.pos, "implausible header"));
        }
        let block_channels = (0..n_blocks).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let anchors = (0..boxes).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<_>>()?;
        let score_threshold = r.f64()?;
        let nms_iou_threshold = r.f64()?;
        let config = DetectorConfig { grid, boxes, classes, input_size, anchors, score_threshold, nms_iou_threshold };
        let arch = Architecture { block_channels };
        arch.validate(&config).map_err(|e| Error::format(r.pos, e.to_string()))?;
        let mut weights = Vec::new();
        for shape in arch.weight_shapes(&config) {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, "trailing bytes after weights"));
        }
        Ok(DetectorModel { config, arch, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos, format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
