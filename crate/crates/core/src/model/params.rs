use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{param_count, ArchConfig};
use super::{ModelError, Real};

/// Standard deviation of every weight matrix at initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnIx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormIx {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockIx {
    pub ln1: NormIx,
    pub attn: AttnIx,
    pub cross: Option<(NormIx, AttnIx)>,
    pub ln2: NormIx,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EncoderIx {
    pub proj_w: usize,
    pub proj_b: usize,
    pub null: usize,
    pub blocks: Vec<BlockIx>,
    pub ln_f: NormIx,
}

/// Named tensors in declaration order plus typed indices into them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub(crate) encoder: Option<EncoderIx>,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) blocks: Vec<BlockIx>,
    pub(crate) ln_f: NormIx,
    pub(crate) out_bias: usize,
}

#[derive(Default)]
struct Builder {
    tensors: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        let spec = TensorSpec { name, shape: shape.to_vec(), offset: self.offset };
        self.offset += spec.len();
        self.tensors.push(spec);
        self.tensors.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIx {
        NormIx { g: self.add(format!("{prefix}.g"), &[d]), b: self.add(format!("{prefix}.b"), &[d]) }
    }

    fn attn(&mut self, prefix: &str, d: usize, d_kv: usize) -> AttnIx {
        AttnIx {
            wq: self.add(format!("{prefix}.wq"), &[d, d]),
            bq: self.add(format!("{prefix}.bq"), &[d]),
            wk: self.add(format!("{prefix}.wk"), &[d_kv, d]),
            bk: self.add(format!("{prefix}.bk"), &[d]),
            wv: self.add(format!("{prefix}.wv"), &[d_kv, d]),
            bv: self.add(format!("{prefix}.bv"), &[d]),
            wo: self.add(format!("{prefix}.wo"), &[d, d]),
            bo: self.add(format!("{prefix}.bo"), &[d]),
        }
    }

    fn block(&mut self, prefix: &str, d: usize, ffn: usize, cross_kv: Option<usize>) -> BlockIx {
        let ln1 = self.norm(&format!("{prefix}.ln1"), d);
        let attn = self.attn(&format!("{prefix}.attn"), d, d);
        let cross = cross_kv.map(|d_kv| {
            let ln = self.norm(&format!("{prefix}.ln_cross"), d);
            (ln, self.attn(&format!("{prefix}.cross"), d, d_kv))
        });
        let ln2 = self.norm(&format!("{prefix}.ln2"), d);
        BlockIx {
            ln1,
            attn,
            cross,
            ln2,
            w1: self.add(format!("{prefix}.ffn.w1"), &[d, ffn]),
            b1: self.add(format!("{prefix}.ffn.b1"), &[ffn]),
            w2: self.add(format!("{prefix}.ffn.w2"), &[ffn, d]),
            b2: self.add(format!("{prefix}.ffn.b2"), &[d]),
        }
    }
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut b = Builder::default();
        let encoder = arch.is_contextual().then(|| {
            let e = arch.d_model_enc;
            let proj_w = b.add("ctx.proj.w".into(), &[arch.d_ctx, e]);
            let proj_b = b.add("ctx.proj.b".into(), &[e]);
            let null = b.add("ctx.null".into(), &[e]);
            let blocks = (0..arch.n_layers_enc).map(|l| b.block(&format!("enc.{l}"), e, arch.ffn_enc, None)).collect();
            let ln_f = b.norm("enc.ln_f", e);
            EncoderIx { proj_w, proj_b, null, blocks, ln_f }
        });
        let d = arch.d_model_dec;
        let tok_emb = b.add("dec.tok_emb".into(), &[arch.vocab_size, d]);
        let pos_emb = b.add("dec.pos_emb".into(), &[arch.max_seq_len, d]);
        let cross_kv = arch.is_contextual().then_some(arch.d_model_enc);
        let blocks = (0..arch.n_layers_dec).map(|l| b.block(&format!("dec.{l}"), d, arch.ffn_dec, cross_kv)).collect();
        let ln_f = b.norm("dec.ln_f", d);
        let out_bias = b.add("dec.out_bias".into(), &[arch.vocab_size]);
        Ok(Layout { tensors: b.tensors, encoder, tok_emb, pos_emb, blocks, ln_f, out_bias })
    }

    pub fn total_len(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Output projections of residual branches; their init is scaled down
    /// with depth.
    fn is_residual_out(name: &str) -> bool {
        name.ends_with(".wo") || name.ends_with(".ffn.w2")
    }
}

/// Flat parameter buffer addressed through a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F = f32> {
    pub arch: ArchConfig,
    pub seed: u64,
    pub layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Real> ModelParameters<F> {
    pub fn zeros(arch: &ArchConfig, seed: u64) -> Result<Self, ModelError> {
        let layout = Layout::new(arch)?;
        let data = vec![F::zero(); layout.total_len()];
        Ok(ModelParameters { arch: arch.clone(), seed, layout: Arc::new(layout), data })
    }

    /// Weight matrices ~ N(0, 0.02), residual output projections scaled by
    /// 1/sqrt(2 * layers), layer-norm gains 1, biases and the null context
    /// vector 0.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = p.layout.clone();
        for t in &layout.tensors {
            let slice = &mut p.data[t.offset..t.offset + t.len()];
            if t.name.ends_with(".g") {
                slice.fill(F::one());
            } else if t.is_matrix() {
                let layers = if t.name.starts_with("enc.") { arch.n_layers_enc } else { arch.n_layers_dec };
                let std = if Layout::is_residual_out(&t.name) {
                    INIT_STD / (2.0 * layers.max(1) as f64).sqrt()
                } else {
                    INIT_STD
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                for v in slice.iter_mut() {
                    *v = F::from(normal.sample(&mut rng)).expect("finite sample");
                }
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, ix: usize) -> &[F] {
        let t = &self.layout.tensors[ix];
        &self.data[t.offset..t.offset + t.len()]
    }

    pub fn named(&self, name: &str) -> Option<&[F]> {
        self.layout.find(name).map(|t| &self.data[t.offset..t.offset + t.len()])
    }

    pub fn named_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let t = self.layout.find(name)?.clone();
        Some(&mut self.data[t.offset..t.offset + t.len()])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ModelParameters<G> {
        ModelParameters {
            arch: self.arch.clone(),
            seed: self.seed,
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| G::from(*v).expect("castable")).collect(),
        }
    }

    pub fn check_count(&self) -> Result<(), ModelError> {
        let expected = param_count(&self.arch)?;
        if expected != self.data.len() {
            return Err(ModelError::InvalidArch(format!(
                "buffer holds {} parameters, arch needs {expected}",
                self.data.len()
            )));
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"CTXLMCKP";
const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl ModelParameters<f32> {
    /// Binary checkpoint: magic, format version, arch JSON, seed, then each
    /// tensor as name, shape and little-endian f32 values.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<(), ModelError> {
        w.write_all(MAGIC)?;
        write_u32(w, FORMAT_VERSION)?;
        let arch = serde_json::to_vec(&self.arch).expect("arch serializes");
        write_u32(w, arch.len() as u32)?;
        w.write_all(&arch)?;
        w.write_all(&self.seed.to_le_bytes())?;
        write_u32(w, self.layout.tensors.len() as u32)?;
        for t in &self.layout.tensors {
            write_u32(w, t.name.len() as u32)?;
            w.write_all(t.name.as_bytes())?;
            write_u32(w, t.shape.len() as u32)?;
            for &s in &t.shape {
                write_u32(w, s as u32)?;
            }
            for v in &self.data[t.offset..t.offset + t.len()] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut arch = vec![0u8; read_u32(r)? as usize];
        r.read_exact(&mut arch)?;
        let arch: ArchConfig = serde_json::from_slice(&arch).map_err(|e| bad(&e.to_string()))?;
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let mut params = ModelParameters::<f32>::zeros(&arch, u64::from_le_bytes(seed))?;
        let n = read_u32(r)? as usize;
        if n != params.layout.tensors.len() {
            return Err(bad("tensor count does not match the architecture"));
        }
        let layout = params.layout.clone();
        for t in &layout.tensors {
            let mut name = vec![0u8; read_u32(r)? as usize];
            r.read_exact(&mut name)?;
            if name != t.name.as_bytes() {
                return Err(bad(&format!("expected tensor {}", t.name)));
            }
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u32(r).map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
            if shape != t.shape {
                return Err(bad(&format!("tensor {} has shape {shape:?}, expected {:?}", t.name, t.shape)));
            }
            let mut buf = vec![0u8; 4 * t.len()];
            r.read_exact(&mut buf)?;
            for (dst, chunk) in params.data[t.offset..t.offset + t.len()].iter_mut().zip(buf.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn tiny() -> ArchConfig {
        ArchConfig {
            kind: ModelKind::Contextual,
            d_model_enc: 8,
            n_layers_enc: 1,
            heads_enc: 2,
            ffn_enc: 16,
            d_model_dec: 8,
            n_layers_dec: 1,
            heads_dec: 2,
            ffn_dec: 32,
            vocab_size: 16,
            d_ctx: 8,
            max_seq_len: 10,
        }
    }

    #[test]
    fn layout_matches_closed_form() {
        for arch in [tiny(), tiny().as_base(), ArchConfig::tiny_contextual(50, 64)] {
            let layout = Layout::new(&arch).unwrap();
            let brute: usize = layout.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
            assert_eq!(brute, param_count(&arch).unwrap());
            assert_eq!(layout.total_len(), brute);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParameters::<f32>::init(&tiny(), 7).unwrap();
        let b = ModelParameters::<f32>::init(&tiny(), 7).unwrap();
        let c = ModelParameters::<f32>::init(&tiny(), 8).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert!(a.named("ctx.null").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.named("dec.ln_f.g").unwrap().iter().all(|&v| v == 1.0));
        a.check_count().unwrap();
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = ModelParameters::<f32>::init(&tiny(), 3).unwrap();
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        let b = ModelParameters::<f32>::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
        buf[0] = b'X';
        assert!(ModelParameters::<f32>::read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
