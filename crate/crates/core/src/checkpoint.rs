//! Checkpoint codec.
//!
//! Layout: the 8-byte magic `MSECNN01`, a u32 LE manifest length, the UTF-8
//! manifest, then every tensor as f32 LE in manifest order. The manifest is
//! sectioned `key = value` text:
//!
//! ```text
//! [model]
//! variant = msecnn
//! channels = 8,16,16,16,8
//! pooling = 2x4,2x4,2x2,3x3,2x1
//! n_tags = 4
//! input_shape = 1x48x121
//! dropout_rate = 0
//! [frontend]
//! sample_rate = 12000
//! ...
//! [normalization]
//! bn1.tracked = 40
//! [tags]
//! tag = guitar
//! [tensors]
//! conv1.weight = 8x1x3x3 @ 0
//! ```
//!
//! Tensor offsets are in bytes from the start of the payload.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::audio::SpectrogramConfig;
use crate::error::{Error, FormatError, Result};
use crate::model::LevelParams;
use crate::model::{tensor_layout, ModelConfig, ModelState, Variant};
use crate::ops::BnStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSECNN01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub frontend: SpectrogramConfig,
    /// Tag names in output order; empty or `n_tags` long.
    pub tags: Vec<String>,
    pub state: ModelState<f32>,
}

fn join<I: IntoIterator<Item = String>>(items: I, sep: &str) -> String {
    items.into_iter().collect::<Vec<_>>().join(sep)
}

fn dims(shape: &[usize]) -> String {
    join(shape.iter().map(|d| d.to_string()), "x")
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.frontend.validate()?;
        if !self.tags.is_empty() && self.tags.len() != self.config.n_tags {
            return Err(Error::Argument(format!(
                "{} tag names for a {}-tag model",
                self.tags.len(),
                self.config.n_tags
            )));
        }
        if let Some(bad) = self
            .tags
            .iter()
            .find(|t| t.contains('\n') || t.trim() != t.as_str() || t.is_empty())
        {
            return Err(Error::Argument(format!("tag name {bad:?} cannot be stored")));
        }
        let layout = tensor_layout(&self.config);
        let stored = self.state.stored();
        if layout.len() != stored.len() {
            return Err(Error::Internal("state does not match config".into()));
        }
        for ((name, shape), t) in layout.iter().zip(&stored) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(FormatError::ShapeMismatch {
                    name: name.clone(),
                    manifest: t.shape().to_vec(),
                    expected: shape.clone(),
                }));
            }
        }
        Ok(())
    }

    fn manifest(&self) -> String {
        let c = &self.config;
        let f = &self.frontend;
        let mut m = String::new();
        let _ = writeln!(m, "[model]");
        let _ = writeln!(m, "variant = {}", c.variant);
        let _ = writeln!(m, "channels = {}", join(c.channels.iter().map(|v| v.to_string()), ","));
        let _ = writeln!(
            m,
            "pooling = {}",
            join(c.pooling.iter().map(|(h, w)| format!("{h}x{w}")), ",")
        );
        let _ = writeln!(m, "n_tags = {}", c.n_tags);
        let _ = writeln!(
            m,
            "input_shape = {}",
            dims(&[c.input_shape.0, c.input_shape.1, c.input_shape.2])
        );
        let _ = writeln!(m, "dropout_rate = {}", c.dropout_rate);
        let _ = writeln!(m, "[frontend]");
        let _ = writeln!(m, "sample_rate = {}", f.sample_rate);
        let _ = writeln!(m, "n_fft = {}", f.n_fft);
        let _ = writeln!(m, "hop = {}", f.hop);
        let _ = writeln!(m, "n_mels = {}", f.n_mels);
        let _ = writeln!(m, "f_min = {}", f.f_min);
        let _ = writeln!(m, "f_max = {}", f.f_max);
        let _ = writeln!(m, "clip_seconds = {}", f.clip_seconds);
        let _ = writeln!(m, "[normalization]");
        for (k, l) in self.state.levels.iter().enumerate() {
            let _ = writeln!(m, "bn{}.tracked = {}", k + 1, l.stats.tracked);
        }
        let _ = writeln!(m, "[tags]");
        for t in &self.tags {
            let _ = writeln!(m, "tag = {t}");
        }
        let _ = writeln!(m, "[tensors]");
        let mut offset = 0usize;
        for ((name, shape), _) in tensor_layout(c).iter().zip(self.state.stored()) {
            let _ = writeln!(m, "{name} = {} @ {offset}", dims(shape));
            offset += shape.iter().product::<usize>() * 4;
        }
        m
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let manifest = self.manifest();
        let stored = self.state.stored();
        let payload: usize = stored.iter().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        let len = u32::try_from(manifest.len()).map_err(|_| Error::Argument("manifest too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for t in stored {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint; nothing is returned unless every
    /// check passes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            let n = bytes.len().min(MAGIC.len());
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
            }
            .into());
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 4 {
            return Err(FormatError::Truncated("manifest length missing".into()).into());
        }
        let mlen = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < mlen {
            return Err(FormatError::Truncated(format!("manifest needs {mlen} bytes, {} present", rest.len())).into());
        }
        let text = core::str::from_utf8(&rest[..mlen]).map_err(|e| FormatError::Manifest {
            line: 0,
            msg: format!("not UTF-8: {e}"),
        })?;
        let parsed = Manifest::parse(text)?;
        let payload = &rest[mlen..];
        parsed.build(payload)
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Manifest {
    model: Vec<Entry>,
    frontend: Vec<Entry>,
    normalization: Vec<Entry>,
    tags: Vec<Entry>,
    tensors: Vec<Entry>,
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    FormatError::Manifest { line, msg: msg.into() }.into()
}

fn lookup<'a>(section: &'a [Entry], key: &str) -> Result<&'a Entry> {
    section
        .iter()
        .find(|e| e.key == key)
        .ok_or_else(|| bad(0, format!("missing key {key:?}")))
}

fn num<V: core::str::FromStr>(e: &Entry, s: &str) -> Result<V> {
    s.trim()
        .parse()
        .map_err(|_| bad(e.line, format!("{}: cannot parse {s:?}", e.key)))
}

fn parse_dims(e: &Entry, s: &str) -> Result<Vec<usize>> {
    s.split('x').map(|d| num(e, d)).collect()
}

impl Manifest {
    fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest {
            model: Vec::new(),
            frontend: Vec::new(),
            normalization: Vec::new(),
            tags: Vec::new(),
            tensors: Vec::new(),
        };
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            if let Some(name) = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = Some(match name {
                    "model" | "frontend" | "normalization" | "tags" | "tensors" => name,
                    other => return Err(bad(line, format!("unknown section [{other}]"))),
                });
                continue;
            }
            let (k, v) = raw
                .split_once(" = ")
                .ok_or_else(|| bad(line, format!("expected `key = value`, got {raw:?}")))?;
            let entry = Entry {
                line,
                key: k.trim().into(),
                value: v.into(),
            };
            match section {
                Some("model") => m.model.push(entry),
                Some("frontend") => m.frontend.push(entry),
                Some("normalization") => m.normalization.push(entry),
                Some("tags") => m.tags.push(entry),
                Some("tensors") => m.tensors.push(entry),
                _ => return Err(bad(line, "entry outside any section")),
            }
        }
        Ok(m)
    }

    fn config(&self) -> Result<ModelConfig> {
        let get = |k| lookup(&self.model, k);
        let e = get("variant")?;
        let variant: Variant = e
            .value
            .parse()
            .map_err(|_| bad(e.line, format!("unknown variant {:?}", e.value)))?;
        let e = get("channels")?;
        let channels = e.value.split(',').map(|c| num(e, c)).collect::<Result<Vec<usize>>>()?;
        let e = get("pooling")?;
        let pooling = e
            .value
            .split(',')
            .map(|p| match parse_dims(e, p)?.as_slice() {
                &[h, w] => Ok((h, w)),
                _ => Err(bad(e.line, format!("pooling entry {p:?} is not HxW"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let e = get("n_tags")?;
        let n_tags = num(e, &e.value)?;
        let e = get("input_shape")?;
        let input_shape = match parse_dims(e, &e.value)?.as_slice() {
            &[c, h, w] => (c, h, w),
            _ => return Err(bad(e.line, "input_shape is not CxHxW")),
        };
        let e = get("dropout_rate")?;
        let dropout_rate = num(e, &e.value)?;
        let config = ModelConfig {
            variant,
            channels,
            pooling,
            n_tags,
            input_shape,
            dropout_rate,
        };
        config.validate()?;
        Ok(config)
    }

    fn frontend(&self) -> Result<SpectrogramConfig> {
        let get = |k: &str| -> Result<&Entry> { lookup(&self.frontend, k) };
        let f = |k: &str| -> Result<f64> {
            let e = get(k)?;
            num(e, &e.value)
        };
        let u = |k: &str| -> Result<usize> {
            let e = get(k)?;
            num(e, &e.value)
        };
        let e = get("sample_rate")?;
        let cfg = SpectrogramConfig {
            sample_rate: num(e, &e.value)?,
            n_fft: u("n_fft")?,
            hop: u("hop")?,
            n_mels: u("n_mels")?,
            f_min: f("f_min")?,
            f_max: f("f_max")?,
            clip_seconds: f("clip_seconds")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn build(&self, payload: &[u8]) -> Result<Checkpoint> {
        let config = self.config()?;
        let frontend = self.frontend()?;
        let layout = tensor_layout(&config);
        if self.tensors.len() != layout.len() {
            return Err(bad(
                0,
                format!("{} tensors listed, config needs {}", self.tensors.len(), layout.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        let mut expected_offset = 0usize;
        for ((name, shape), e) in layout.iter().zip(&self.tensors) {
            if &e.key != name {
                return Err(bad(e.line, format!("expected tensor {name}, found {}", e.key)));
            }
            let (d, o) = e
                .value
                .split_once(" @ ")
                .ok_or_else(|| bad(e.line, "tensor entry must be `SHAPE @ OFFSET`"))?;
            let manifest_shape = parse_dims(e, d)?;
            if &manifest_shape != shape {
                return Err(FormatError::ShapeMismatch {
                    name: name.clone(),
                    manifest: manifest_shape,
                    expected: shape.clone(),
                }
                .into());
            }
            let offset: usize = num(e, o)?;
            if offset != expected_offset {
                return Err(bad(
                    e.line,
                    format!("{name} offset {offset}, expected {expected_offset}"),
                ));
            }
            let n: usize = shape.iter().product();
            let end = offset + n * 4;
            if payload.len() < end {
                return Err(FormatError::Truncated(format!(
                    "payload ends at byte {} inside {name} (needs {end})",
                    payload.len()
                ))
                .into());
            }
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
            expected_offset = end;
        }
        if payload.len() > expected_offset {
            return Err(FormatError::TrailingBytes {
                extra: payload.len() - expected_offset,
            }
            .into());
        }

        let mut tracked = Vec::with_capacity(config.n_levels());
        for k in 1..=config.n_levels() {
            let e = lookup(&self.normalization, &format!("bn{k}.tracked"))?;
            tracked.push(num::<u64>(e, &e.value)?);
        }
        let tags: Vec<String> = self.tags.iter().map(|e| e.value.clone()).collect();
        if !tags.is_empty() && tags.len() != config.n_tags {
            return Err(bad(
                0,
                format!("{} tag names for a {}-tag model", tags.len(), config.n_tags),
            ));
        }

        let mut it = tensors.into_iter();
        let mut next = || it.next().ok_or_else(|| Error::Internal("tensor list exhausted".into()));
        let mut levels = Vec::with_capacity(config.n_levels());
        for &t in &tracked {
            levels.push(LevelParams {
                conv_w: next()?,
                conv_b: next()?,
                gamma: next()?,
                beta: next()?,
                stats: BnStats {
                    mean: next()?,
                    var: next()?,
                    tracked: t,
                },
            });
        }
        let state = ModelState {
            levels,
            dense_w: next()?,
            dense_b: next()?,
        };
        Ok(Checkpoint {
            config,
            frontend,
            tags,
            state,
        })
    }
}
