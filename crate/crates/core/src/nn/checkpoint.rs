//! Line-oriented text container for model parameters.
//!
//! ```text
//! #durflow-checkpoint v1
//! meta <key> <value>
//! layer <name> <kind> <input_dim> <output_dim> <kernel_width>
//! param <name> <d0,d1,...>
//! <space-separated values>
//! ```
//!
//! Values are written in Rust's shortest round-trip float format, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::layers::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::numerics::{Parameters, Tensor};

pub const CHECKPOINT_MAGIC: &str = "#durflow-checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub layers: Vec<(String, LayerSpec)>,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, s) in &self.layers {
            let _ = writeln!(
                out,
                "layer {name} {} {} {} {}",
                s.kind.as_str(),
                s.input_dim,
                s.output_dim,
                s.kernel_width
            );
        }
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(out, "param {name} {shape}");
            let mut first = true;
            for v in t.data() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == CHECKPOINT_MAGIC => {}
            Some((n, l)) => return Err(err(n, format!("expected `{CHECKPOINT_MAGIC}`, found `{l}`"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }
        let mut ck = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| err(n, "meta without key".into()))?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    ck.meta.insert(key.to_string(), value);
                }
                Some("layer") => {
                    let fields: Vec<&str> = parts.collect();
                    if fields.len() != 5 {
                        return Err(err(n, format!("layer line needs 5 fields, got {}", fields.len())));
                    }
                    let kind = LayerKind::parse(fields[1])
                        .ok_or_else(|| err(n, format!("unknown layer kind `{}`", fields[1])))?;
                    let num = |s: &str| s.parse::<usize>().map_err(|e| err(n, format!("bad dimension `{s}`: {e}")));
                    ck.layers.push((
                        fields[0].to_string(),
                        LayerSpec {
                            kind,
                            input_dim: num(fields[2])?,
                            output_dim: num(fields[3])?,
                            kernel_width: num(fields[4])?,
                        },
                    ));
                }
                Some("param") => {
                    let name = parts.next().ok_or_else(|| err(n, "param without name".into()))?;
                    let shape_s = parts.next().ok_or_else(|| err(n, "param without shape".into()))?;
                    let shape: Vec<usize> = if shape_s == "-" {
                        Vec::new()
                    } else {
                        shape_s
                            .split(',')
                            .map(|d| d.parse::<usize>().map_err(|e| err(n, format!("bad shape `{shape_s}`: {e}"))))
                            .collect::<Result<_>>()?
                    };
                    let (vn, values) = lines
                        .next()
                        .ok_or_else(|| err(n + 1, format!("missing values for `{name}`")))?;
                    let data: Vec<f64> = values
                        .split_whitespace()
                        .map(|v| v.parse::<f64>().map_err(|e| err(vn, format!("bad value `{v}`: {e}"))))
                        .collect::<Result<_>>()?;
                    let tensor = Tensor::new(shape, data).map_err(|e| err(vn, e.to_string()))?;
                    ck.params.insert(name, tensor);
                }
                Some(other) => return Err(err(n, format!("unknown record `{other}`"))),
                None => {}
            }
        }
        Ok(ck)
    }
}
