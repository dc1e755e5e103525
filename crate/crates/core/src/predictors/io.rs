//! Text encoding of predictor stacks.
//!
//! ```text
//! i2m2-model v1, C=<int>, experts=<int>, lambda=<real>
//! prior, <C reals>
//! expert, role=<role>, featurizer=<featurizer>, active=<0|1>, layers=<int>
//! layer, <out>, <in>
//! w, <out*in reals, row-major>
//! b, <out reals>
//! ```
//!
//! One `expert` block per expert, each followed by its `layer`/`w`/`b`
//! triples. Reals use shortest round-trip formatting and decode bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::features::{ExpertRole, Featurizer};
use super::stack::{Expert, PredictorStack};
use crate::error::{Error, Result};
use crate::nncore::{Layer, Mlp, RealMatrix};

const MAGIC: &str = "i2m2-model v1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn encode_model(stack: &PredictorStack) -> String {
    let mut out = format!(
        "{MAGIC}, C={}, experts={}, lambda={}\n",
        stack.num_classes(),
        stack.experts().len(),
        stack.prior_coefficient()
    );
    let _ = writeln!(out, "prior, {}", join(stack.prior_logits()));
    for (e, &active) in stack.experts().iter().zip(stack.active()) {
        let _ = writeln!(
            out,
            "expert, role={}, featurizer={}, active={}, layers={}",
            e.role,
            e.featurizer,
            u8::from(active),
            e.net.layers().len()
        );
        for layer in e.net.layers() {
            let _ = writeln!(out, "layer, {}, {}", layer.outputs(), layer.inputs());
            let _ = writeln!(out, "w, {}", join(layer.weight.values()));
            let _ = writeln!(out, "b, {}", join(&layer.bias));
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    /// Next non-blank line split on commas, checking its leading tag.
    fn record(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        loop {
            let Some((i, raw)) = self.inner.next() else {
                self.line += 1;
                return Err(self.err(format!("unexpected end of input, expected `{tag}`")));
            };
            self.line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields[0] != tag {
                return Err(self.err(format!("expected `{tag}`, found `{}`", fields[0])));
            }
            return Ok(fields[1..].to_vec());
        }
    }

    fn reals(&self, fields: &[&str], expected: usize) -> Result<Vec<f64>> {
        if fields.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(format!("invalid real `{f}`")))
            })
            .collect()
    }

    fn count(&self, raw: &str) -> Result<usize> {
        raw.parse().map_err(|_| self.err(format!("invalid count `{raw}`")))
    }

    fn keyed<'f>(&self, fields: &[&'f str], key: &str) -> Result<&'f str> {
        fields
            .iter()
            .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| self.err(format!("missing `{key}=`")))
    }
}

pub fn decode_model(text: &str) -> Result<PredictorStack> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.record(MAGIC)?;
    let c = lines.count(lines.keyed(&header, "C")?)?;
    let n_experts = lines.count(lines.keyed(&header, "experts")?)?;
    let lambda_raw = lines.keyed(&header, "lambda")?;
    let lambda: f64 = lines.reals(&[lambda_raw], 1)?[0];
    let prior_fields = lines.record("prior")?;
    let prior = lines.reals(&prior_fields, c)?;

    let mut experts = Vec::with_capacity(n_experts);
    let mut active = Vec::with_capacity(n_experts);
    for _ in 0..n_experts {
        let fields = lines.record("expert")?;
        let role: ExpertRole = lines
            .keyed(&fields, "role")?
            .parse()
            .map_err(|e: Error| lines.err(e.to_string()))?;
        let featurizer: Featurizer = lines
            .keyed(&fields, "featurizer")?
            .parse()
            .map_err(|e: Error| lines.err(e.to_string()))?;
        let flag = match lines.keyed(&fields, "active")? {
            "1" => true,
            "0" => false,
            other => return Err(lines.err(format!("invalid active flag `{other}`"))),
        };
        let n_layers = lines.count(lines.keyed(&fields, "layers")?)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let shape = lines.record("layer")?;
            if shape.len() != 2 {
                return Err(lines.err("layer needs `<out>, <in>`"));
            }
            let (outs, ins) = (lines.count(shape[0])?, lines.count(shape[1])?);
            let w_fields = lines.record("w")?;
            let w = lines.reals(&w_fields, outs * ins)?;
            let b_fields = lines.record("b")?;
            let b = lines.reals(&b_fields, outs)?;
            let weight = RealMatrix::new(outs, ins, w).map_err(|e| lines.err(e.to_string()))?;
            layers.push(Layer::new(weight, b).map_err(|e| lines.err(e.to_string()))?);
        }
        let net = Mlp::from_layers(layers).map_err(|e| lines.err(e.to_string()))?;
        experts.push(Expert::new(role, featurizer, net).map_err(|e| lines.err(e.to_string()))?);
        active.push(flag);
    }
    if let Some((i, raw)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Parse {
            line: i + 1,
            message: format!("unexpected trailing content `{}`", raw.trim()),
        });
    }
    PredictorStack::with_active(experts, active, prior, lambda)
}

pub fn write_model(stack: &PredictorStack, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(stack)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<PredictorStack> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_model(&text)
}
