//! The embedding network `f`, the set-union composition network `g`, and
//! their text persistence format.
//!
//! `f` is a two-layer tanh MLP. `g(a, b) = W1 a + W1 b + W2 (a ⊙ b)`, wrapped
//! in a unit-length normalization for [`Variant::CmpEmL2`]; that variant also
//! normalizes the output of `f`. [`Variant::CmpEm`] leaves both unnormalized
//! and defers normalization to inference time. [`Variant::SingleEm`] carries
//! no `g` at all.
//!
//! Every forward pass has two entry points: plain methods on
//! [`CompositionalModel`] for inference, and [`BoundModel`] methods that
//! record into an autodiff [`Graph`] for training. Both run the same kernels
//! in the same order and produce bit-identical values.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::autodiff::{l2_normalized, matvec, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    CmpEm,
    CmpEmL2,
    SingleEm,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::CmpEm => "cmpem",
            Variant::CmpEmL2 => "cmpeml2",
            Variant::SingleEm => "singleem",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::CmpEm => "CmpEm",
            Variant::CmpEmL2 => "CmpEmL2",
            Variant::SingleEm => "SingleEm",
        }
    }

    pub fn has_composition(self) -> bool {
        !matches!(self, Variant::SingleEm)
    }

    pub fn normalizes_in_network(self) -> bool {
        matches!(self, Variant::CmpEmL2)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cmpem" => Ok(Variant::CmpEm),
            "cmpeml2" => Ok(Variant::CmpEmL2),
            "singleem" | "single" => Ok(Variant::SingleEm),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            input: 64,
            hidden: 128,
            embed: 32,
        }
    }
}

/// Noise scale on the identity-biased `W1` and on `W2` at initialization.
pub const G_INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionalModel {
    dims: Dims,
    variant: Variant,
    /// `f` then `g` parameters, in [`ParamId`] order.
    params: Vec<Tensor>,
}

/// Position of each parameter block; also the on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    HiddenWeight = 0,
    HiddenBias = 1,
    OutWeight = 2,
    OutBias = 3,
    W1 = 4,
    W2 = 5,
}

impl ParamId {
    pub const ALL: [ParamId; 6] = [
        ParamId::HiddenWeight,
        ParamId::HiddenBias,
        ParamId::OutWeight,
        ParamId::OutBias,
        ParamId::W1,
        ParamId::W2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::HiddenWeight => "f.hidden.weight",
            ParamId::HiddenBias => "f.hidden.bias",
            ParamId::OutWeight => "f.out.weight",
            ParamId::OutBias => "f.out.bias",
            ParamId::W1 => "g.w1",
            ParamId::W2 => "g.w2",
        }
    }

    pub fn shape(self, d: Dims) -> Vec<usize> {
        match self {
            ParamId::HiddenWeight => vec![d.hidden, d.input],
            ParamId::HiddenBias => vec![d.hidden],
            ParamId::OutWeight => vec![d.embed, d.hidden],
            ParamId::OutBias => vec![d.embed],
            ParamId::W1 | ParamId::W2 => vec![d.embed, d.embed],
        }
    }

    pub fn is_composition(self) -> bool {
        matches!(self, ParamId::W1 | ParamId::W2)
    }
}

fn param_ids(variant: Variant) -> &'static [ParamId] {
    if variant.has_composition() {
        &ParamId::ALL
    } else {
        &ParamId::ALL[..4]
    }
}

impl CompositionalModel {
    /// All-zero parameters (with `g` present iff the variant composes).
    pub fn zeros(dims: Dims, variant: Variant) -> Self {
        let params = param_ids(variant)
            .iter()
            .map(|p| Tensor::zeros(p.shape(dims)))
            .collect();
        CompositionalModel { dims, variant, params }
    }

    /// Fan-in scaled uniform weights for `f` (tanh gain on the hidden
    /// layer), zero biases, `W1 = I + noise`, `W2 = noise`.
    pub fn init<R: Rng + ?Sized>(dims: Dims, variant: Variant, rng: &mut R) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.embed == 0 {
            return Err(Error::InvalidArgument(format!("dimensions must be positive: {dims:?}")));
        }
        let mut m = CompositionalModel::zeros(dims, variant);
        let mut uniform = |t: &mut Tensor, fan_in: usize, gain: f64| -> Result<()> {
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            t.data_mut().iter_mut().for_each(|w| *w = rng.sample(dist));
            Ok(())
        };
        uniform(&mut m.params[ParamId::HiddenWeight as usize], dims.input, 5.0 / 3.0)?;
        uniform(&mut m.params[ParamId::OutWeight as usize], dims.hidden, 1.0)?;
        if variant.has_composition() {
            let e = dims.embed;
            for (i, w) in m.params[ParamId::W1 as usize].data_mut().iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *w = if i / e == i % e { 1.0 } else { 0.0 } + G_INIT_NOISE * noise;
            }
            for w in m.params[ParamId::W2 as usize].data_mut() {
                let noise: f64 = rng.sample(StandardNormal);
                *w = G_INIT_NOISE * noise;
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id as usize)
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.params.get_mut(id as usize)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_ids(&self) -> &'static [ParamId] {
        param_ids(self.variant)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn p(&self, id: ParamId) -> &[f64] {
        self.params[id as usize].data()
    }

    /// `f(x)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims;
        if x.len() != d.input {
            return Err(Error::DimensionMismatch {
                what: "embed_f input",
                expected: d.input,
                got: x.len(),
            });
        }
        let pre = matvec(self.p(ParamId::HiddenWeight), d.hidden, d.input, x);
        let h: Vec<f64> = pre
            .iter()
            .zip(self.p(ParamId::HiddenBias))
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let out = matvec(self.p(ParamId::OutWeight), d.embed, d.hidden, &h);
        let e: Vec<f64> = out.iter().zip(self.p(ParamId::OutBias)).map(|(a, b)| a + b).collect();
        if self.variant.normalizes_in_network() {
            l2_normalized(&e)
        } else {
            Ok(e)
        }
    }

    /// `g(a, b)`. Arguments are put in lexicographic order before the `W1`
    /// terms are summed, so swapping them is a bitwise no-op.
    pub fn compose(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if !self.variant.has_composition() {
            return Err(Error::InvalidArgument(format!(
                "{} model has no composition function",
                self.variant.label()
            )));
        }
        let m = self.dims.embed;
        for v in [a, b] {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "compose_g input",
                    expected: m,
                    got: v.len(),
                });
            }
        }
        let (first, second) = if lexicographic(a, b) == Ordering::Greater {
            (b, a)
        } else {
            (a, b)
        };
        let w1a = matvec(self.p(ParamId::W1), m, m, first);
        let w1b = matvec(self.p(ParamId::W1), m, m, second);
        let had: Vec<f64> = first.iter().zip(second).map(|(x, y)| x * y).collect();
        let w2h = matvec(self.p(ParamId::W2), m, m, &had);
        let out: Vec<f64> = w1a
            .iter()
            .zip(&w1b)
            .map(|(x, y)| x + y)
            .zip(&w2h)
            .map(|(s, z)| s + z)
            .collect();
        if self.variant.normalizes_in_network() {
            l2_normalized(&out)
        } else {
            Ok(out)
        }
    }

    /// Registers every parameter as a gradient-tracking leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundModel {
        let vars = self.params.iter().map(|t| graph.param(t.clone())).collect();
        BoundModel {
            dims: self.dims,
            variant: self.variant,
            vars,
        }
    }

    /// Wraps variables already on a graph, one per parameter block in order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        if vars.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter variables",
                expected: self.params.len(),
                got: vars.len(),
            });
        }
        Ok(BoundModel {
            dims: self.dims,
            variant: self.variant,
            vars: vars.to_vec(),
        })
    }

    pub fn to_text(&self) -> String {
        let d = self.dims;
        let mut s = String::new();
        s.push_str(MODEL_MAGIC);
        s.push('\n');
        s.push_str(&format!("format_version {FORMAT_VERSION}\n"));
        s.push_str(&format!("dims {} {} {}\n", d.input, d.hidden, d.embed));
        s.push_str(&format!("variant {}\n", self.variant.tag()));
        for (&id, t) in self.param_ids().iter().zip(&self.params) {
            let shape = t.shape();
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            s.push_str(&format!("block {} {}\n", id.name(), dims.join(" ")));
            let row_len = *shape.last().unwrap_or(&1);
            for row in t.data().chunks(row_len) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                s.push_str(&vals.join(" "));
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next_fields = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (no, l) = lines.next().ok_or_else(|| Error::MalformedModel {
                line: 0,
                msg: format!("missing {what}"),
            })?;
            Ok((no, l.split_whitespace().collect()))
        };
        let malformed = |line: usize, msg: String| Error::MalformedModel { line, msg };

        let (no, magic) = next_fields("header")?;
        if magic != [MODEL_MAGIC] {
            return Err(malformed(no, format!("expected `{MODEL_MAGIC}`")));
        }
        let (no, ver) = next_fields("format_version")?;
        let version: u32 = match ver.as_slice() {
            ["format_version", v] => v.parse().map_err(|_| malformed(no, "bad format_version".into()))?,
            _ => return Err(malformed(no, "expected `format_version <n>`".into())),
        };
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (no, dl) = next_fields("dims")?;
        let dims = match dl.as_slice() {
            ["dims", a, b, c] => {
                let p = |s: &str| s.parse::<usize>().map_err(|_| malformed(no, "bad dims".into()));
                Dims {
                    input: p(a)?,
                    hidden: p(b)?,
                    embed: p(c)?,
                }
            }
            _ => return Err(malformed(no, "expected `dims <input> <hidden> <embed>`".into())),
        };
        let (no, vl) = next_fields("variant")?;
        let variant: Variant = match vl.as_slice() {
            ["variant", v] => v.parse().map_err(|e: Error| malformed(no, e.to_string()))?,
            _ => return Err(malformed(no, "expected `variant <tag>`".into())),
        };

        let mut model = CompositionalModel::zeros(dims, variant);
        for &id in param_ids(variant) {
            let (no, header) = next_fields(id.name()).map_err(|_| Error::UnexpectedEnd(id.name().into()))?;
            if header.len() < 2 || header[0] != "block" {
                return Err(malformed(no, format!("expected `block {}`", id.name())));
            }
            if header[1] != id.name() {
                return Err(malformed(
                    no,
                    format!("expected block `{}`, found `{}`", id.name(), header[1]),
                ));
            }
            let declared = header[2..]
                .iter()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| malformed(no, "bad block dimensions".into()))?;
            let expected = id.shape(dims);
            if declared != expected {
                return Err(Error::BlockDims {
                    block: id.name().into(),
                    declared,
                    expected,
                });
            }
            let want: usize = expected.iter().product();
            let dst = model.params[id as usize].data_mut();
            let mut filled = 0;
            while filled < want {
                let (no, row) = next_fields(id.name()).map_err(|_| Error::UnexpectedEnd(id.name().into()))?;
                if row.first().is_some_and(|t| *t == "block" || *t == "end") {
                    return Err(Error::UnexpectedEnd(id.name().into()));
                }
                for tok in row {
                    if filled == want {
                        return Err(malformed(no, format!("too many values in block `{}`", id.name())));
                    }
                    dst[filled] = tok.parse().map_err(|_| malformed(no, format!("bad number `{tok}`")))?;
                    filled += 1;
                }
            }
        }
        let (no, tail) = next_fields("end").map_err(|_| Error::UnexpectedEnd("end".into()))?;
        if tail != ["end"] {
            return Err(malformed(no, "expected `end`".into()));
        }
        Ok(model)
    }
}

const MODEL_MAGIC: &str = "compemb-model";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &CompositionalModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CompositionalModel> {
    CompositionalModel::from_text(&fs::read_to_string(path)?)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// A model's parameters registered in a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    dims: Dims,
    variant: Variant,
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars.get(id as usize).copied()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn embed(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let got = g.value(x).len();
        if got != self.dims.input {
            return Err(Error::DimensionMismatch {
                what: "embed_f input",
                expected: self.dims.input,
                got,
            });
        }
        let pre = g.matmul(self.vars[ParamId::HiddenWeight as usize], x)?;
        let pre = g.add(pre, self.vars[ParamId::HiddenBias as usize])?;
        let h = g.tanh(pre)?;
        let out = g.matmul(self.vars[ParamId::OutWeight as usize], h)?;
        let e = g.add(out, self.vars[ParamId::OutBias as usize])?;
        if self.variant.normalizes_in_network() {
            g.l2_normalize(e)
        } else {
            Ok(e)
        }
    }

    pub fn compose(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        if !self.variant.has_composition() {
            return Err(Error::InvalidArgument(format!(
                "{} model has no composition function",
                self.variant.label()
            )));
        }
        let (first, second) = if lexicographic(g.value(a).data(), g.value(b).data()) == Ordering::Greater {
            (b, a)
        } else {
            (a, b)
        };
        let w1 = self.vars[ParamId::W1 as usize];
        let w2 = self.vars[ParamId::W2 as usize];
        let w1a = g.matmul(w1, first)?;
        let w1b = g.matmul(w1, second)?;
        let had = g.mul(first, second)?;
        let w2h = g.matmul(w2, had)?;
        let s = g.add(w1a, w1b)?;
        let out = g.add(s, w2h)?;
        if self.variant.normalizes_in_network() {
            g.l2_normalize(out)
        } else {
            Ok(out)
        }
    }

    /// Gradients per parameter, zeros where the loss did not reach.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec))
            .collect()
    }
}
