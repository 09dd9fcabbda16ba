//! Parameters, dense layers, and the checkpoint text container.
//!
//! Checkpoint layout:
//!
//! ```text
//! roadrisk-checkpoint 1
//! <name> <rows> <cols>
//! <rows*cols space-separated values>
//! ...
//! ```
//!
//! Values are written in shortest round-trip decimal form, so reading a
//! checkpoint back reproduces every bit.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use super::{NnError, Tape, Tensor, Var};

pub const CHECKPOINT_HEADER: &str = "roadrisk-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NnError> {
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: "param" });
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Parameter { name: name.to_string(), value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a parameter drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Result<ParamId, NnError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.by_name.get(name).map(|&i| ParamId(i)).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from(CHECKPOINT_HEADER);
        out.push('\n');
        for p in &self.params {
            let _ = writeln!(out, "{} {} {}", p.name, p.value.rows(), p.value.cols());
            let vals: Vec<String> = p.value.data().iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let bad = |line: usize, msg: &str| NnError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            Some((_, h)) => return Err(NnError::Checkpoint(format!("unsupported header {h:?}"))),
            None => return Err(NnError::Checkpoint("empty checkpoint".into())),
        }
        let mut store = ParamStore::new();
        while let Some((i, head)) = lines.next() {
            if head.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = head.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(i + 1, "expected `name rows cols`"));
            };
            let rows: usize = rows.parse().map_err(|_| bad(i + 1, "bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| bad(i + 1, "bad column count"))?;
            let (j, body) = lines.next().unwrap_or((i + 1, ""));
            let data: Vec<f64> = body
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(j + 1, "bad value"))?;
            if data.len() != rows * cols {
                return Err(bad(j + 1, &format!("expected {} values, found {}", rows * cols, data.len())));
            }
            store.add(name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Ok(store)
    }

    /// Overwrites values from `other`, which must hold the same names and
    /// shapes in the same order.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.params.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!("expected {} parameters, found {}", self.params.len(), other.params.len())));
        }
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            if p.name != q.name || p.value.shape() != q.value.shape() {
                return Err(NnError::Checkpoint(format!("parameter {:?} {:?} does not match {:?} {:?}", p.name, p.value.shape(), q.name, q.value.shape())));
            }
            p.value = q.value.clone();
        }
        Ok(())
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Result<Self, NnError> {
        let w = store.add_uniform(&format!("{name}.w"), d_in, d_out, d_in, rng)?;
        let b = if bias { Some(store.add_uniform(&format!("{name}.b"), 1, d_out, d_in, rng)?) } else { None };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w)?;
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).cols()
    }
}

/// Stack of [`Linear`] layers with ReLU between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the last layer too.
    pub relu_last: bool,
}

impl Mlp {
    /// `dims = [d_in, h1, ..., d_out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], relu_last: bool, rng: &mut impl Rng) -> Result<Self, NnError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], true, rng))
            .collect::<Result<_, _>>()?;
        Ok(Mlp { layers, relu_last })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, NnError> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x)?;
            if i < last || self.relu_last {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        Mlp::new(&mut s, "m", &[3, 4, 2], false, &mut rng).unwrap();
        s.add("tiny", Tensor::from_rows(&[vec![1e-300, -0.1 + 0.2, 1.0 / 3.0]])).unwrap();
        let text = s.to_checkpoint();
        let back = ParamStore::from_checkpoint(&text).unwrap();
        assert_eq!(back.params(), s.params());
        assert_eq!(back.to_checkpoint(), text);
    }

    #[test]
    fn checkpoint_rejects_bad_input() {
        assert!(ParamStore::from_checkpoint("nope\n").is_err());
        assert!(ParamStore::from_checkpoint("roadrisk-checkpoint 1\nw 1 2\n1.0\n").is_err());
    }

    #[test]
    fn init_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let id = s.add_uniform("w", 16, 8, 16, &mut rng).unwrap();
        assert!(s.value(id).data().iter().all(|v| v.abs() <= 0.25));
        assert!(s.add("w", Tensor::zeros(1, 1)).is_err());
    }
}
