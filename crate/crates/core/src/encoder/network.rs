//! Data encoder `φ_X` (MLP or tabular ResNet) and the MLP scoring head `φ_O`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot, Matrix, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mlp,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// MLP hidden widths before the embedding layer; unused by the ResNet.
    pub hidden: Vec<usize>,
    /// Embedding width `h` (the ResNet's main width).
    pub embed_dim: usize,
    pub blocks: usize,
    pub block_hidden: usize,
    pub dropout_first: f64,
    pub dropout_second: f64,
    pub embed_activation: Activation,
}

impl EncoderSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, embed_dim: usize) -> Self {
        EncoderSpec {
            kind: EncoderKind::Mlp,
            input_dim,
            hidden,
            embed_dim,
            blocks: 0,
            block_hidden: 0,
            dropout_first: 0.0,
            dropout_second: 0.0,
            embed_activation: Activation::Identity,
        }
    }

    pub fn resnet(input_dim: usize, embed_dim: usize, blocks: usize, block_hidden: usize) -> Self {
        EncoderSpec {
            kind: EncoderKind::Resnet,
            input_dim,
            hidden: Vec::new(),
            embed_dim,
            blocks,
            block_hidden,
            dropout_first: 0.0,
            dropout_second: 0.0,
            embed_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.input_dim == 0 {
            errs.push("model.input_dim must be positive".to_string());
        }
        if self.embed_dim == 0 {
            errs.push("model.embed_dim must be positive".to_string());
        }
        if self.hidden.contains(&0) {
            errs.push("model.hidden widths must be positive".to_string());
        }
        if self.kind == EncoderKind::Resnet && self.blocks > 0 && self.block_hidden == 0 {
            errs.push("model.block_hidden must be positive".to_string());
        }
        for (name, p) in [
            ("dropout_first", self.dropout_first),
            ("dropout_second", self.dropout_second),
        ] {
            if !(0.0..1.0).contains(&p) {
                errs.push(format!("model.{name} must lie in [0, 1)"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadOutput {
    Sigmoid,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// Hidden widths between the embedding and the single output unit.
    pub hidden: Vec<usize>,
    pub output: HeadOutput,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config(vec!["model.head_hidden widths must be positive".into()]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from this seed.
    Train(u64),
    Eval,
}

fn linear_names(prefix: &str) -> (String, String) {
    (format!("{prefix}/w"), format!("{prefix}/b"))
}

fn insert_linear(ps: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let (w, b) = linear_names(prefix);
    ps.insert(w, glorot(fan_in, fan_out, rng))?;
    ps.insert(b, Matrix::zeros(1, fan_out))
}

pub fn init_encoder(spec: &EncoderSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    match spec.kind {
        EncoderKind::Mlp => {
            let mut widths = vec![spec.input_dim];
            widths.extend(&spec.hidden);
            widths.push(spec.embed_dim);
            for l in 0..widths.len() - 1 {
                insert_linear(&mut ps, &format!("encoder/l{l}"), widths[l], widths[l + 1], &mut rng)?;
            }
        }
        EncoderKind::Resnet => {
            insert_linear(&mut ps, "encoder/stem", spec.input_dim, spec.embed_dim, &mut rng)?;
            for k in 0..spec.blocks {
                insert_linear(&mut ps, &format!("encoder/block{k}/a"), spec.embed_dim, spec.block_hidden, &mut rng)?;
                insert_linear(&mut ps, &format!("encoder/block{k}/b"), spec.block_hidden, spec.embed_dim, &mut rng)?;
            }
        }
    }
    Ok(ps)
}

pub fn init_head(head: &HeadSpec, embed_dim: usize, seed: u64) -> Result<ParamSet> {
    head.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![embed_dim];
    widths.extend(&head.hidden);
    widths.push(1);
    let mut ps = ParamSet::new();
    for l in 0..widths.len() - 1 {
        insert_linear(&mut ps, &format!("head/l{l}"), widths[l], widths[l + 1], &mut rng)?;
    }
    Ok(ps)
}

fn linear(tape: &mut Tape, x: Var, params: &ParamSet, prefix: &str) -> Result<Var> {
    let (w, b) = linear_names(prefix);
    let w = tape.param(params, &w)?;
    let b = tape.param(params, &b)?;
    let xw = tape.matmul(x, w)?;
    tape.add_row_const(xw, b)
}

/// Inverted dropout; the mask depends only on `(seed, site)` and the shape.
fn dropout(tape: &mut Tape, x: Var, p: f64, mode: Mode, site: u64) -> Result<Var> {
    let Mode::Train(seed) = mode else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site);
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
    let m = tape.constant(mask);
    tape.hadamard(x, m)
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Relu => tape.relu(x),
    }
}

/// `E_X` for the batch `x` (rows are samples).
pub fn encode_tape(tape: &mut Tape, x: Var, spec: &EncoderSpec, params: &ParamSet, mode: Mode) -> Result<Var> {
    let cols = tape.value(x).cols();
    if cols != spec.input_dim {
        return Err(Error::shape(
            "encode",
            format!("input has {cols} columns, encoder expects {}", spec.input_dim),
        ));
    }
    match spec.kind {
        EncoderKind::Mlp => {
            let layers = spec.hidden.len() + 1;
            let mut h = x;
            for l in 0..layers {
                h = linear(tape, h, params, &format!("encoder/l{l}"))?;
                if l + 1 < layers {
                    h = tape.relu(h)?;
                    h = dropout(tape, h, spec.dropout_first, mode, l as u64)?;
                }
            }
            activate(tape, h, spec.embed_activation)
        }
        EncoderKind::Resnet => {
            let mut h = linear(tape, x, params, "encoder/stem")?;
            for k in 0..spec.blocks {
                let a = linear(tape, h, params, &format!("encoder/block{k}/a"))?;
                let a = tape.relu(a)?;
                let a = dropout(tape, a, spec.dropout_first, mode, 2 * k as u64)?;
                let b = linear(tape, a, params, &format!("encoder/block{k}/b"))?;
                let b = dropout(tape, b, spec.dropout_second, mode, 2 * k as u64 + 1)?;
                h = tape.add(h, b)?;
            }
            activate(tape, h, spec.embed_activation)
        }
    }
}

/// Head pre-activation, one logit per row (`m×1`).
pub fn head_tape(tape: &mut Tape, e: Var, head: &HeadSpec, params: &ParamSet) -> Result<Var> {
    let layers = head.hidden.len() + 1;
    let mut h = e;
    for l in 0..layers {
        h = linear(tape, h, params, &format!("head/l{l}"))?;
        if l + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

pub fn encode(x: &Matrix, spec: &EncoderSpec, params: &ParamSet, mode: Mode) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let e = encode_tape(&mut tape, xv, spec, params, mode)?;
    Ok(tape.value(e).clone())
}

/// Scores from embeddings; sigmoid probabilities or raw logits per `head.output`.
pub fn score(e: &Matrix, head: &HeadSpec, params: &ParamSet) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let ev = tape.constant(e.clone());
    let z = head_tape(&mut tape, ev, head, params)?;
    let z = match head.output {
        HeadOutput::Sigmoid => tape.sigmoid(z)?,
        HeadOutput::Raw => z,
    };
    let out = tape.value(z).data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite anomaly score".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mlp_passes_input_through() {
        let spec = EncoderSpec::mlp(3, vec![3], 3);
        let mut ps = init_encoder(&spec, 0).unwrap();
        for l in 0..2 {
            *ps.get_mut(&format!("encoder/l{l}/w")).unwrap() = Matrix::identity(3);
        }
        // Nonnegative input so the hidden ReLU is also the identity.
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 4.0]]);
        assert_eq!(encode(&x, &spec, &ps, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn zeroed_blocks_leave_stem() {
        let spec = EncoderSpec::resnet(4, 3, 1, 5);
        let mut ps = init_encoder(&spec, 1).unwrap();
        for name in ["encoder/block0/a/w", "encoder/block0/b/w"] {
            let m = ps.get_mut(name).unwrap();
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        let x = Matrix::from_fn(6, 4, |r, c| (r as f64 - 2.0) * 0.3 + c as f64);
        let stem = x.matmul(ps.get("encoder/stem/w").unwrap()).unwrap();
        assert_eq!(encode(&x, &spec, &ps, Mode::Eval).unwrap(), stem);
    }

    #[test]
    fn zero_head_gives_half() {
        let head = HeadSpec {
            hidden: vec![],
            output: HeadOutput::Sigmoid,
        };
        let mut ps = init_head(&head, 4, 0).unwrap();
        *ps.get_mut("head/l0/w").unwrap() = Matrix::zeros(4, 1);
        let e = Matrix::from_fn(5, 4, |r, c| (r * c) as f64);
        assert_eq!(score(&e, &head, &ps).unwrap(), vec![0.5; 5]);
        assert_eq!(score(&Matrix::zeros(1, 4), &head, &ps).unwrap().len(), 1);
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut spec = EncoderSpec::resnet(3, 4, 2, 6);
        spec.dropout_first = 0.5;
        spec.dropout_second = 0.2;
        let ps = init_encoder(&spec, 2).unwrap();
        let x = Matrix::from_fn(8, 3, |r, c| (r + c) as f64 * 0.1);
        let e1 = encode(&x, &spec, &ps, Mode::Eval).unwrap();
        let e2 = encode(&x, &spec, &ps, Mode::Eval).unwrap();
        assert!(e1.bit_eq(&e2));
        let t1 = encode(&x, &spec, &ps, Mode::Train(7)).unwrap();
        let t2 = encode(&x, &spec, &ps, Mode::Train(7)).unwrap();
        let t3 = encode(&x, &spec, &ps, Mode::Train(8)).unwrap();
        assert!(t1.bit_eq(&t2));
        assert!(!t1.bit_eq(&t3));
        assert!(!t1.bit_eq(&e1));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = EncoderSpec::mlp(0, vec![0], 0);
        spec.dropout_first = 1.0;
        match spec.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 4),
            other => panic!("{other:?}"),
        }
        let x = Matrix::zeros(2, 5);
        let ok = EncoderSpec::mlp(4, vec![], 2);
        let ps = init_encoder(&ok, 0).unwrap();
        assert!(encode(&x, &ok, &ps, Mode::Eval).is_err());
    }
}
