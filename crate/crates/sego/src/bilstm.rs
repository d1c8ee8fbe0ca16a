//! Bi-LSTM sentence encoder.
//!
//! Each sentence becomes a fixed vector by concatenating the last state of
//! a forward LSTM over its word embeddings with the last state of a
//! backward LSTM, i.e. the backward state after it consumed the first
//! token. Per-direction hidden size is half the sentence-state size, so
//! the concatenation lands exactly at the sentence-node dimension.

use rand_chacha::ChaCha8Rng;

use crate::params::{xavier, zeros, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Result, Tape, Var};

/// One LSTM cell: four gates, each with input, recurrent and bias parts.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    pub w_i: ParamId,
    pub u_i: ParamId,
    pub b_i: ParamId,
    pub w_f: ParamId,
    pub u_f: ParamId,
    pub b_f: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub b_o: ParamId,
    pub w_c: ParamId,
    pub u_c: ParamId,
    pub b_c: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCellParams {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut mat = |name: &str, rows: usize, cols: usize| {
            store.register(&format!("{prefix}.{name}"), &[rows, cols], xavier(&[rows, cols], rng))
        };
        let w_i = mat("w_i", hidden_dim, input_dim);
        let w_f = mat("w_f", hidden_dim, input_dim);
        let w_o = mat("w_o", hidden_dim, input_dim);
        let w_c = mat("w_c", hidden_dim, input_dim);
        let u_i = mat("u_i", hidden_dim, hidden_dim);
        let u_f = mat("u_f", hidden_dim, hidden_dim);
        let u_o = mat("u_o", hidden_dim, hidden_dim);
        let u_c = mat("u_c", hidden_dim, hidden_dim);
        let mut bias = |name: &str| {
            store.register(&format!("{prefix}.{name}"), &[hidden_dim], zeros(hidden_dim))
        };
        let b_i = bias("b_i");
        let b_f = bias("b_f");
        let b_o = bias("b_o");
        let b_c = bias("b_c");
        LstmCellParams {
            w_i,
            u_i,
            b_i,
            w_f,
            u_f,
            b_f,
            w_o,
            u_o,
            b_o,
            w_c,
            u_c,
            b_c,
            input_dim,
            hidden_dim,
        }
    }
}

/// One LSTM step; returns the next hidden and cell states.
pub fn lstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    bind: &Binding,
    p: &LstmCellParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape<S>, w: ParamId, u: ParamId, b: ParamId| -> Result<Var> {
        let wx = tape.matmul(bind.var(w), x)?;
        let uh = tape.matmul(bind.var(u), h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, bind.var(b))
    };
    let i_pre = gate(tape, p.w_i, p.u_i, p.b_i)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = gate(tape, p.w_f, p.u_f, p.b_f)?;
    let f = tape.sigmoid(f_pre);
    let o_pre = gate(tape, p.w_o, p.u_o, p.b_o)?;
    let o = tape.sigmoid(o_pre);
    let c_pre = gate(tape, p.w_c, p.u_c, p.b_c)?;
    let c_tilde = tape.tanh(c_pre);

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, c_tilde)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// Independent forward and backward LSTMs over word embeddings.
#[derive(Debug, Clone, Copy)]
pub struct BiLstmParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
    /// Sentence-state size; each direction contributes half.
    pub output_dim: usize,
}

impl BiLstmParams {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        input_dim: usize,
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(output_dim % 2 == 0, "sentence dimension must be even");
        let hidden = output_dim / 2;
        BiLstmParams {
            forward: LstmCellParams::register(store, "bilstm.fwd", input_dim, hidden, rng),
            backward: LstmCellParams::register(store, "bilstm.bwd", input_dim, hidden, rng),
            output_dim,
        }
    }
}

fn run_direction<S: Scalar>(
    tape: &mut Tape<S>,
    bind: &Binding,
    cell: &LstmCellParams,
    inputs: impl Iterator<Item = Var>,
) -> Result<Var> {
    let mut h = tape.zeros(&[cell.hidden_dim]);
    let mut c = tape.zeros(&[cell.hidden_dim]);
    for x in inputs {
        let (nh, nc) = lstm_step(tape, bind, cell, x, h, c)?;
        h = nh;
        c = nc;
    }
    Ok(h)
}

/// Encodes one sentence from its (already embedded) token vectors into a
/// single vector of the sentence-state size.
pub fn encode_sentence<S: Scalar>(
    tape: &mut Tape<S>,
    bind: &Binding,
    params: &BiLstmParams,
    token_vectors: &[Var],
) -> Result<Var> {
    debug_assert!(!token_vectors.is_empty(), "sentences are non-empty");
    let fwd = run_direction(tape, bind, &params.forward, token_vectors.iter().copied())?;
    let bwd = run_direction(tape, bind, &params.backward, token_vectors.iter().rev().copied())?;
    tape.concat(&[fwd, bwd])
}
