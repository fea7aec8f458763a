//! Plain-text weight checkpoints.
//!
//! ```text
//! coop-rl-weights v1
//! layers <d>
//! layer <in_dim> <out_dim> <activation>
//! <out_dim values>        # repeated in_dim + 1 times, bias row last
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so reading a
//! written checkpoint reproduces every weight exactly.

use std::io::{BufRead, Write};

use crate::linalg::Matrix;

use super::{Activation, Layer, NetError, Network};

pub const CHECKPOINT_MAGIC: &str = "coop-rl-weights v1";

pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<(), NetError> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "layers {}", net.depth())?;
    for layer in net.layers() {
        writeln!(
            out,
            "layer {} {} {}",
            layer.in_dim(),
            layer.out_dim(),
            layer.activation
        )?;
        for r in 0..layer.weights.rows() {
            let row: Vec<String> = layer.weights.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Network, NetError> {
    let mut lines = input.lines().enumerate().filter_map(|(n, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((n + 1, other)),
    });
    let mut next = |what: &str| -> Result<(usize, String), NetError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(bad(format!("unexpected end of file, expected {what}"))),
        }
    };

    let (_, magic) = next("header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad header `{}`", magic.trim())));
    }
    let (n, count) = next("layer count")?;
    let depth: usize = count
        .trim()
        .strip_prefix("layers ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(format!("line {n}: expected `layers <d>`")))?;

    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let (n, head) = next("layer header")?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "layer" {
            return Err(bad(format!(
                "line {n}: expected `layer <in> <out> <activation>`"
            )));
        }
        let in_dim: usize = parts[1]
            .parse()
            .map_err(|_| bad(format!("line {n}: bad in_dim")))?;
        let out_dim: usize = parts[2]
            .parse()
            .map_err(|_| bad(format!("line {n}: bad out_dim")))?;
        let activation: Activation = parts[3].parse()?;
        let mut data = Vec::with_capacity((in_dim + 1) * out_dim);
        for _ in 0..=in_dim {
            let (n, row) = next("weight row")?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| bad(format!("line {n}: bad number `{tok}`")))?;
                data.push(v);
            }
            if data.len() - before != out_dim {
                return Err(bad(format!(
                    "line {n}: expected {out_dim} values, found {}",
                    data.len() - before
                )));
            }
        }
        layers.push(Layer {
            weights: Matrix::from_vec(in_dim + 1, out_dim, data)?,
            activation,
        });
    }
    Network::from_layers(layers)
}
