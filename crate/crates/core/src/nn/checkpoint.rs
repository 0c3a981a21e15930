//! Plain-text weight checkpoints.
//!
//! ```text
//! layers=<n>
//! dims=<out>x<in> activation=<name>
//! <in values>          (repeated <out> times, row-major weights)
//! <out values>         (bias)
//! ```
//!
//! Values are written with the shortest representation that parses back
//! to the identical float, so save/load round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::layer::{Activation, DenseLayer};
use super::network::Mlp;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn join<T: Real>(out: &mut String, vals: impl Iterator<Item = T>) {
    let mut first = true;
    for v in vals {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v}").expect("string write");
    }
    out.push('\n');
}

pub fn to_text<T: Real>(net: &Mlp<T>) -> String {
    let mut s = format!("layers={}\n", net.layers().len());
    for layer in net.layers() {
        writeln!(
            s,
            "dims={}x{} activation={}",
            layer.output_dim(),
            layer.input_dim(),
            layer.activation().name()
        )
        .expect("string write");
        for row in layer.weights().rows() {
            join(&mut s, row.iter().copied());
        }
        join(&mut s, layer.bias().iter().copied());
    }
    s
}

pub fn from_text<T: Real>(text: &str, source: &str) -> Result<Mlp<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(source, 0, format!("unexpected end of file, expected {what}")))
    };
    let (ln, header) = next("header")?;
    let n: usize = header
        .trim()
        .strip_prefix("layers=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(source, ln + 1, "expected layers=<n>"))?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, spec) = next("layer header")?;
        let mut parts = spec.split_whitespace();
        let dims = parts
            .next()
            .and_then(|p| p.strip_prefix("dims="))
            .ok_or_else(|| Error::parse(source, ln + 1, "expected dims=<out>x<in>"))?;
        let (out, inp) = dims
            .split_once('x')
            .and_then(|(o, i)| Some((o.parse::<usize>().ok()?, i.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::parse(source, ln + 1, format!("bad dims '{dims}'")))?;
        let act = parts
            .next()
            .and_then(|p| p.strip_prefix("activation="))
            .and_then(Activation::from_name)
            .ok_or_else(|| Error::parse(source, ln + 1, "expected activation=<name>"))?;
        let mut parse_row = |len: usize| -> Result<Vec<T>> {
            let (ln, row) = next("weight row")?;
            let vals = row
                .split_whitespace()
                .map(|v| v.parse::<T>().map_err(|_| Error::parse(source, ln + 1, format!("bad number '{v}'"))))
                .collect::<Result<Vec<T>>>()?;
            if vals.len() != len {
                return Err(Error::parse(source, ln + 1, format!("expected {len} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let mut w = Vec::with_capacity(out * inp);
        for _ in 0..out {
            w.extend(parse_row(inp)?);
        }
        let b = parse_row(out)?;
        let weights = Array2::from_shape_vec((out, inp), w).expect("shape checked");
        layers.push(DenseLayer::new(weights, Array1::from(b), act)?);
    }
    Mlp::new(layers)
}

pub fn save<T: Real>(net: &Mlp<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Mlp<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, &path.display().to_string())
}
