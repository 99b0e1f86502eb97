//! Declarative network description and its compact text form.
//!
//! The grammar is a dash-separated list of `C(k,n,s)`, `P(k1,k2,s1,s2)`,
//! `FC(n)`, `SM(n)` and `DC(n)` tokens, case-insensitive. A ReLU follows every
//! `C` and `FC` implicitly. `SM` closes the shared trunk and may be followed by
//! a `DC` head, written either `-DC(n)` or `(DC(n))`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::layers::{conv_output_extent, PoolWindow};

/// One layer of the expanded stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3d { kernel: usize, filters: usize, stride: usize },
    Pool3d(PoolWindow),
    Fc { units: usize },
    Relu,
    Softmax { classes: usize },
    Code { length: usize },
}

impl LayerSpec {
    /// Zero padding used by a convolution: `kernel / 2` on every axis, which
    /// is 1 for the 3x3x3 kernels of the reference stack.
    pub fn conv_pad(kernel: usize) -> usize {
        kernel / 2
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv3d { kernel, filters, stride } => {
                if input.len() != 4 {
                    return Err(Error::InvalidShape {
                        shape: input.to_vec(),
                        reason: "convolution expects [C,T,H,W]".into(),
                    });
                }
                let pad = Self::conv_pad(kernel);
                let mut out = vec![filters];
                for &extent in &input[1..] {
                    out.push(conv_output_extent(extent, kernel, stride, pad).ok_or_else(|| {
                        Error::InvalidShape {
                            shape: input.to_vec(),
                            reason: format!("kernel {kernel} does not fit"),
                        }
                    })?);
                }
                Ok(out)
            }
            LayerSpec::Pool3d(w) => w.output_shape(input),
            LayerSpec::Fc { units } => Ok(vec![units]),
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax { classes } => Ok(vec![classes]),
            LayerSpec::Code { length } => Ok(vec![length]),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv3d { kernel, filters, stride } => write!(f, "C({kernel},{filters},{stride})"),
            LayerSpec::Pool3d(w) => write!(f, "P({},{},{},{})", w.kernel_t, w.kernel_s, w.stride_t, w.stride_s),
            LayerSpec::Fc { units } => write!(f, "FC({units})"),
            LayerSpec::Relu => write!(f, "RELU"),
            LayerSpec::Softmax { classes } => write!(f, "SM({classes})"),
            LayerSpec::Code { length } => write!(f, "DC({length})"),
        }
    }
}

/// Parsed network: a shared trunk, a softmax head and an optional
/// discriminative code head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    trunk: Vec<LayerSpec>,
    classes: usize,
    code_length: Option<usize>,
}

/// The reference C3D stack with a 12-way softmax and a 4096-neuron code head.
pub const REFERENCE_SPEC: &str = "C(3,64,1)-P(1,2,1,2)-C(3,128,1)-P(2,2,2,2)-C(3,256,1)-C(3,256,1)-P(2,2,2,2)-C(3,512,1)-C(3,512,1)-P(2,2,2,2)-C(3,512,1)-C(3,512,1)-P(2,2,2,2)-FC(4096)-FC(4096)-SM(12)-DC(4096)";

impl NetworkSpec {
    /// Trunk layers with their implicit ReLUs, excluding the heads.
    pub fn trunk(&self) -> &[LayerSpec] {
        &self.trunk
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn code_length(&self) -> Option<usize> {
        self.code_length
    }

    /// Same trunk and softmax head, with the code head replaced or removed.
    pub fn with_code_length(&self, code_length: Option<usize>) -> Self {
        Self {
            code_length,
            ..self.clone()
        }
    }

    /// Shape after every trunk layer, starting from `input`. The last entry
    /// is the shape of the features feeding both heads.
    pub fn trunk_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.trunk.len());
        let mut current = input.to_vec();
        for layer in &self.trunk {
            current = layer.output_shape(&current)?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Flattened width of the features feeding both heads.
    pub fn feature_len(&self, input: &[usize]) -> Result<usize> {
        let shapes = self.trunk_shapes(input)?;
        Ok(shapes.last().map(|s| s.as_slice()).unwrap_or(input).iter().product())
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .trunk
            .iter()
            .filter(|l| !matches!(l, LayerSpec::Relu))
            .map(|l| l.to_string())
            .collect();
        parts.push(LayerSpec::Softmax { classes: self.classes }.to_string());
        if let Some(length) = self.code_length {
            parts.push(LayerSpec::Code { length }.to_string());
        }
        f.write_str(&parts.join("-"))
    }
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            input: self.input.to_string(),
            reason: format!("{} (at offset {})", reason.into(), self.pos),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_separators(&mut self) -> bool {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c == '-' || c == '\u{2013}' || c == '\u{2014}' || c.is_whitespace()) {
            self.pos += 1;
        }
        self.pos > start
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, ch: char) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{ch}'")))
        }
    }

    fn name(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect::<String>().to_ascii_uppercase()
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let value: usize = text.parse().map_err(|_| self.err("expected a positive integer"))?;
        if value == 0 {
            return Err(self.err("layer arguments must be positive"));
        }
        Ok(value)
    }

    fn args(&mut self) -> Result<Vec<usize>> {
        self.expect('(')?;
        let mut out = vec![self.number()?];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                    out.push(self.number()?);
                }
                Some(')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err("expected ',' or ')'")),
            }
        }
    }

    fn layer(&mut self) -> Result<LayerSpec> {
        let name = self.name();
        let args = self.args()?;
        let arity = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(self.err(format!("{name} takes {n} arguments, got {}", args.len())))
            }
        };
        match name.as_str() {
            "C" => {
                arity(3)?;
                Ok(LayerSpec::Conv3d { kernel: args[0], filters: args[1], stride: args[2] })
            }
            "P" => {
                arity(4)?;
                Ok(LayerSpec::Pool3d(PoolWindow {
                    kernel_t: args[0],
                    kernel_s: args[1],
                    stride_t: args[2],
                    stride_s: args[3],
                }))
            }
            "FC" => {
                arity(1)?;
                Ok(LayerSpec::Fc { units: args[0] })
            }
            "SM" => {
                arity(1)?;
                Ok(LayerSpec::Softmax { classes: args[0] })
            }
            "DC" => {
                arity(1)?;
                Ok(LayerSpec::Code { length: args[0] })
            }
            "" => Err(self.err("expected a layer name")),
            other => Err(self.err(format!("unknown layer {other:?}"))),
        }
    }

    fn parse(mut self) -> Result<NetworkSpec> {
        let mut trunk = Vec::new();
        let mut classes = None;
        let mut code_length = None;
        self.skip_separators();
        while self.pos < self.chars.len() {
            if classes.is_some() && code_length.is_none() && self.peek() == Some('(') {
                // nested-head form "SM(n)(DC(n))"
                self.pos += 1;
                match self.layer()? {
                    LayerSpec::Code { length } => code_length = Some(length),
                    _ => return Err(self.err("only DC may be parenthesized after SM")),
                }
                self.expect(')')?;
            } else {
                let layer = self.layer()?;
                match (layer, classes, code_length) {
                    (_, _, Some(_)) => return Err(self.err("nothing may follow DC")),
                    (LayerSpec::Softmax { classes: m }, None, None) => {
                        if m < 2 {
                            return Err(self.err("SM needs at least two classes"));
                        }
                        classes = Some(m);
                    }
                    (LayerSpec::Code { length }, Some(_), None) => code_length = Some(length),
                    (LayerSpec::Code { .. }, None, _) => return Err(self.err("DC must follow SM")),
                    (_, Some(_), _) => return Err(self.err("only DC may follow SM")),
                    (l @ (LayerSpec::Conv3d { .. } | LayerSpec::Fc { .. }), None, None) => {
                        trunk.push(l);
                        trunk.push(LayerSpec::Relu);
                    }
                    (l, None, None) => trunk.push(l),
                }
            }
            let had_sep = self.skip_separators();
            if !had_sep && self.pos < self.chars.len() && self.peek() != Some('(') {
                return Err(self.err("expected '-' between layers"));
            }
        }
        let classes = classes.ok_or_else(|| self.err("missing SM layer"))?;
        Ok(NetworkSpec { trunk, classes, code_length })
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parser { input: s, chars: s.chars().collect(), pos: 0 }.parse()
    }
}
