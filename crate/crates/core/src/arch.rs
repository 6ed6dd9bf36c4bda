//! Text form of a network architecture.
//!
//! ```text
//! dense:784-128-64-10:relu            plain MLP, identity output layer
//! dense:2-16-2:gelu:bias              every dense layer carries a bias
//! conv:1x8x8,c4k3:same,c8k3|dense:288-10:relu
//! ```
//!
//! A conv segment starts with the input shape `CxHxW` followed by layers
//! `c<out>k<kernel>` with optional `:same`/`:valid` (default valid),
//! `:relu`/`:gelu`/`:identity` (default relu) and `:bias`. The dense segment
//! after `|` must start at the flattened conv output width.

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerKind, LayerSpec, Network, Padding};

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("architecture: {}", msg.into()))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| bad(format!("{what} `{s}` is not a positive integer")))
}

fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "relu" => Some(Activation::Relu),
        "gelu" => Some(Activation::Gelu),
        "identity" => Some(Activation::Identity),
        _ => None,
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Gelu => "gelu",
        Activation::Identity => "identity",
    }
}

fn parse_dense(seg: &str, specs: &mut Vec<LayerSpec>) -> Result<usize> {
    let mut parts = seg.split(':');
    parts.next();
    let widths: Vec<usize> = parts
        .next()
        .ok_or_else(|| bad("dense segment needs widths"))?
        .split('-')
        .map(|w| parse_usize(w, "width"))
        .collect::<Result<_>>()?;
    if widths.len() < 2 {
        return Err(bad("dense segment needs at least two widths"));
    }
    let mut activation = Activation::Relu;
    let mut bias = false;
    for opt in parts {
        match opt {
            "bias" => bias = true,
            other => activation = parse_activation(other).ok_or_else(|| bad(format!("unknown option `{other}`")))?,
        }
    }
    for (i, w) in widths.windows(2).enumerate() {
        let act = if i + 2 == widths.len() { Activation::Identity } else { activation };
        let spec = LayerSpec::dense(w[0], w[1], act);
        specs.push(if bias { spec.with_bias() } else { spec });
    }
    Ok(widths[0])
}

/// Parses an architecture string into an input shape and layer specs.
pub fn parse_arch(text: &str) -> Result<(Vec<usize>, Vec<LayerSpec>)> {
    let text = text.trim();
    let mut specs = Vec::new();
    if text.starts_with("dense:") {
        let input = parse_dense(text, &mut specs)?;
        return Ok((vec![input], specs));
    }
    let (conv, dense) = text
        .strip_prefix("conv:")
        .and_then(|rest| rest.split_once('|'))
        .ok_or_else(|| bad("expected `dense:...` or `conv:...|dense:...`"))?;
    let mut items = conv.split(',');
    let shape: Vec<usize> = items
        .next()
        .unwrap_or_default()
        .split('x')
        .map(|d| parse_usize(d, "input dimension"))
        .collect::<Result<_>>()?;
    if shape.len() != 3 {
        return Err(bad("conv input shape must be CxHxW"));
    }
    let mut channels = shape[0];
    for item in items {
        let mut opts = item.split(':');
        let head = opts.next().unwrap_or_default();
        let (out, kernel) = head
            .strip_prefix('c')
            .and_then(|r| r.split_once('k'))
            .ok_or_else(|| bad(format!("conv layer `{head}` must look like c<out>k<kernel>")))?;
        let (out, kernel) = (parse_usize(out, "channels")?, parse_usize(kernel, "kernel")?);
        let (mut padding, mut activation, mut bias) = (Padding::Valid, Activation::Relu, false);
        for opt in opts {
            match opt {
                "same" => padding = Padding::Same,
                "valid" => padding = Padding::Valid,
                "bias" => bias = true,
                other => {
                    activation = parse_activation(other).ok_or_else(|| bad(format!("unknown option `{other}`")))?
                }
            }
        }
        let spec = LayerSpec::conv(channels, out, kernel, padding, activation);
        specs.push(if bias { spec.with_bias() } else { spec });
        channels = out;
    }
    if specs.is_empty() {
        return Err(bad("conv segment has no layers"));
    }
    if !dense.starts_with("dense:") {
        return Err(bad("conv segment must be followed by `|dense:...`"));
    }
    parse_dense(dense, &mut specs)?;
    Ok((shape, specs))
}

/// Builds an uninitialized (all-zero) network from an architecture string.
pub fn build_network(text: &str) -> Result<Network> {
    let (shape, specs) = parse_arch(text)?;
    Network::new(shape, &specs)
}

/// Canonical string for a network; errors if the grammar cannot express it.
pub fn arch_string(net: &Network) -> Result<String> {
    let specs = net.specs();
    let first_dense = specs
        .iter()
        .position(|s| matches!(s.kind, LayerKind::Dense { .. }))
        .ok_or_else(|| bad("network has no dense output layer"))?;
    let dense = &specs[first_dense..];
    if dense.iter().any(|s| !matches!(s.kind, LayerKind::Dense { .. })) {
        return Err(bad("conv layers after dense layers are not expressible"));
    }
    let hidden_act = if dense.len() > 1 { dense[0].activation } else { Activation::Relu };
    let bias = dense[0].has_bias;
    let uniform = dense.iter().all(|s| s.has_bias == bias)
        && dense[..dense.len() - 1].iter().all(|s| s.activation == hidden_act)
        && dense.last().map(|s| s.activation) == Some(Activation::Identity);
    if !uniform {
        return Err(bad("dense layers must share activation and bias, output identity"));
    }
    let mut widths = Vec::with_capacity(dense.len() + 1);
    for s in dense {
        if let LayerKind::Dense { inputs, .. } = s.kind {
            widths.push(inputs.to_string());
        }
    }
    if let Some(LayerKind::Dense { outputs, .. }) = dense.last().map(|s| s.kind) {
        widths.push(outputs.to_string());
    }
    let mut out = format!("dense:{}:{}", widths.join("-"), activation_name(hidden_act));
    if bias {
        out.push_str(":bias");
    }
    if first_dense == 0 {
        return Ok(out);
    }
    let shape = net.input_shape();
    let mut conv = format!("conv:{}", shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x"));
    for s in &specs[..first_dense] {
        if let LayerKind::Conv2d {
            out_channels,
            kernel_h,
            kernel_w,
            padding,
            ..
        } = s.kind
        {
            if kernel_h != kernel_w {
                return Err(bad("non-square kernels are not expressible"));
            }
            conv.push_str(&format!(",c{out_channels}k{kernel_h}"));
            if padding == Padding::Same {
                conv.push_str(":same");
            }
            if s.activation != Activation::Relu {
                conv.push(':');
                conv.push_str(activation_name(s.activation));
            }
            if s.has_bias {
                conv.push_str(":bias");
            }
        }
    }
    Ok(format!("{conv}|{out}"))
}
