//! File formats.
//!
//! * tensors: JSON `{"shape": [...], "data": [...]}` (row-major) or the binary
//!   layout `"UCNV"`, `u32` rank, `u64` dims, little-endian `f64` data;
//! * bases: JSON `{"K", "M", "N", "entries": [[k, row, col, value], ...]}`, 1-based;
//! * graphs: text lines `u v w [label]`, 1-based nodes, `#` starts a comment;
//! * relation sorts: one sort per line, labels separated by whitespace;
//! * masks: JSON `{"rows", "cols", "allowed": [[row, col], ...]}`, 1-based;
//! * reduced parameters: JSON tagged by `"scheme"`;
//! * attention convolutions: JSON with `K`, `wiring`, `pipeline`, `heads`,
//!   `theta` (or `theta_value` and `theta_O`) and an optional `mask`.
//!
//! JSON is written canonically: keys sorted, no whitespace, every float with
//! 17 significant digits, so reading and rewriting a file reproduces it byte
//! for byte.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::attention::{
    transformer_theta, AttentionConvSpec, BiaffineParams, Head, Lambda, Mask, NormalisationPipeline,
};
use crate::basis::{Edge, Graph};
use crate::conv::{BasisStack, ConvParams};
use crate::error::{Error, Result};
use crate::reduction::{ChannelFactor, ControlledSeparableParams, DepthwiseParams, GroupedParams, ReducedParams};
use crate::sparse::SparseMatrix;
use crate::tensor::{DenseTensor, Shape};

pub const BINARY_MAGIC: &[u8; 4] = b"UCNV";

/// On-disk encoding of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TensorFormat {
    #[default]
    Json,
    Binary,
}

struct CanonicalFormatter;

impl serde_json::ser::Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Canonical JSON text of a value, with a trailing newline.
pub fn to_canonical_json(value: &Value) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

fn finite(v: f64, what: &str) -> Result<Value> {
    if !v.is_finite() {
        return Err(Error::Argument(format!("{what} contains {v}, which JSON cannot hold")));
    }
    Ok(json!(v))
}

fn floats(values: &[f64], what: &str) -> Result<Value> {
    values.iter().map(|&v| finite(v, what)).collect::<Result<Vec<_>>>().map(Value::Array)
}

pub fn tensor_to_json(t: &DenseTensor) -> Result<Value> {
    Ok(json!({ "shape": t.dims(), "data": floats(t.data(), "tensor")? }))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Parse(format!("{what} is missing \"{key}\"")))
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Parse(format!("{what} must be a JSON object")))
}

fn array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::Parse(format!("{what} must be a JSON array")))
}

fn as_usize(v: &Value, what: &str) -> Result<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::Parse(format!("{what} must be a non-negative integer, got {v}")))
}

fn as_f64(v: &Value, what: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Parse(format!("{what} must be a number, got {v}")))
}

fn f64_array(v: &Value, what: &str) -> Result<Vec<f64>> {
    array(v, what)?.iter().map(|x| as_f64(x, what)).collect()
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], what: &str) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::Parse(format!("{what} has unexpected key \"{k}\""))),
        None => Ok(()),
    }
}

pub fn tensor_from_json(v: &Value) -> Result<DenseTensor> {
    let obj = object(v, "tensor")?;
    check_keys(obj, &["shape", "data"], "tensor")?;
    let shape = array(field(obj, "shape", "tensor")?, "tensor shape")?
        .iter()
        .map(|d| as_usize(d, "tensor dimension"))
        .collect::<Result<Vec<_>>>()?;
    let data = f64_array(field(obj, "data", "tensor")?, "tensor data")?;
    DenseTensor::new(Shape::new(shape)?, data)
}

pub fn tensor_to_binary(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.data().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_binary(bytes: &[u8]) -> Result<DenseTensor> {
    let short = || Error::Parse("binary tensor is truncated".into());
    if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Parse("not a binary tensor (bad magic)".into()));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let mut pos = 8;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes.get(pos..pos + 8).ok_or_else(short)?;
        dims.push(u64::from_le_bytes(chunk.try_into().expect("8 bytes")) as usize);
        pos += 8;
    }
    let shape = Shape::new(dims)?;
    let n = shape.cardinality();
    let body = bytes.get(pos..).ok_or_else(short)?;
    if body.len() != 8 * n {
        return Err(Error::Parse(format!(
            "binary tensor of shape {shape} needs {} data bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseTensor::new(shape, data)
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        tensor_from_binary(&bytes)
    } else {
        tensor_from_json(&serde_json::from_slice(&bytes)?)
    }
}

pub fn tensor_bytes(t: &DenseTensor, format: TensorFormat) -> Result<Vec<u8>> {
    match format {
        TensorFormat::Json => Ok(to_canonical_json(&tensor_to_json(t)?)?.into_bytes()),
        TensorFormat::Binary => Ok(tensor_to_binary(t)),
    }
}

pub fn write_tensor(path: &Path, t: &DenseTensor, format: TensorFormat) -> Result<()> {
    std::fs::write(path, tensor_bytes(t, format)?)?;
    Ok(())
}

fn sparse_entries(a: &SparseMatrix, what: &str) -> Result<Vec<(usize, usize, Value)>> {
    a.iter()
        .map(|(r, c, v)| Ok((r + 1, c + 1, finite(v, what)?)))
        .collect()
}

pub fn basis_to_json(a: &BasisStack) -> Result<Value> {
    let mut entries = Vec::with_capacity(a.nnz());
    for (k, m) in a.matrices().iter().enumerate() {
        for (r, c, v) in sparse_entries(m, "basis")? {
            entries.push(json!([k + 1, r, c, v]));
        }
    }
    Ok(json!({ "K": a.k(), "M": a.m(), "N": a.n(), "entries": entries }))
}

pub fn basis_from_json(v: &Value) -> Result<BasisStack> {
    let obj = object(v, "basis")?;
    check_keys(obj, &["K", "M", "N", "entries"], "basis")?;
    let k = as_usize(field(obj, "K", "basis")?, "K")?;
    let m = as_usize(field(obj, "M", "basis")?, "M")?;
    let n = as_usize(field(obj, "N", "basis")?, "N")?;
    if k == 0 || m == 0 || n == 0 {
        return Err(Error::Parse(format!("basis needs K, M, N ≥ 1, got K = {k}, M = {m}, N = {n}")));
    }
    let mut per_k = vec![Vec::new(); k];
    for (i, e) in array(field(obj, "entries", "basis")?, "basis entries")?.iter().enumerate() {
        let what = format!("basis entry {}", i + 1);
        let e = array(e, &what)?;
        if e.len() != 4 {
            return Err(Error::Parse(format!("{what} must be [k, row, col, value]")));
        }
        let (kk, r, c) = (as_usize(&e[0], &what)?, as_usize(&e[1], &what)?, as_usize(&e[2], &what)?);
        let val = as_f64(&e[3], &what)?;
        if !(1..=k).contains(&kk) || !(1..=m).contains(&r) || !(1..=n).contains(&c) {
            return Err(Error::Index(format!(
                "{what} ({kk}, {r}, {c}) outside K = {k}, M = {m}, N = {n}"
            )));
        }
        per_k[kk - 1].push((r - 1, c - 1, val));
    }
    let mats = per_k
        .into_iter()
        .map(|t| SparseMatrix::from_triplets(m, n, t))
        .collect::<Result<Vec<_>>>()?;
    BasisStack::new(mats)
}

pub fn read_json(path: &Path) -> Result<Value> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, to_canonical_json(v)?)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<BasisStack> {
    basis_from_json(&read_json(path)?)
}

pub fn write_basis(path: &Path, a: &BasisStack) -> Result<()> {
    write_json(path, &basis_to_json(a)?)
}

pub fn params_to_json(theta: &ConvParams) -> Result<Value> {
    tensor_to_json(theta.tensor())
}

/// Parses graph text. Without `nodes` the node count is the largest id seen.
pub fn parse_graph(text: &str, nodes: Option<usize>) -> Result<Graph> {
    let mut edges = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse(format!("graph line {}: {msg}: '{}'", ln + 1, raw.trim()));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad("expected 'u v w [label]'"));
        }
        let u: usize = fields[0].parse().map_err(|_| bad("bad node id"))?;
        let v: usize = fields[1].parse().map_err(|_| bad("bad node id"))?;
        let w: f64 = fields[2].parse().map_err(|_| bad("bad weight"))?;
        if u == 0 || v == 0 {
            return Err(bad("node ids are 1-based"));
        }
        edges.push(match fields.get(3) {
            Some(l) => Edge::labelled(u, v, w, *l),
            None => Edge::new(u, v, w),
        });
    }
    let seen = edges.iter().map(|e| e.u.max(e.v)).max().unwrap_or(0);
    let n = match nodes {
        Some(n) => n,
        None if seen > 0 => seen,
        None => return Err(Error::Parse("graph has no edges; give the node count explicitly".into())),
    };
    Graph::new(n, edges)
}

pub fn read_graph(path: &Path, nodes: Option<usize>) -> Result<Graph> {
    parse_graph(&std::fs::read_to_string(path)?, nodes)
}

pub fn graph_to_text(g: &Graph) -> String {
    let mut out = format!("# {} nodes\n", g.n());
    for e in g.edges() {
        match &e.label {
            Some(l) => out.push_str(&format!("{} {} {} {l}\n", e.u, e.v, e.w)),
            None => out.push_str(&format!("{} {} {}\n", e.u, e.v, e.w)),
        }
    }
    out
}

/// One relation sort per non-empty line.
pub fn parse_sorts(text: &str) -> Result<Vec<Vec<String>>> {
    let sorts: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    if sorts.is_empty() {
        return Err(Error::Parse("no relation sorts found".into()));
    }
    Ok(sorts)
}

pub fn mask_to_json(mask: &Mask) -> Value {
    let allowed: Vec<Value> = mask.cells().map(|(r, c)| json!([r + 1, c + 1])).collect();
    json!({ "rows": mask.rows(), "cols": mask.cols(), "allowed": allowed })
}

pub fn mask_from_json(v: &Value) -> Result<Mask> {
    let obj = object(v, "mask")?;
    check_keys(obj, &["rows", "cols", "allowed"], "mask")?;
    let rows = as_usize(field(obj, "rows", "mask")?, "mask rows")?;
    let cols = as_usize(field(obj, "cols", "mask")?, "mask cols")?;
    let mut cells = Vec::new();
    for c in array(field(obj, "allowed", "mask")?, "mask cells")? {
        let c = array(c, "mask cell")?;
        if c.len() != 2 {
            return Err(Error::Parse("mask cell must be [row, col]".into()));
        }
        let (r, k) = (as_usize(&c[0], "mask row")?, as_usize(&c[1], "mask col")?);
        if r == 0 || k == 0 {
            return Err(Error::Index("mask cells are 1-based".into()));
        }
        cells.push((r - 1, k - 1));
    }
    Mask::from_allowed(rows, cols, cells)
}

fn channel_to_json(c: &ChannelFactor) -> Result<Value> {
    match c {
        ChannelFactor::Dense(t) => tensor_to_json(t),
        ChannelFactor::Grouped(g) => reduced_to_json(&ReducedParams::Grouped(g.clone())),
        ChannelFactor::Depthwise(d) => reduced_to_json(&ReducedParams::Depthwise(d.clone())),
    }
}

pub fn reduced_to_json(r: &ReducedParams) -> Result<Value> {
    Ok(match r {
        ReducedParams::Grouped(g) => json!({
            "scheme": "grouped",
            "groups": g.groups(),
            "blocks": tensor_to_json(g.blocks())?,
        }),
        ReducedParams::Depthwise(d) => json!({
            "scheme": "depthwise",
            "per_basis": tensor_to_json(d.per_basis())?,
            "pointwise": tensor_to_json(d.pointwise())?,
        }),
        ReducedParams::Controlled(c) => json!({
            "scheme": "controlled",
            "basis": tensor_to_json(c.basis())?,
            "channel": channel_to_json(c.channel())?,
        }),
    })
}

pub fn reduced_from_json(v: &Value) -> Result<ReducedParams> {
    let obj = object(v, "reduced parameters")?;
    let scheme = field(obj, "scheme", "reduced parameters")?
        .as_str()
        .ok_or_else(|| Error::Parse("\"scheme\" must be a string".into()))?;
    match scheme {
        "grouped" => {
            check_keys(obj, &["scheme", "groups", "blocks"], "grouped parameters")?;
            let g = GroupedParams::new(tensor_from_json(field(obj, "blocks", "grouped parameters")?)?)?;
            if let Some(n) = obj.get("groups") {
                if as_usize(n, "groups")? != g.groups() {
                    return Err(Error::Parse(format!(
                        "\"groups\" is {n} but the blocks hold {} groups",
                        g.groups()
                    )));
                }
            }
            Ok(ReducedParams::Grouped(g))
        }
        "depthwise" => {
            check_keys(obj, &["scheme", "per_basis", "pointwise"], "depthwise parameters")?;
            Ok(ReducedParams::Depthwise(DepthwiseParams::new(
                tensor_from_json(field(obj, "per_basis", "depthwise parameters")?)?,
                tensor_from_json(field(obj, "pointwise", "depthwise parameters")?)?,
            )?))
        }
        "controlled" => {
            check_keys(obj, &["scheme", "basis", "channel"], "controlled parameters")?;
            let basis = tensor_from_json(field(obj, "basis", "controlled parameters")?)?;
            let ch = field(obj, "channel", "controlled parameters")?;
            let channel = match object(ch, "channel factor")?.contains_key("scheme") {
                false => ChannelFactor::Dense(tensor_from_json(ch)?),
                true => match reduced_from_json(ch)? {
                    ReducedParams::Grouped(g) => ChannelFactor::Grouped(g),
                    ReducedParams::Depthwise(d) => ChannelFactor::Depthwise(d),
                    ReducedParams::Controlled(_) => {
                        return Err(Error::Parse("a controlled channel factor cannot itself be controlled".into()))
                    }
                },
            };
            Ok(ReducedParams::Controlled(ControlledSeparableParams::new(basis, channel)?))
        }
        other => Err(Error::Parse(format!(
            "unknown scheme \"{other}\" (grouped, depthwise, controlled)"
        ))),
    }
}

fn head_to_json(h: &Head) -> Result<Value> {
    match h {
        Head::Fixed(a) => {
            let entries: Vec<Value> = sparse_entries(a, "fixed head")?
                .into_iter()
                .map(|(r, c, v)| json!([r, c, v]))
                .collect();
            Ok(json!({ "fixed": { "rows": a.rows(), "cols": a.cols(), "entries": entries } }))
        }
        Head::Mechanism(xi) => {
            let mut obj = Map::new();
            obj.insert("xi".into(), finite(xi.xi(), "ξ")?);
            obj.insert("mu".into(), floats(xi.mu(), "μ")?);
            obj.insert("nu".into(), floats(xi.nu(), "ν")?);
            match xi.lambda() {
                Lambda::Full(l) => {
                    obj.insert("Lambda".into(), tensor_to_json(l)?);
                }
                Lambda::Factorised { key, query } => {
                    obj.insert("Lambda_key".into(), tensor_to_json(key)?);
                    obj.insert("Lambda_query".into(), tensor_to_json(query)?);
                }
            }
            Ok(Value::Object(obj))
        }
    }
}

fn head_from_json(v: &Value, k: usize) -> Result<Head> {
    let what = format!("head {k}");
    let obj = object(v, &what)?;
    if let Some(f) = obj.get("fixed") {
        check_keys(obj, &["fixed"], &what)?;
        let f = object(f, &what)?;
        let rows = as_usize(field(f, "rows", &what)?, "fixed head rows")?;
        let cols = as_usize(field(f, "cols", &what)?, "fixed head cols")?;
        let mut trip = Vec::new();
        for e in array(field(f, "entries", &what)?, "fixed head entries")? {
            let e = array(e, "fixed head entry")?;
            if e.len() != 3 {
                return Err(Error::Parse(format!("{what}: entries must be [row, col, value]")));
            }
            let (r, c) = (as_usize(&e[0], &what)?, as_usize(&e[1], &what)?);
            if r == 0 || c == 0 {
                return Err(Error::Index(format!("{what}: entries are 1-based")));
            }
            trip.push((r - 1, c - 1, as_f64(&e[2], &what)?));
        }
        return Ok(Head::Fixed(SparseMatrix::from_triplets(rows, cols, trip)?));
    }
    check_keys(obj, &["xi", "mu", "nu", "Lambda", "Lambda_key", "Lambda_query"], &what)?;
    let lambda = match (obj.get("Lambda"), obj.get("Lambda_key"), obj.get("Lambda_query")) {
        (Some(l), None, None) => Lambda::Full(tensor_from_json(l)?),
        (None, Some(key), Some(query)) => Lambda::Factorised {
            key: tensor_from_json(key)?,
            query: tensor_from_json(query)?,
        },
        (None, None, None) => {
            let mu = f64_array(field(obj, "mu", &what)?, "μ")?;
            let nu = f64_array(field(obj, "nu", &what)?, "ν")?;
            let xi = obj.get("xi").map(|x| as_f64(x, "ξ")).transpose()?.unwrap_or(0.0);
            return Ok(Head::Mechanism(BiaffineParams::linear(xi, mu, nu)?));
        }
        _ => {
            return Err(Error::Parse(format!(
                "{what} needs either \"Lambda\" or both \"Lambda_key\" and \"Lambda_query\""
            )))
        }
    };
    let (p, q) = match &lambda {
        Lambda::Full(l) => l.matrix_dims()?,
        Lambda::Factorised { key, query } => (key.matrix_dims()?.0, query.matrix_dims()?.0),
    };
    let xi = obj.get("xi").map(|x| as_f64(x, "ξ")).transpose()?.unwrap_or(0.0);
    let mu = obj.get("mu").map(|x| f64_array(x, "μ")).transpose()?.unwrap_or(vec![0.0; p]);
    let nu = obj.get("nu").map(|x| f64_array(x, "ν")).transpose()?.unwrap_or(vec![0.0; q]);
    Ok(Head::Mechanism(BiaffineParams::new(xi, mu, nu, lambda)?))
}

/// Serialises an attention convolution, always with the expanded `theta`.
pub fn attention_spec_to_json(spec: &AttentionConvSpec) -> Result<Value> {
    let heads = spec.heads().iter().map(head_to_json).collect::<Result<Vec<_>>>()?;
    let pipeline: Vec<String> = spec.pipeline().steps().iter().map(|s| s.to_string()).collect();
    let mut obj = Map::new();
    obj.insert("K".into(), json!(spec.k()));
    obj.insert("wiring".into(), json!(spec.wiring().to_string()));
    obj.insert("pipeline".into(), json!(pipeline));
    obj.insert("heads".into(), Value::Array(heads));
    obj.insert("theta".into(), params_to_json(spec.theta())?);
    if let Some(m) = spec.mask() {
        obj.insert("mask".into(), mask_to_json(m));
    }
    Ok(Value::Object(obj))
}

pub fn attention_spec_from_json(v: &Value) -> Result<AttentionConvSpec> {
    let obj = object(v, "attention spec")?;
    check_keys(
        obj,
        &["K", "wiring", "pipeline", "heads", "theta", "theta_value", "theta_O", "mask"],
        "attention spec",
    )?;
    let heads = array(field(obj, "heads", "attention spec")?, "heads")?
        .iter()
        .enumerate()
        .map(|(i, h)| head_from_json(h, i + 1))
        .collect::<Result<Vec<_>>>()?;
    if let Some(k) = obj.get("K") {
        let k = as_usize(k, "K")?;
        if k != heads.len() {
            return Err(Error::Parse(format!("K = {k} but {} heads are listed", heads.len())));
        }
    }
    let wiring = match obj.get("wiring") {
        Some(w) => w
            .as_str()
            .ok_or_else(|| Error::Parse("\"wiring\" must be a string".into()))?
            .parse()?,
        None => Default::default(),
    };
    let pipeline = match obj.get("pipeline") {
        Some(p) => {
            let steps = array(p, "pipeline")?
                .iter()
                .map(|s| s.as_str().ok_or_else(|| Error::Parse("pipeline steps must be strings".into())))
                .collect::<Result<Vec<_>>>()?;
            NormalisationPipeline::parse(&steps)?
        }
        None => NormalisationPipeline::default(),
    };
    let theta = match (obj.get("theta"), obj.get("theta_value"), obj.get("theta_O")) {
        (Some(t), None, None) => ConvParams::new(tensor_from_json(t)?)?,
        (None, Some(values), Some(o)) => {
            let values = array(values, "theta_value")?
                .iter()
                .map(tensor_from_json)
                .collect::<Result<Vec<_>>>()?;
            transformer_theta(&values, &tensor_from_json(o)?)?
        }
        _ => {
            return Err(Error::Parse(
                "attention spec needs \"theta\" or both \"theta_value\" and \"theta_O\"".into(),
            ))
        }
    };
    let mask = obj.get("mask").map(mask_from_json).transpose()?;
    AttentionConvSpec::new(heads, pipeline, theta, wiring, mask)
}
