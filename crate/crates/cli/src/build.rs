//! Turns a parsed spec into a pipeline graph and a budget.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use stackstream::budget::parse_bytes;
use stackstream::ops::{
    AxisOrder, JoinFn, Kernel3D, MorphOp, PadMode, PadSpec, PointOp, Region, StructuringElement,
};
use stackstream::{Budget, Dtype, OpKind, Pattern, PipelineGraph, PlanStage, VolumeMeta};

use crate::spec::{Arg, Item, PipelineSpec, Pos, Stmt, SyntaxError};

fn bad<T>(pos: Pos, msg: impl Into<String>) -> Result<T, SyntaxError> {
    Err(SyntaxError { pos, msg: msg.into() })
}

fn value<T: FromStr>(a: &Arg, what: &str) -> Result<T, SyntaxError> {
    a.value
        .parse()
        .or_else(|_| bad(a.pos, format!("`{}` is not a valid {what}", a.value)))
}

/// `n`, or `nx x ny x nz`.
pub fn parse_dims(a: &Arg) -> Result<[usize; 3], SyntaxError> {
    let parts: Vec<&str> = a.value.split('x').collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| bad(a.pos, format!("`{}` is not a size like 64 or 64x64x32", a.value)))?;
    match nums.as_slice() {
        [n] => Ok([*n; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => bad(a.pos, format!("`{}` is not a size like 64 or 64x64x32", a.value)),
    }
}

fn pair(a: &Arg) -> Result<[usize; 2], SyntaxError> {
    let v: Vec<usize> = a
        .value
        .split(',')
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .or_else(|_| bad(a.pos, format!("`{}` is not a pair like 2,2", a.value)))?;
    match v.as_slice() {
        [lo, hi] => Ok([*lo, *hi]),
        [both] => Ok([*both, *both]),
        _ => bad(a.pos, format!("`{}` is not a pair like 2,2", a.value)),
    }
}

/// Parses a synthetic pattern name.
pub fn parse_pattern(name: &str, value: f64, seed: u64) -> Option<Pattern> {
    match name {
        "ramp" => Some(Pattern::Ramp),
        "constant" => Some(Pattern::Constant(value)),
        "impulse" => Some(Pattern::Impulse(value)),
        "random" => Some(Pattern::Random { seed }),
        _ => None,
    }
}

struct Builder {
    g: PipelineGraph,
    used: BTreeMap<String, usize>,
    seed: u64,
}

impl Builder {
    fn name(&mut self, s: &Stmt, default: &str) -> Result<String, SyntaxError> {
        if let Some(a) = s.get("name") {
            if self.used.contains_key(&a.value) {
                return bad(a.pos, format!("stage name `{}` is already taken", a.value));
            }
            self.used.insert(a.value.clone(), 1);
            return Ok(a.value.clone());
        }
        let n = self.used.entry(default.to_string()).or_insert(0);
        *n += 1;
        let mut name = if *n == 1 { default.to_string() } else { format!("{default}{n}") };
        while self.g.find(&name).is_some() {
            *n += 1;
            name = format!("{default}{n}");
        }
        Ok(name)
    }

    fn stage(&mut self, s: &Stmt) -> Result<PlanStage, SyntaxError> {
        let first = s.positional().next();
        let num = |key: &str| -> Result<Option<f64>, SyntaxError> {
            s.get(key).map(|a| value::<f64>(a, "number")).transpose()
        };
        let count = |key: &str| -> Result<Option<usize>, SyntaxError> {
            s.get(key).map(|a| value::<usize>(a, "count")).transpose()
        };
        let kw = s.keyword.as_str();
        let op = match kw {
            "read" => OpKind::Read {
                dir: PathBuf::from(&first.expect("checked by the parser").value),
                meta: None,
            },
            "readInChunks" => OpKind::ReadChunks {
                dir: PathBuf::from(&first.expect("checked by the parser").value),
                meta: None,
            },
            "generate" => {
                let [nx, ny, nz] = parse_dims(first.expect("checked by the parser"))?;
                let dtype = match s.get("dtype") {
                    Some(a) => value::<Dtype>(a, "dtype (u8, u16, f32)")?,
                    None => Dtype::U8,
                };
                let meta = VolumeMeta::new(nx, ny, nz, dtype).or_else(|e| bad(s.pos, e.to_string()))?;
                let seed = match s.get("seed") {
                    Some(a) => value::<u64>(a, "seed")?,
                    None => self.seed,
                };
                let v = num("value")?.unwrap_or(1.0);
                let pattern = match s.get("pattern") {
                    Some(a) => parse_pattern(&a.value, v, seed)
                        .map_or_else(|| bad(a.pos, format!("unknown pattern `{}`", a.value)), Ok)?,
                    None => Pattern::Ramp,
                };
                OpKind::Generate { meta, pattern }
            }
            "gaussian" | "discreteGaussian" => {
                let sigma = match (first, s.get("sigma")) {
                    (Some(_), Some(a)) => return bad(a.pos, "sigma given twice"),
                    (Some(a), None) | (None, Some(a)) => value::<f64>(a, "sigma")?,
                    (None, None) => return bad(s.pos, "gaussian needs a sigma"),
                };
                OpKind::Gaussian { sigma }
            }
            "median" | "erode" | "dilate" => {
                let r = count("r")?.unwrap_or(1);
                let se = match s.get("shape").map(|a| (a.value.as_str(), a.pos)) {
                    None | Some(("cube", _)) => StructuringElement::cube(r),
                    Some(("ball", _)) => StructuringElement::ball(r),
                    Some((other, pos)) => return bad(pos, format!("unknown shape `{other}` (cube or ball)")),
                };
                let op = match kw {
                    "median" => MorphOp::Median,
                    "erode" => MorphOp::Erode,
                    _ => MorphOp::Dilate,
                };
                OpKind::Morphology { op, se }
            }
            "convolve" => {
                let k = match (s.get("kernel"), s.get("box")) {
                    (Some(a), None) => {
                        let text = std::fs::read_to_string(&a.value)
                            .or_else(|e| bad(a.pos, format!("cannot read kernel file `{}`: {e}", a.value)))?;
                        Kernel3D::parse(&text).or_else(|e| bad(a.pos, e.to_string()))?
                    }
                    (None, Some(a)) => Kernel3D::mean_box(parse_dims(a)?).or_else(|e| bad(a.pos, e.to_string()))?,
                    _ => return bad(s.pos, "convolve needs exactly one of kernel=<file> or box=<size>"),
                };
                OpKind::Convolve(Arc::new(k))
            }
            "threshold" => {
                let t = match (first, s.get("t")) {
                    (Some(a), None) | (None, Some(a)) => value::<f64>(a, "threshold")?,
                    _ => return bad(s.pos, "threshold needs exactly one value"),
                };
                OpKind::Pointwise(PointOp::Threshold(t))
            }
            "square" => OpKind::Pointwise(PointOp::Square),
            "invert" => OpKind::Pointwise(PointOp::Invert),
            "scale" => {
                let f = match (first, s.get("f")) {
                    (Some(a), None) | (None, Some(a)) => value::<f64>(a, "factor")?,
                    _ => return bad(s.pos, "scale needs exactly one factor"),
                };
                OpKind::Pointwise(PointOp::Scale(f))
            }
            "convert" => {
                let d = match (first, s.get("dtype")) {
                    (Some(a), None) | (None, Some(a)) => value::<Dtype>(a, "dtype (u8, u16, f32)")?,
                    _ => return bad(s.pos, "convert needs exactly one dtype"),
                };
                OpKind::Pointwise(PointOp::Convert(d))
            }
            "crop" => OpKind::Crop(value::<Region>(first.expect("checked by the parser"), "box x0,y0,z0,x1,y1,z1")?),
            "pad" => {
                let get = |k: &str| s.get(k).map(pair).transpose().map(|p| p.unwrap_or([0, 0]));
                let mode = match s.get("mode").map(|a| (a.value.as_str(), a.pos)) {
                    None | Some(("zero", _)) => PadMode::Zero,
                    Some(("clamp", _)) => PadMode::Clamp,
                    Some((other, pos)) => return bad(pos, format!("unknown pad mode `{other}` (zero or clamp)")),
                };
                OpKind::Pad(PadSpec {
                    x: get("x")?,
                    y: get("y")?,
                    z: get("z")?,
                    mode,
                })
            }
            "permute" => OpKind::Permute(value::<AxisOrder>(first.expect("checked by the parser"), "axis order like zyx")?),
            "reslice" => {
                let a = first.expect("checked by the parser");
                let axis = match a.value.as_str() {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    _ => return bad(a.pos, format!("reslice takes x, y or z, got `{}`", a.value)),
                };
                OpKind::Permute(AxisOrder::reslice(axis).or_else(|e| bad(a.pos, e.to_string()))?)
            }
            "write" => OpKind::Write {
                dir: PathBuf::from(&first.expect("checked by the parser").value),
            },
            "writeInChunks" => {
                let chunk = match s.get("chunk") {
                    Some(a) => parse_dims(a)?,
                    None => [64; 3],
                };
                OpKind::WriteChunks {
                    dir: PathBuf::from(&first.expect("checked by the parser").value),
                    chunk,
                }
            }
            "histogram" => {
                let range = match s.get("range") {
                    Some(a) => {
                        let v: Vec<f64> = a
                            .value
                            .split(',')
                            .map(str::parse)
                            .collect::<Result<_, _>>()
                            .or_else(|_| bad(a.pos, "range is lo,hi"))?;
                        match v.as_slice() {
                            [lo, hi] => Some((*lo, *hi)),
                            _ => return bad(a.pos, "range is lo,hi"),
                        }
                    }
                    None => None,
                };
                OpKind::Histogram {
                    out: s.get("out").map(|a| PathBuf::from(&a.value)),
                    range,
                }
            }
            "mean" => OpKind::SampledMean {
                out: s.get("out").map(|a| PathBuf::from(&a.value)),
                stride: count("stride")?.unwrap_or(1),
            },
            "sink" => OpKind::Discard,
            other => return bad(s.pos, format!("`{other}` is not a stage")),
        };
        let default = match kw {
            "discreteGaussian" => "gaussian",
            "sink" => "discard",
            k => k,
        };
        let mut stage = PlanStage::new(self.name(s, default)?, op);
        if let Some(w) = count("w")? {
            stage = stage.with_window(w);
        }
        if let Some(p) = count("pad")? {
            stage = stage.with_padding(p);
        }
        Ok(stage)
    }

    /// Appends `items` after `cur`; returns the open end, or `None` when
    /// the path finished in a sink.
    fn items(&mut self, items: &[Item], mut cur: Option<(usize, Pos)>) -> Result<Option<(usize, Pos)>, SyntaxError> {
        for item in items {
            match item {
                Item::Stage(s) => {
                    let Some((at, _)) = cur else {
                        if s.keyword == "sink" {
                            continue;
                        }
                        return bad(s.pos, format!("`{}` follows a sink", s.keyword));
                    };
                    if matches!(s.keyword.as_str(), "read" | "readInChunks" | "generate") {
                        return bad(s.pos, "only one input per pipeline");
                    }
                    let stage = self.stage(s)?;
                    let is_sink = stage.role() == stackstream::Role::Sink;
                    let id = self.g.add(stage);
                    self.g.connect(at, id);
                    cur = if is_sink { None } else { Some((id, s.pos)) };
                }
                Item::Branches { pos, branches, close } => {
                    let Some((at, _)) = cur else {
                        return bad(*pos, "branches follow a sink");
                    };
                    if branches.len() < 2 {
                        return bad(*pos, "a branch block needs at least two branches separated by `---`");
                    }
                    let tee_name = self.name(
                        &Stmt {
                            keyword: "tee".into(),
                            args: Vec::new(),
                            pos: *pos,
                        },
                        "tee",
                    )?;
                    let tee = self.g.add(PlanStage::new(tee_name, OpKind::Tee));
                    self.g.connect(at, tee);
                    let mut ends = Vec::new();
                    for b in branches {
                        ends.push(self.items(b, Some((tee, *pos)))?);
                    }
                    if close.keyword == "end" {
                        if let Some((_, p)) = ends.iter().flatten().next() {
                            return bad(*p, "with `end` every branch must finish in a sink");
                        }
                        cur = None;
                    } else {
                        let f = value::<JoinFn>(close.positional().next().expect("checked by the parser"), "join function (add, max, min)")?;
                        let open: Vec<(usize, Pos)> = ends.iter().flatten().copied().collect();
                        if open.len() != 2 || ends.len() != 2 {
                            return bad(close.pos, format!("join zips exactly two open branches, found {}", open.len()));
                        }
                        let name = self.name(close, "join")?;
                        let j = self.g.add(PlanStage::new(name, OpKind::Join(f)));
                        self.g.connect(open[0].0, j);
                        self.g.connect(open[1].0, j);
                        cur = Some((j, close.pos));
                    }
                }
            }
        }
        Ok(cur)
    }
}

/// The graph and budget described by `spec`. `seed` is used by random
/// sources that do not name their own.
pub fn build(spec: &PipelineSpec, seed: u64) -> Result<(PipelineGraph, Budget), SyntaxError> {
    let src = &spec.source;
    let cap_arg = src.positional().next().expect("checked by the parser");
    let cap = parse_bytes(&cap_arg.value).or_else(|e| bad(cap_arg.pos, e.to_string()))?;
    let mut budget = Budget::new(cap).or_else(|e| bad(cap_arg.pos, e.to_string()))?;
    if let Some(a) = src.get("epsilon") {
        budget = budget.with_epsilon(parse_bytes(&a.value).or_else(|e| bad(a.pos, e.to_string()))?);
    }
    let mut b = Builder {
        g: PipelineGraph::new(),
        used: BTreeMap::new(),
        seed,
    };
    let Some((Item::Stage(input), rest)) = spec.body.split_first() else {
        return bad(src.pos, "the first stage after `source` must be read, readInChunks or generate");
    };
    if !matches!(input.keyword.as_str(), "read" | "readInChunks" | "generate") {
        return bad(input.pos, "the first stage after `source` must be read, readInChunks or generate");
    }
    let stage = b.stage(input)?;
    let id = b.g.add(stage);
    if let Some((_, p)) = b.items(rest, Some((id, input.pos)))? {
        return bad(p, "the pipeline must end in a sink (write, histogram, mean or sink)");
    }
    Ok((b.g, budget))
}
