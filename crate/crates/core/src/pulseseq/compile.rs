use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::ast::{Duration, SequenceSpec, Statement};
use super::SeqError;

pub const DEFAULT_RESOLUTION_NS: f64 = 1.0;

/// Guard against runaway nested repeats.
const MAX_UNROLLED_BLOCKS: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub t_ns: f64,
    pub on: bool,
}

/// Compiled multi-channel on/off schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    channels: Vec<(String, Vec<Edge>)>,
    duration_ns: f64,
    resolution_ns: f64,
}

impl Timeline {
    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn duration_ns(&self) -> f64 {
        self.duration_ns
    }

    pub fn resolution_ns(&self) -> f64 {
        self.resolution_ns
    }

    pub fn edges(&self, channel: &str) -> Result<&[Edge], SeqError> {
        self.channels
            .iter()
            .find(|(n, _)| n == channel)
            .map(|(_, e)| e.as_slice())
            .ok_or_else(|| SeqError::UnknownChannel(channel.to_string()))
    }

    /// `(start, end)` of each on-interval, in order.
    pub fn on_intervals(&self, channel: &str) -> Result<Vec<(f64, f64)>, SeqError> {
        Ok(self
            .edges(channel)?
            .chunks(2)
            .map(|c| (c[0].t_ns, c.get(1).map_or(self.duration_ns, |e| e.t_ns)))
            .collect())
    }

    pub fn is_on(&self, channel: &str, t_ns: f64) -> Result<bool, SeqError> {
        Ok(self
            .on_intervals(channel)?
            .iter()
            .any(|&(a, b)| t_ns >= a && t_ns < b))
    }

    /// Structural checks: per-channel edges alternate on/off starting with on,
    /// strictly increase, sit on the resolution grid and lie within the duration.
    pub fn is_well_formed(&self) -> bool {
        let on_grid = |t: f64| {
            let r = t / self.resolution_ns;
            (r - r.round()).abs() < 1e-9 * r.abs().max(1.0)
        };
        self.channels.iter().all(|(_, edges)| {
            edges.len() % 2 == 0
                && edges.iter().enumerate().all(|(i, e)| e.on == (i % 2 == 0))
                && edges.windows(2).all(|w| w[1].t_ns > w[0].t_ns)
                && edges.iter().all(|e| on_grid(e.t_ns) && e.t_ns >= 0.0 && e.t_ns <= self.duration_ns)
        }) && on_grid(self.duration_ns)
    }

    /// `{channel: [[t_ns, state], ...]}` with state 1 for on and 0 for off.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (name, edges) in &self.channels {
            let list: Vec<Value> = edges.iter().map(|e| json!([e.t_ns, u8::from(e.on)])).collect();
            map.insert(name.clone(), Value::Array(list));
        }
        Value::Object(map)
    }
}

/// Variable bindings in ns.
pub type Bindings = BTreeMap<String, f64>;

fn ticks(t: f64, res: f64) -> i64 {
    let x = t / res;
    let snapped = (x + 0.5 + 1e-9).floor();
    if (x - snapped).abs() > 1e-9 {
        log::debug!("edge at {t} ns snapped to {} ns", snapped * res);
    }
    snapped as i64
}

struct Unroller<'a> {
    bindings: &'a Bindings,
    clocks: Vec<f64>,
    intervals: Vec<Vec<(f64, f64)>>,
    index: BTreeMap<&'a str, usize>,
    blocks: usize,
}

impl<'a> Unroller<'a> {
    fn duration(&self, d: &Duration) -> Result<f64, SeqError> {
        match d {
            Duration::Ns(v) => Ok(*v),
            Duration::Var(name) => self
                .bindings
                .get(name)
                .copied()
                .ok_or_else(|| SeqError::Unbound(name.clone())),
        }
    }

    fn run(&mut self, body: &'a [Statement]) -> Result<(), SeqError> {
        for st in body {
            match st {
                Statement::Block {
                    channel,
                    on,
                    duration,
                } => {
                    self.blocks += 1;
                    if self.blocks > MAX_UNROLLED_BLOCKS {
                        return Err(SeqError::TooLarge(MAX_UNROLLED_BLOCKS));
                    }
                    let &i = self
                        .index
                        .get(channel.as_str())
                        .ok_or_else(|| SeqError::UnknownChannel(channel.clone()))?;
                    let d = self.duration(duration)?;
                    let start = self.clocks[i];
                    self.clocks[i] += d;
                    if *on {
                        self.intervals[i].push((start, self.clocks[i]));
                    }
                }
                Statement::Repeat { count, body } => {
                    for _ in 0..*count {
                        self.run(body)?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn compile(spec: &SequenceSpec, bindings: &Bindings) -> Result<Timeline, SeqError> {
    compile_with_resolution(spec, bindings, DEFAULT_RESOLUTION_NS)
}

/// Unroll and snap a spec. Edge times are rounded half-up to `resolution_ns`;
/// on-intervals that touch after snapping are merged and those that collapse
/// to zero length are dropped.
pub fn compile_with_resolution(
    spec: &SequenceSpec,
    bindings: &Bindings,
    resolution_ns: f64,
) -> Result<Timeline, SeqError> {
    if !(resolution_ns > 0.0) || !resolution_ns.is_finite() {
        return Err(SeqError::BadResolution(resolution_ns));
    }
    for (name, &value) in bindings {
        if spec.sweep(name).is_none() {
            return Err(SeqError::NotASweep(name.clone()));
        }
        if !(value > 0.0) || !value.is_finite() {
            return Err(SeqError::BadBinding {
                name: name.clone(),
                value,
            });
        }
    }
    let n = spec.channels.len();
    let mut u = Unroller {
        bindings,
        clocks: vec![0.0; n],
        intervals: vec![Vec::new(); n],
        index: spec
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect(),
        blocks: 0,
    };
    u.run(&spec.body)?;

    let res = resolution_ns;
    let total = u.clocks.iter().map(|&c| ticks(c, res)).max().unwrap_or(0);
    let mut channels = Vec::with_capacity(n);
    for (name, intervals) in spec.channels.iter().zip(&u.intervals) {
        let mut merged: Vec<(i64, i64)> = Vec::new();
        for &(a, b) in intervals {
            let (a, b) = (ticks(a, res), ticks(b, res));
            if b <= a {
                log::warn!("pulse on `{name}` shorter than the {res} ns resolution dropped");
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.1 >= a => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        let edges = merged
            .iter()
            .flat_map(|&(a, b)| {
                [
                    Edge {
                        t_ns: a as f64 * res,
                        on: true,
                    },
                    Edge {
                        t_ns: b as f64 * res,
                        on: false,
                    },
                ]
            })
            .collect();
        channels.push((name.clone(), edges));
    }
    Ok(Timeline {
        channels,
        duration_ns: total as f64 * res,
        resolution_ns: res,
    })
}

/// Compile once per value of `var`, in order.
pub fn expand_sweep(
    spec: &SequenceSpec,
    var: &str,
    values: &[f64],
) -> Result<Vec<(Bindings, Timeline)>, SeqError> {
    expand_sweep_with(spec, &Bindings::new(), var, values)
}

/// As [`expand_sweep`], with other variables fixed by `base`.
pub fn expand_sweep_with(
    spec: &SequenceSpec,
    base: &Bindings,
    var: &str,
    values: &[f64],
) -> Result<Vec<(Bindings, Timeline)>, SeqError> {
    if spec.sweep(var).is_none() {
        return Err(SeqError::NotASweep(var.to_string()));
    }
    if values.is_empty() {
        return Err(SeqError::EmptyValues);
    }
    values
        .iter()
        .map(|&v| {
            let mut b = base.clone();
            b.insert(var.to_string(), v);
            let tl = compile(spec, &b)?;
            Ok((b, tl))
        })
        .collect()
}

/// Fraction of the total duration during which `channel` is on.
pub fn duty_cycle(timeline: &Timeline, channel: &str) -> Result<f64, SeqError> {
    let on: f64 = timeline
        .on_intervals(channel)?
        .iter()
        .map(|(a, b)| b - a)
        .sum();
    if timeline.duration_ns == 0.0 {
        return Ok(0.0);
    }
    Ok((on / timeline.duration_ns).clamp(0.0, 1.0))
}
