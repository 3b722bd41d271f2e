//! Weighted coresets and their file format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_dist2, ClusteringInstance, Point, WeightedPoint};
use crate::stream::parse_header;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoresetMeta {
    /// The guess `o` that produced the sample; `None` for the exact shortcut.
    pub guess: Option<f64>,
    /// `t'`.
    pub total_sensitivity: f64,
    /// `m`, the number of draws.
    pub samples: usize,
    /// Retained levels `I`.
    pub levels: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    pub entries: Vec<WeightedPoint>,
    pub meta: CoresetMeta,
}

impl Coreset {
    /// Unit weights on every point.
    pub fn exact(points: &[Point]) -> Self {
        Self {
            entries: points.iter().map(|p| WeightedPoint { point: p.clone(), weight: 1.0 }).collect(),
            meta: CoresetMeta {
                guess: None,
                total_sensitivity: 0.0,
                samples: points.len(),
                levels: Vec::new(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn cost(&self, centers: &[Vec<f64>]) -> f64 {
        self.entries.iter().map(|e| e.weight * min_dist2(&e.point, centers)).sum()
    }

    /// Repeated points combined into one entry, sorted by point.
    pub fn merged(&self) -> Vec<WeightedPoint> {
        let mut acc: BTreeMap<&Point, f64> = BTreeMap::new();
        for e in &self.entries {
            *acc.entry(&e.point).or_default() += e.weight;
        }
        acc.into_iter().map(|(p, w)| WeightedPoint { point: p.clone(), weight: w }).collect()
    }

    /// Header line, then one `w x1 .. xd` line per merged entry.
    pub fn write_to<W: Write>(&self, inst: &ClusteringInstance, mut w: W) -> Result<()> {
        writeln!(w, "dskm v1 d={} L={} coreset", inst.d, inst.levels())?;
        for e in self.merged() {
            write!(w, "{}", e.weight)?;
            for x in &e.point {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses a coreset file; returns `(d, L, entries)` with empty metadata.
    pub fn read_from<R: BufRead>(r: R) -> Result<(usize, u32, Coreset)> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })??;
        let (d, l, kind) = parse_header(&header)?;
        if kind.as_deref() != Some("coreset") {
            return Err(Error::Parse { line: 1, message: "not a coreset file".into() });
        }
        let side = 1u64 << l;
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            let err = |m: String| Error::Parse { line: lineno, message: m };
            let mut tok = line.split_whitespace();
            let Some(w) = tok.next() else { continue };
            let weight: f64 = w.parse().map_err(|_| err(format!("unparseable weight {w:?}")))?;
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(err(format!("weight {w} is not positive")));
            }
            let point: Point = tok
                .map(|t| t.parse::<u32>().map_err(|_| err(format!("bad coordinate {t:?}"))))
                .collect::<Result<_>>()?;
            if point.len() != d {
                return Err(err(format!("expected {d} coordinates, found {}", point.len())));
            }
            if point.iter().any(|&x| x == 0 || x as u64 > side) {
                return Err(err(format!("coordinate outside [1, {side}]")));
            }
            entries.push(WeightedPoint { point, weight });
        }
        Ok((d, l, Coreset { entries, meta: CoresetMeta::default() }))
    }
}
