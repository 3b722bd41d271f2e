//! Stream files: a header `dskm v1 d=<d> L=<L>` and one `+ x1 .. xd` or
//! `- x1 .. xd` line per operation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{domain, Error, Result};
use crate::geometry::{ClusteringInstance, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Insert,
    Delete,
}

impl Sign {
    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Insert => 1,
            Sign::Delete => -1,
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Insert => '+',
            Sign::Delete => '-',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Op {
    pub point: Point,
    pub sign: Sign,
}

impl Op {
    pub fn insert(point: Point) -> Self {
        Self { point, sign: Sign::Insert }
    }

    pub fn delete(point: Point) -> Self {
        Self { point, sign: Sign::Delete }
    }
}

/// A validated operation sequence: every deletion removes a live point and no
/// point is live twice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamFile {
    pub d: usize,
    pub levels: u32,
    pub ops: Vec<Op>,
}

/// Parses `dskm v1 d=<d> L=<L> [kind]`.
pub fn parse_header(line: &str) -> Result<(usize, u32, Option<String>)> {
    let err = |m: &str| Error::Parse { line: 1, message: m.to_string() };
    let mut tok = line.split_whitespace();
    if tok.next() != Some("dskm") || tok.next() != Some("v1") {
        return Err(err("header must start with `dskm v1`"));
    }
    let d = tok
        .next()
        .and_then(|t| t.strip_prefix("d="))
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| err("expected d=<dimension>"))?;
    let l = tok
        .next()
        .and_then(|t| t.strip_prefix("L="))
        .and_then(|t| t.parse::<u32>().ok())
        .ok_or_else(|| err("expected L=<levels>"))?;
    let kind = tok.next().map(str::to_string);
    if tok.next().is_some() {
        return Err(err("trailing tokens in header"));
    }
    if d == 0 || l == 0 || l > 31 {
        return Err(err("need d ≥ 1 and 1 ≤ L ≤ 31"));
    }
    Ok((d, l, kind))
}

impl StreamFile {
    /// Validates `ops` with the same rules as the loader.
    pub fn new(d: usize, levels: u32, ops: Vec<Op>) -> Result<Self> {
        let mut v = Validator::new(d, levels);
        for (i, op) in ops.iter().enumerate() {
            v.check(op, i + 1)?;
        }
        Ok(Self { d, levels, ops })
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })??;
        let (d, levels, kind) = parse_header(&header)?;
        if kind.is_some() {
            return Err(Error::Parse { line: 1, message: "not a stream file".into() });
        }
        let mut v = Validator::new(d, levels);
        let mut ops = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            let mut tok = line.split_whitespace();
            let sign = match tok.next() {
                None => continue,
                Some("+") => Sign::Insert,
                Some("-") => Sign::Delete,
                Some(t) => return Err(Error::Parse { line: lineno, message: format!("bad sign {t:?}") }),
            };
            let point = tok
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::Parse { line: lineno, message: format!("bad coordinate {t:?}") })
                })
                .collect::<Result<Point>>()?;
            let op = Op { point, sign };
            v.check(&op, lineno)?;
            ops.push(op);
        }
        Ok(Self { d, levels, ops })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dskm v1 d={} L={}", self.d, self.levels)?;
        for op in &self.ops {
            write!(w, "{}", op.sign.symbol())?;
            for x in &op.point {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Checks that the file matches the instance's dimension and levels.
    pub fn check_instance(&self, inst: &ClusteringInstance) -> Result<()> {
        if self.d != inst.d || self.levels != inst.levels() {
            return domain(format!(
                "stream has d={} L={}, instance has d={} L={}",
                self.d,
                self.levels,
                inst.d,
                inst.levels()
            ));
        }
        Ok(())
    }

    /// The net point set, sorted.
    pub fn live_points(&self) -> Vec<Point> {
        live_points(&self.ops)
    }
}

pub fn live_points(ops: &[Op]) -> Vec<Point> {
    let mut net: HashMap<&Point, i64> = HashMap::new();
    for op in ops {
        *net.entry(&op.point).or_default() += op.sign.as_i64();
    }
    let mut out: Vec<Point> = net.into_iter().filter(|&(_, c)| c > 0).map(|(p, _)| p.clone()).collect();
    out.sort();
    out
}

struct Validator {
    d: usize,
    side: u64,
    live: HashMap<Point, bool>,
}

impl Validator {
    fn new(d: usize, levels: u32) -> Self {
        Self { d, side: 1u64 << levels, live: HashMap::new() }
    }

    fn check(&mut self, op: &Op, line: usize) -> Result<()> {
        let err = |m: String| Err(Error::Parse { line, message: m });
        if op.point.len() != self.d {
            return err(format!("expected {} coordinates, found {}", self.d, op.point.len()));
        }
        if op.point.iter().any(|&x| x == 0 || x as u64 > self.side) {
            return err(format!("coordinate outside [1, {}]", self.side));
        }
        let live = self.live.entry(op.point.clone()).or_insert(false);
        match (op.sign, *live) {
            (Sign::Insert, true) => err(format!("point {:?} inserted while already live", op.point)),
            (Sign::Delete, false) => err(format!("point {:?} deleted while not live", op.point)),
            (Sign::Insert, false) => {
                *live = true;
                Ok(())
            }
            (Sign::Delete, true) => {
                *live = false;
                Ok(())
            }
        }
    }
}
