//! Pairwise intermediate forecasts and their recursive combination.

use std::fmt;

use crate::dataset::{compute_norm, normalize, pad_replicate, padded_dim, trim_padding};
use crate::error::{Error, Result};
use crate::grid::Field2D;
use crate::unet::{forward, NetworkWeights};

/// Intermediate field between `a` and `b` valid at their shared lead time.
///
/// Both inputs are scaled with their joint range, padded, passed through the
/// network as channels `[a, b]`, trimmed and scaled back. Output values are
/// clamped to the inputs' joint `[min, max]`, which the symmetric wind range
/// would otherwise exceed. A constant joint field returns `a`.
pub fn medcast_pair(w: &NetworkWeights<f32>, a: &Field2D, b: &Field2D) -> Result<Field2D> {
    a.check_compatible(b)?;
    let norm = match compute_norm(&[a, b], a.variable.norm_class()) {
        Ok(n) => n,
        Err(Error::DegenerateRange(_)) => return Ok(a.clone()),
        Err(e) => return Err(e),
    };
    let lo = a.min().min(b.min());
    let hi = a.max().max(b.max());
    if !(hi > lo) {
        return Ok(a.clone());
    }

    let g = a.grid;
    let depth = w.config.depth;
    let (pnx, pny) = (padded_dim(g.n_x, depth), padded_dim(g.n_y, depth));
    let mut input = Vec::with_capacity(2 * pnx * pny);
    for f in [a, b] {
        let padded = pad_replicate(&normalize(f, &norm), g.n_x, g.n_y, pnx, pny)?;
        input.extend(padded.iter().map(|&x| x as f32));
    }
    let out = forward(w, &input, pny, pnx)?;
    let out: Vec<f64> = out.iter().map(|&y| f64::from(y)).collect();
    let trimmed = trim_padding(&out, pnx, pny, g.n_x, g.n_y)?;
    let values = trimmed
        .iter()
        .map(|&y| norm.denormalize_value(y).clamp(lo, hi))
        .collect();
    a.with_values(values)
}

/// Root mean square difference between the two input orders, divided by the
/// inputs' joint range.
pub fn order_sensitivity(w: &NetworkWeights<f32>, a: &Field2D, b: &Field2D) -> Result<f64> {
    let ab = medcast_pair(w, a, b)?;
    let ba = medcast_pair(w, b, a)?;
    let range = a.max().max(b.max()) - a.min().min(b.min());
    if !(range > 0.0) {
        return Ok(0.0);
    }
    let ms = ab
        .values
        .iter()
        .zip(&ba.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / ab.values.len() as f64;
    Ok(ms.sqrt() / range)
}

/// Full binary tree of pairwise operations over model fields.
#[derive(Debug, Clone, PartialEq)]
pub enum CombineTree {
    Leaf { model_id: String, field: Field2D },
    Node(Box<CombineTree>, Box<CombineTree>),
}

impl CombineTree {
    pub fn leaf(model_id: impl Into<String>, field: Field2D) -> Self {
        CombineTree::Leaf {
            model_id: model_id.into(),
            field,
        }
    }

    pub fn node(left: CombineTree, right: CombineTree) -> Self {
        CombineTree::Node(Box::new(left), Box::new(right))
    }

    /// Balanced tree pairing neighbours: `((0,1),(2,3))` for four leaves.
    pub fn balanced(leaves: Vec<(String, Field2D)>) -> Result<Self> {
        check_leaf_count(leaves.len())?;
        let mut level: Vec<CombineTree> = leaves
            .into_iter()
            .map(|(id, f)| CombineTree::leaf(id, f))
            .collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2);
            let mut it = level.into_iter();
            while let (Some(l), Some(r)) = (it.next(), it.next()) {
                next.push(CombineTree::node(l, r));
            }
            level = next;
        }
        let tree = level.pop().expect("at least two leaves");
        tree.validate()?;
        Ok(tree)
    }

    /// Tree described by a nested layout such as `((0,2),(1,3))`, where each
    /// number indexes `leaves` and every leaf appears exactly once.
    pub fn from_layout(layout: &str, leaves: Vec<(String, Field2D)>) -> Result<Self> {
        check_leaf_count(leaves.len())?;
        let mut slots: Vec<Option<(String, Field2D)>> = leaves.into_iter().map(Some).collect();
        let mut parser = LayoutParser {
            src: layout.as_bytes(),
            pos: 0,
        };
        let tree = parser.parse(&mut slots)?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(layout_err(layout, "trailing characters"));
        }
        if slots.iter().any(Option::is_some) {
            return Err(layout_err(layout, "not every input is used"));
        }
        tree.validate()?;
        Ok(tree)
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            CombineTree::Leaf { .. } => 1,
            CombineTree::Node(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    fn depths(&self, d: usize, out: &mut Vec<usize>) {
        match self {
            CombineTree::Leaf { .. } => out.push(d),
            CombineTree::Node(l, r) => {
                l.depths(d + 1, out);
                r.depths(d + 1, out);
            }
        }
    }

    pub fn leaves(&self) -> Vec<(&str, &Field2D)> {
        match self {
            CombineTree::Leaf { model_id, field } => vec![(model_id.as_str(), field)],
            CombineTree::Node(l, r) => {
                let mut v = l.leaves();
                v.extend(r.leaves());
                v
            }
        }
    }

    /// Power-of-two leaf count, every leaf at the same depth (equal 1:1
    /// weighting of all inputs), and mutually compatible leaf fields.
    pub fn validate(&self) -> Result<()> {
        check_leaf_count(self.leaf_count())?;
        let mut depths = Vec::new();
        self.depths(0, &mut depths);
        if depths.iter().any(|&d| d != depths[0]) {
            return Err(Error::InvalidParams(
                "combination tree is unbalanced; inputs would not be weighted 1:1".into(),
            ));
        }
        let leaves = self.leaves();
        let (_, first) = leaves[0];
        for (id, f) in &leaves[1..] {
            first.check_compatible(f)?;
            if f.init_time != first.init_time {
                return Err(Error::Shape(format!("input '{id}' has a different initial time")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for CombineTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombineTree::Leaf { model_id, .. } => f.write_str(model_id),
            CombineTree::Node(l, r) => write!(f, "({l},{r})"),
        }
    }
}

fn check_leaf_count(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

fn layout_err(layout: &str, msg: &str) -> Error {
    Error::InvalidParams(format!("combination layout '{layout}': {msg}"))
}

struct LayoutParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl LayoutParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn err(&self, msg: &str) -> Error {
        layout_err(
            &String::from_utf8_lossy(self.src),
            &format!("{msg} at offset {}", self.pos),
        )
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn parse(&mut self, slots: &mut [Option<(String, Field2D)>]) -> Result<CombineTree> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let l = self.parse(slots)?;
                self.expect(b',')?;
                let r = self.parse(slots)?;
                self.expect(b')')?;
                Ok(CombineTree::node(l, r))
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let idx: usize = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii digits")
                    .parse()
                    .map_err(|_| self.err("bad index"))?;
                let slot = slots
                    .get_mut(idx)
                    .ok_or_else(|| self.err(&format!("index {idx} out of range")))?;
                let (id, f) = slot
                    .take()
                    .ok_or_else(|| self.err(&format!("index {idx} used twice")))?;
                Ok(CombineTree::leaf(id, f))
            }
            _ => Err(self.err("expected '(' or an index")),
        }
    }
}

/// Post-order evaluation of `tree` with [`medcast_pair`] at every internal
/// node. Sibling subtrees are evaluated concurrently.
pub fn medcast_combine(w: &NetworkWeights<f32>, tree: &CombineTree) -> Result<Field2D> {
    tree.validate()?;
    eval(w, tree)
}

fn eval(w: &NetworkWeights<f32>, tree: &CombineTree) -> Result<Field2D> {
    match tree {
        CombineTree::Leaf { field, .. } => Ok(field.clone()),
        CombineTree::Node(l, r) => {
            let (a, b) = rayon::join(|| eval(w, l), || eval(w, r));
            medcast_pair(w, &a?, &b?)
        }
    }
}

/// The three distinct ways of pairing four inputs.
pub const FOUR_WAY_LAYOUTS: [&str; 3] = ["((0,1),(2,3))", "((0,2),(1,3))", "((0,3),(1,2))"];
