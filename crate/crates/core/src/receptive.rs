//! Receptive graphs and the rectangular moving-grid weight allocation.
//!
//! A [`ReceptiveGraph`] is the allocation map applied to one point set: each
//! directed edge `(dst, src, slot)` says that the value at `src` contributes
//! to the output at `dst` through kernel weight `slot`. Since a pair
//! `(dst, src)` carries at most one edge, each allocation matrix row block has
//! at most one non-zero per column.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::domain::Point;
use crate::error::{GconvError, Result};

/// Window of `(2p+1) x (2q+1)` square cells of side `mu`, centered on the
/// destination point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectWindow {
    p: usize,
    q: usize,
    mu: f64,
}

impl RectWindow {
    pub fn new(p: usize, q: usize, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(GconvError::InvalidParameter(format!(
                "window scale mu must be positive, got {mu}"
            )));
        }
        Ok(Self { p, q, mu })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cols(&self) -> usize {
        2 * self.p + 1
    }

    pub fn rows(&self) -> usize {
        2 * self.q + 1
    }

    pub fn slot_count(&self) -> usize {
        self.cols() * self.rows()
    }

    /// Slot hit by the zero offset.
    pub fn center_slot(&self) -> usize {
        self.p + self.cols() * self.q
    }

    /// Slot of the cell containing a source at offset `(dx, dy)` from the
    /// destination, or `None` outside the window. Cells are half-open, so
    /// the window spans `[-(p+1/2)mu, (p+1/2)mu)` horizontally.
    pub fn slot_of(&self, dx: f64, dy: f64) -> Option<usize> {
        let col = (dx / self.mu + self.p as f64 + 0.5).floor();
        let row = (dy / self.mu + self.q as f64 + 0.5).floor();
        if col < 0.0 || row < 0.0 || col >= self.cols() as f64 || row >= self.rows() as f64 {
            return None;
        }
        Some(col as usize + self.cols() * row as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub dst: u32,
    pub src: u32,
    pub slot: u32,
}

/// Edge seen from its source: the destination and the slot used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutEdge {
    pub dst: u32,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveGraph {
    point_count: usize,
    slot_count: usize,
    /// sorted by (dst, src)
    edges: Vec<Edge>,
    dst_offsets: Vec<usize>,
    /// transpose adjacency, sorted by (src, dst)
    out_edges: Vec<OutEdge>,
    src_offsets: Vec<usize>,
    /// (dst, src) pairs grouped by slot, each group in (dst, src) order
    slot_pairs: Vec<(u32, u32)>,
    slot_offsets: Vec<usize>,
}

fn offsets(counts: impl Iterator<Item = usize>, len: usize) -> Vec<usize> {
    let mut off = Vec::with_capacity(len + 1);
    off.push(0);
    let mut acc = 0;
    for c in counts {
        acc += c;
        off.push(acc);
    }
    off
}

impl ReceptiveGraph {
    /// Builds a graph from an arbitrary allocation. Edges are sorted; a
    /// repeated `(dst, src)` pair or an out-of-range index is rejected.
    pub fn from_edges(point_count: usize, slot_count: usize, mut edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.dst as usize >= point_count {
                return Err(GconvError::OutOfRange {
                    index: e.dst as usize,
                    len: point_count,
                });
            }
            if e.src as usize >= point_count {
                return Err(GconvError::OutOfRange {
                    index: e.src as usize,
                    len: point_count,
                });
            }
            if e.slot as usize >= slot_count {
                return Err(GconvError::OutOfRange {
                    index: e.slot as usize,
                    len: slot_count,
                });
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges
            .windows(2)
            .find(|w| (w[0].dst, w[0].src) == (w[1].dst, w[1].src))
        {
            return Err(GconvError::InvalidParameter(format!(
                "two edges from {} to {}",
                w[0].src, w[0].dst
            )));
        }
        Ok(Self::from_sorted(point_count, slot_count, edges))
    }

    fn from_sorted(point_count: usize, slot_count: usize, edges: Vec<Edge>) -> Self {
        let mut in_deg = vec![0usize; point_count];
        let mut out_deg = vec![0usize; point_count];
        let mut slot_deg = vec![0usize; slot_count];
        for e in &edges {
            in_deg[e.dst as usize] += 1;
            out_deg[e.src as usize] += 1;
            slot_deg[e.slot as usize] += 1;
        }
        let dst_offsets = offsets(in_deg.into_iter(), point_count);
        let src_offsets = offsets(out_deg.into_iter(), point_count);
        let slot_offsets = offsets(slot_deg.into_iter(), slot_count);

        // Counting-sort placement keeps (dst, src) order inside each bucket
        // because `edges` is already sorted by (dst, src).
        let mut out_edges = vec![OutEdge { dst: 0, slot: 0 }; edges.len()];
        let mut slot_pairs = vec![(0u32, 0u32); edges.len()];
        let mut out_cursor = src_offsets[..point_count].to_vec();
        let mut slot_cursor = slot_offsets[..slot_count].to_vec();
        for e in &edges {
            let s = e.src as usize;
            out_edges[out_cursor[s]] = OutEdge {
                dst: e.dst,
                slot: e.slot,
            };
            out_cursor[s] += 1;
            let k = e.slot as usize;
            slot_pairs[slot_cursor[k]] = (e.dst, e.src);
            slot_cursor[k] += 1;
        }

        Self {
            point_count,
            slot_count,
            edges,
            dst_offsets,
            out_edges,
            src_offsets,
            slot_pairs,
            slot_offsets,
        }
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges ending at `dst`, in src order.
    pub fn in_edges(&self, dst: usize) -> Result<&[Edge]> {
        if dst >= self.point_count {
            return Err(GconvError::OutOfRange {
                index: dst,
                len: self.point_count,
            });
        }
        Ok(self.in_edges_unchecked(dst))
    }

    /// Edges leaving `src`, in dst order.
    pub fn out_edges(&self, src: usize) -> Result<&[OutEdge]> {
        if src >= self.point_count {
            return Err(GconvError::OutOfRange {
                index: src,
                len: self.point_count,
            });
        }
        Ok(self.out_edges_unchecked(src))
    }

    pub(crate) fn in_edges_unchecked(&self, dst: usize) -> &[Edge] {
        &self.edges[self.dst_offsets[dst]..self.dst_offsets[dst + 1]]
    }

    pub(crate) fn out_edges_unchecked(&self, src: usize) -> &[OutEdge] {
        &self.out_edges[self.src_offsets[src]..self.src_offsets[src + 1]]
    }

    /// `(dst, src)` pairs carrying weight `slot`.
    pub fn slot_edges(&self, slot: usize) -> &[(u32, u32)] {
        &self.slot_pairs[self.slot_offsets[slot]..self.slot_offsets[slot + 1]]
    }

    /// The edge set partitioned by kernel slot.
    pub fn edges_by_slot(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.slot_count)
            .map(|k| {
                self.slot_edges(k)
                    .iter()
                    .map(|&(d, s)| (d as usize, s as usize))
                    .collect()
            })
            .collect()
    }

    /// Debug dump: one `dst src slot` line per edge, sorted.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.dst, e.src, e.slot)?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut s = String::with_capacity(self.edges.len() * 12);
        for e in &self.edges {
            let _ = writeln!(s, "{} {} {}", e.dst, e.src, e.slot);
        }
        s
    }
}

/// Connects every point to each point that falls in the window centered on
/// it, allocating the slot of the cell the source lands in. Self-edges always
/// exist and use the center slot.
pub fn build_rect_graph(points: &[Point], window: &RectWindow) -> ReceptiveGraph {
    let span = window.cols().max(window.rows()) as f64 * window.mu();
    let inv = 1.0 / span;
    let cell = |p: &Point| ((p.x * inv).floor() as i64, (p.y * inv).floor() as i64);

    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i as u32);
    }

    let mut edges = Vec::with_capacity(points.len() * window.slot_count());
    let mut row: Vec<Edge> = Vec::with_capacity(4 * window.slot_count());
    for (dst, u) in points.iter().enumerate() {
        row.clear();
        let (cx, cy) = cell(u);
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                let Some(members) = buckets.get(&(gx, gy)) else {
                    continue;
                };
                for &src in members {
                    let v = &points[src as usize];
                    if let Some(slot) = window.slot_of(v.x - u.x, v.y - u.y) {
                        row.push(Edge {
                            dst: dst as u32,
                            src,
                            slot: slot as u32,
                        });
                    }
                }
            }
        }
        row.sort_unstable_by_key(|e| e.src);
        edges.extend_from_slice(&row);
    }
    ReceptiveGraph::from_sorted(points.len(), window.slot_count(), edges)
}
