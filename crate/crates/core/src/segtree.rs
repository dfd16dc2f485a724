//! Hierarchical segmentation of the day axis. Every node owns the distance
//! matrix of its segment; parents are merged from their children, and any
//! leaf-aligned window is answered from `O(log L)` nodes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::preprocess::Bis;
use crate::tdist::{self, DistanceMatrix, PreparedSet, SegmentView};

/// A BIS segment with `w_units` bits of real neighbour context on each side.
pub type ExtendedView<'a> = SegmentView<'a>;

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentNode {
    pub left: usize,
    pub right: usize,
    pub matrix: DistanceMatrix,
    pub children: Option<(usize, usize)>,
}

impl SegmentNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

/// Arena-backed segment tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTree {
    nodes: Vec<SegmentNode>,
    len: usize,
    w_units: usize,
    lambda: u32,
}

struct Built {
    left: usize,
    right: usize,
    matrix: DistanceMatrix,
    children: Option<Box<(Built, Built)>>,
}

fn build_blocks(prep: &PreparedSet, b0: usize, b1: usize, w: usize, len: usize) -> Result<Built> {
    let (left, right) = (b0 * w, (b1 * w).min(len));
    if b1 - b0 == 1 {
        return Ok(Built {
            left,
            right,
            matrix: prep.segment_matrix(left, right),
            children: None,
        });
    }
    let mid = b0 + (b1 - b0).div_ceil(2);
    let (l, r) = par::join(
        || build_blocks(prep, b0, mid, w, len),
        || build_blocks(prep, mid, b1, w, len),
    );
    let (l, r) = (l?, r?);
    let matrix = tdist::combine_pair(&l.matrix, &r.matrix)?;
    Ok(Built {
        left,
        right,
        matrix,
        children: Some(Box::new((l, r))),
    })
}

fn flatten(b: Built, nodes: &mut Vec<SegmentNode>) -> usize {
    let id = nodes.len();
    nodes.push(SegmentNode {
        left: b.left,
        right: b.right,
        matrix: b.matrix,
        children: None,
    });
    if let Some(kids) = b.children {
        let (l, r) = *kids;
        let li = flatten(l, nodes);
        let ri = flatten(r, nodes);
        nodes[id].children = Some((li, ri));
    }
    id
}

/// Merge matrices of disjoint contiguous segments into one.
pub fn combine(parts: &[&DistanceMatrix]) -> Result<DistanceMatrix> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::Combine("nothing to combine".into()))?;
    rest.iter()
        .try_fold((*first).clone(), |acc, m| tdist::combine_pair(&acc, m))
}

impl SegmentTree {
    /// Build over sequences that all share length and unit width. Leaves are
    /// the `w_units`-wide blocks of the day (the last may be shorter).
    pub fn build(all_bis: &[Bis], w_units: usize) -> Result<Self> {
        let first = all_bis
            .first()
            .ok_or_else(|| Error::Build("no sequences".into()))?;
        if w_units == 0 {
            return Err(Error::Build("w_units must be at least 1".into()));
        }
        let (len, lambda) = (first.len(), first.lambda);
        if let Some(b) = all_bis.iter().find(|b| b.len() != len || b.lambda != lambda) {
            return Err(Error::Build(format!(
                "heterogeneous sequences: length {} / lambda {} vs {} / {}",
                b.len(),
                b.lambda,
                len,
                lambda
            )));
        }
        if len == 0 {
            return Err(Error::Build("empty sequences".into()));
        }
        let refs: Vec<&[bool]> = all_bis.iter().map(|b| b.bits.as_slice()).collect();
        let prep = PreparedSet::new(&refs, w_units)?;
        let built = build_blocks(&prep, 0, len.div_ceil(w_units), w_units, len)?;
        let mut nodes = Vec::new();
        flatten(built, &mut nodes);
        Ok(Self {
            nodes,
            len,
            w_units,
            lambda,
        })
    }

    pub fn root(&self) -> &SegmentNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[SegmentNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SegmentNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn w_units(&self) -> usize {
        self.w_units
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.root().matrix.n()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &SegmentTree, id: usize) -> usize {
            match t.nodes[id].children {
                None => 0,
                Some((l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, 0)
    }

    /// Maximal nodes exactly tiling `[le, ri)` after snapping outward to
    /// leaf boundaries.
    pub fn query(&self, le: usize, ri: usize) -> Result<Vec<&SegmentNode>> {
        if le >= ri || ri > self.len {
            return Err(Error::OutOfRange {
                le,
                ri,
                len: self.len,
            });
        }
        let (le, ri) = self.snap(le, ri);
        let mut out = Vec::new();
        self.collect(0, le, ri, &mut out);
        Ok(out)
    }

    fn collect<'a>(&'a self, id: usize, le: usize, ri: usize, out: &mut Vec<&'a SegmentNode>) {
        let node = &self.nodes[id];
        if node.left >= le && node.right <= ri {
            out.push(node);
        } else if node.left >= ri || node.right <= le {
        } else if let Some((l, r)) = node.children {
            self.collect(l, le, ri, out);
            self.collect(r, le, ri, out);
        }
    }

    /// Window bounds widened to the enclosing leaf boundaries.
    pub fn snap(&self, le: usize, ri: usize) -> (usize, usize) {
        let w = self.w_units;
        ((le / w) * w, (ri.div_ceil(w) * w).min(self.len))
    }

    /// Distance matrix for `[le, ri)` (snapped), merged from the tree.
    pub fn window_matrix(&self, le: usize, ri: usize) -> Result<DistanceMatrix> {
        let parts: Vec<&DistanceMatrix> = self.query(le, ri)?.into_iter().map(|n| &n.matrix).collect();
        combine(&parts)
    }

    /// Write one exact matrix file per node plus `index.csv`
    /// (`node_id,left,right,child_ids`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = BufWriter::new(fs::File::create(dir.join(INDEX_FILE))?);
        for (id, node) in self.nodes.iter().enumerate() {
            let kids = node
                .children
                .map(|(l, r)| format!("{l};{r}"))
                .unwrap_or_default();
            writeln!(index, "{id},{},{},{kids}", node.left, node.right)?;
            let f = BufWriter::new(fs::File::create(dir.join(node_file(id)))?);
            tdist::write_exact(f, &node.matrix, self.w_units, self.lambda)?;
        }
        index.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = BufReader::new(
            fs::File::open(dir.join(INDEX_FILE))
                .map_err(|e| Error::Input(format!("{}: {e}", dir.join(INDEX_FILE).display())))?,
        );
        let mut nodes = Vec::new();
        let mut meta: Option<(usize, u32)> = None;
        for (ln, line) in index.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                line: ln + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            let [id, left, right, kids] = f[..] else {
                return Err(perr("expected node_id,left,right,child_ids"));
            };
            let id: usize = id.parse().map_err(|_| perr("bad id"))?;
            if id != nodes.len() {
                return Err(perr("node ids must be dense and ordered"));
            }
            let children = if kids.is_empty() {
                None
            } else {
                let (l, r) = kids.split_once(';').ok_or_else(|| perr("bad child ids"))?;
                Some((
                    l.parse().map_err(|_| perr("bad child id"))?,
                    r.parse().map_err(|_| perr("bad child id"))?,
                ))
            };
            let file = BufReader::new(fs::File::open(dir.join(node_file(id)))?);
            let ((_, w, lambda), matrix) = tdist::read_exact(file)?;
            match meta {
                None => meta = Some((w, lambda)),
                Some(m) if m != (w, lambda) => return Err(perr("node files disagree on w_units/lambda")),
                _ => {}
            }
            nodes.push(SegmentNode {
                left: left.parse().map_err(|_| perr("bad left"))?,
                right: right.parse().map_err(|_| perr("bad right"))?,
                matrix,
                children,
            });
        }
        let (w_units, lambda) = meta.ok_or_else(|| Error::Input("empty tree index".into()))?;
        let len = nodes[0].right;
        Ok(Self {
            nodes,
            len,
            w_units,
            lambda,
        })
    }
}

fn node_file(id: usize) -> String {
    format!("node_{id}.mat")
}

/// Direct (non-tree) matrix of `[le, ri)` with full extension context.
pub fn direct_window_matrix(all_bis: &[Bis], le: usize, ri: usize, w_units: usize) -> Result<DistanceMatrix> {
    let views: Vec<ExtendedView<'_>> = all_bis
        .iter()
        .map(|b| SegmentView::extended(&b.bits, le, ri, w_units))
        .collect();
    tdist::build_matrix(&views, w_units)
}
