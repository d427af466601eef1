//! Weak annotation forms and their synthesis from dense ground-truth masks.
//!
//! Real corpora carry one annotation kind each; to exercise every supervision
//! regime from a single dense-labeled (or synthetic) corpus, this module
//! derives the four weak forms deterministically:
//!
//! - boxes: tight bounding box of the whole foreground
//! - polygons: boundary trace of the largest component, simplified to at most
//!   `max_vertices` corners, re-rasterized
//! - scribbles: morphological skeleton of the foreground plus the skeleton of
//!   a background ring around it
//! - points: uniform samples without replacement from each class
//!
//! Every operation is a pure function of its inputs (plus an explicit seed),
//! so synthesis can run from any number of workers.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default number of points sampled per class.
pub const DEFAULT_POINTS_PER_CLASS: usize = 5;

/// Default vertex budget for polygon simplification.
pub const DEFAULT_MAX_VERTICES: usize = 16;

/// Labeled pixels in a synthesized scribble never exceed this fraction of the
/// image (degenerate canvases too small to honor it keep one pixel per class).
pub const MAX_SCRIBBLE_FRACTION: f64 = 0.20;

// ---------------------------------------------------------------------------
// Label types
// ---------------------------------------------------------------------------

/// A binary `H×W` mask with values exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    grid: Array2<u8>,
}

impl DenseMask {
    pub fn new(grid: Array2<u8>) -> Result<Self> {
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::InvalidLabel(
                "dense mask values must be 0 or 1".into(),
            ));
        }
        Ok(Self { grid })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            grid: Array2::from_shape_fn((height, width), |(r, c)| u8::from(f(r, c))),
        }
    }

    pub fn grid(&self) -> &Array2<u8> {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.dim().0
    }

    pub fn width(&self) -> usize {
        self.grid.dim().1
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn is_fg(&self, row: usize, col: usize) -> bool {
        self.grid[[row, col]] == 1
    }

    pub fn fg_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }

    /// Foreground coordinates in row-major order.
    pub fn fg_pixels(&self) -> Vec<(usize, usize)> {
        self.grid
            .indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|((r, c), _)| (r, c))
            .collect()
    }
}

/// Inclusive axis-aligned bounding box in pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoxLabel {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoxLabel {
    pub fn new(row_min: usize, col_min: usize, row_max: usize, col_max: usize) -> Result<Self> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::InvalidLabel(format!(
                "inverted box [{row_min},{col_min},{row_max},{col_max}]"
            )));
        }
        Ok(Self {
            row_min,
            col_min,
            row_max,
            col_max,
        })
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row_min && row <= self.row_max && col >= self.col_min && col <= self.col_max
    }

    fn out_of_bounds(&self, height: usize, width: usize) -> Error {
        Error::OutOfBounds {
            row_min: self.row_min,
            col_min: self.col_min,
            row_max: self.row_max,
            col_max: self.col_max,
            height,
            width,
        }
    }
}

/// Per-pixel scribble state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScribbleMark {
    Background,
    Foreground,
    Unlabeled,
}

/// Sparse stroke annotation: a few pixels marked FG/BG, the rest unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleLabel {
    grid: Array2<ScribbleMark>,
}

impl ScribbleLabel {
    /// Requires at least one foreground and one background mark. A fully
    /// labeled grid is accepted (the scribble loss degenerates to plain BCE).
    pub fn new(grid: Array2<ScribbleMark>) -> Result<Self> {
        let has_fg = grid.iter().any(|&m| m == ScribbleMark::Foreground);
        let has_bg = grid.iter().any(|&m| m == ScribbleMark::Background);
        if !has_fg || !has_bg {
            return Err(Error::InvalidLabel(
                "scribble needs at least one FG and one BG pixel".into(),
            ));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Array2<ScribbleMark> {
        &self.grid
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn labeled_count(&self) -> usize {
        self.grid
            .iter()
            .filter(|&&m| m != ScribbleMark::Unlabeled)
            .count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_count() as f64 / (self.grid.len() as f64)
    }
}

/// A handful of labeled coordinates per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointLabel {
    pub fg_points: Vec<(usize, usize)>,
    pub bg_points: Vec<(usize, usize)>,
}

impl PointLabel {
    /// Validates bounds and fg/bg disjointness.
    pub fn new(
        fg_points: Vec<(usize, usize)>,
        bg_points: Vec<(usize, usize)>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        for &(r, c) in fg_points.iter().chain(bg_points.iter()) {
            if r >= height || c >= width {
                return Err(Error::InvalidLabel(format!(
                    "point ({r},{c}) outside {height}x{width} canvas"
                )));
            }
        }
        if fg_points.iter().any(|p| bg_points.contains(p)) {
            return Err(Error::InvalidLabel(
                "fg and bg point sets must be disjoint".into(),
            ));
        }
        Ok(Self {
            fg_points,
            bg_points,
        })
    }
}

// ---------------------------------------------------------------------------
// Synthesis operations
// ---------------------------------------------------------------------------

/// Tight bounding box of all foreground pixels.
pub fn mask_to_box(mask: &DenseMask) -> Result<BoxLabel> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((r, c), &v) in mask.grid().indexed_iter() {
        if v == 1 {
            bounds = Some(match bounds {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            });
        }
    }
    let (r0, c0, r1, c1) = bounds.ok_or(Error::EmptyMask)?;
    BoxLabel::new(r0, c0, r1, c1)
}

/// Box-shaped mask: 1 inside the inclusive rectangle, 0 elsewhere.
pub fn rasterize_box(label: &BoxLabel, height: usize, width: usize) -> Result<DenseMask> {
    if !label.fits(height, width) {
        return Err(label.out_of_bounds(height, width));
    }
    Ok(DenseMask::from_fn(height, width, |r, c| {
        label.contains(r, c)
    }))
}

/// Rasterized polygonal approximation of the largest foreground component.
///
/// The component boundary is traced, simplified to at most `max_vertices`
/// corners by repeatedly inserting the contour point farthest from the
/// current polygon, and filled back in (boundary pixels inclusive).
/// Degenerate components (single pixels, straight lines) fall back to the
/// component's bounding-box rectangle.
pub fn mask_to_polygon(mask: &DenseMask, max_vertices: usize) -> Result<DenseMask> {
    if max_vertices < 3 {
        return Err(Error::InvalidConfig(format!(
            "max_vertices must be >= 3, got {max_vertices}"
        )));
    }
    if mask.fg_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (height, width) = mask.dim();
    let component = largest_component(mask.grid());
    let contour = trace_boundary(&component);
    match simplify_contour(&contour, max_vertices) {
        Some(vertices) => Ok(DenseMask {
            grid: fill_polygon(&vertices, height, width),
        }),
        None => {
            // Line or point component: its own bounding box.
            let comp_mask = DenseMask { grid: component };
            rasterize_box(&mask_to_box(&comp_mask)?, height, width)
        }
    }
}

/// Skeleton scribbles: foreground skeleton marked FG, skeleton of a
/// background ring around the object marked BG, all else unlabeled.
///
/// The ring band radii are drawn from `rng_seed`, so the output is
/// byte-identical for a fixed seed and varies across seeds.
pub fn mask_to_scribble(mask: &DenseMask, rng_seed: u64) -> Result<ScribbleLabel> {
    let (height, width) = mask.dim();
    let fg_total = mask.fg_count();
    if fg_total == 0 {
        return Err(Error::EmptyMask);
    }
    if fg_total == height * width {
        return Err(Error::EmptyBackground);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let inner: usize = rng.gen_range(3..=5);
    let outer: usize = inner + rng.gen_range(5..=7);

    let fg_skeleton = thin(mask.grid().clone());

    let near = dilate_chebyshev(mask.grid(), inner);
    let far = dilate_chebyshev(mask.grid(), outer);
    let mut ring = Array2::<u8>::zeros((height, width));
    let mut ring_nonempty = false;
    for ((r, c), v) in ring.indexed_iter_mut() {
        if far[[r, c]] == 1 && near[[r, c]] == 0 {
            *v = 1;
            ring_nonempty = true;
        }
    }
    if !ring_nonempty {
        // Object plus margin covers the canvas: scribble the whole background.
        for ((r, c), v) in ring.indexed_iter_mut() {
            *v = 1 - mask.grid()[[r, c]];
        }
    }
    let bg_skeleton = thin(ring);

    let mut fg_px: Vec<(usize, usize)> = fg_skeleton
        .indexed_iter()
        .filter(|(_, &v)| v == 1)
        .map(|(p, _)| p)
        .collect();
    let mut bg_px: Vec<(usize, usize)> = bg_skeleton
        .indexed_iter()
        .filter(|(_, &v)| v == 1)
        .map(|(p, _)| p)
        .collect();

    // Cap the labeled fraction, dropping BG first, but never below one pixel
    // per class.
    let budget = ((height * width) as f64 * MAX_SCRIBBLE_FRACTION).floor() as usize;
    if fg_px.len() + bg_px.len() > budget {
        let keep_bg = budget.saturating_sub(fg_px.len()).max(1);
        bg_px.truncate(keep_bg);
        if fg_px.len() + bg_px.len() > budget {
            fg_px.truncate(budget.saturating_sub(bg_px.len()).max(1));
        }
    }

    let mut grid = Array2::from_elem((height, width), ScribbleMark::Unlabeled);
    for (r, c) in fg_px {
        grid[[r, c]] = ScribbleMark::Foreground;
    }
    for (r, c) in bg_px {
        grid[[r, c]] = ScribbleMark::Background;
    }
    ScribbleLabel::new(grid)
}

/// Uniform point samples without replacement: `min(k_fg, |FG|)` foreground
/// and `min(k_bg, |BG|)` background coordinates.
pub fn mask_to_points(
    mask: &DenseMask,
    k_fg: usize,
    k_bg: usize,
    rng_seed: u64,
) -> Result<PointLabel> {
    let (height, width) = mask.dim();
    let fg: Vec<(usize, usize)> = mask.fg_pixels();
    if fg.is_empty() {
        return Err(Error::EmptyMask);
    }
    let bg: Vec<(usize, usize)> = mask
        .grid()
        .indexed_iter()
        .filter(|(_, &v)| v == 0)
        .map(|(p, _)| p)
        .collect();
    if bg.is_empty() {
        return Err(Error::EmptyBackground);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let fg_points: Vec<_> = fg
        .choose_multiple(&mut rng, k_fg.min(fg.len()))
        .copied()
        .collect();
    let bg_points: Vec<_> = bg
        .choose_multiple(&mut rng, k_bg.min(bg.len()))
        .copied()
        .collect();
    PointLabel::new(fg_points, bg_points, height, width)
}

// ---------------------------------------------------------------------------
// Morphology
// ---------------------------------------------------------------------------

/// `radius` iterations of 3x3 dilation (Chebyshev ball of that radius).
fn dilate_chebyshev(grid: &Array2<u8>, radius: usize) -> Array2<u8> {
    let (h, w) = grid.dim();
    let mut cur = grid.clone();
    for _ in 0..radius {
        let mut next = cur.clone();
        for r in 0..h {
            for c in 0..w {
                if cur[[r, c]] == 1 {
                    continue;
                }
                'probe: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr >= 0
                            && nr < h as i64
                            && nc >= 0
                            && nc < w as i64
                            && cur[[nr as usize, nc as usize]] == 1
                        {
                            next[[r, c]] = 1;
                            break 'probe;
                        }
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Zhang-Suen thinning. Deletion-only, so the skeleton is a subset of the
/// input and a nonempty input always leaves a nonempty skeleton.
fn thin(mut grid: Array2<u8>) -> Array2<u8> {
    let (h, w) = grid.dim();
    let mut count: usize = grid.iter().map(|&v| v as usize).sum();
    let at = |g: &Array2<u8>, r: i64, c: i64| -> u8 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0
        } else {
            g[[r as usize, c as usize]]
        }
    };
    loop {
        let mut changed = false;
        for phase in 0..2 {
            let mut to_clear: Vec<(usize, usize)> = Vec::new();
            for r in 0..h as i64 {
                for c in 0..w as i64 {
                    if at(&grid, r, c) == 0 {
                        continue;
                    }
                    // Neighbors p2..p9 clockwise from north.
                    let p = [
                        at(&grid, r - 1, c),
                        at(&grid, r - 1, c + 1),
                        at(&grid, r, c + 1),
                        at(&grid, r + 1, c + 1),
                        at(&grid, r + 1, c),
                        at(&grid, r + 1, c - 1),
                        at(&grid, r, c - 1),
                        at(&grid, r - 1, c - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8)
                        .filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1)
                        .count();
                    if a != 1 {
                        continue;
                    }
                    let (c1, c2) = if phase == 0 {
                        (p[0] * p[2] * p[4], p[2] * p[4] * p[6])
                    } else {
                        (p[0] * p[2] * p[6], p[0] * p[4] * p[6])
                    };
                    if c1 == 0 && c2 == 0 {
                        to_clear.push((r as usize, c as usize));
                    }
                }
            }
            // Small compact blobs can satisfy the deletion rules everywhere
            // at once; spare the tail of the deletion list so the skeleton
            // of a nonempty shape is never empty.
            if to_clear.len() >= count {
                to_clear.truncate(count.saturating_sub(1));
            }
            if !to_clear.is_empty() {
                changed = true;
                count -= to_clear.len();
                for (r, c) in to_clear {
                    grid[[r, c]] = 0;
                }
            }
        }
        if !changed {
            return grid;
        }
    }
}

/// Largest 4-connected foreground component (ties resolved by scan order).
fn largest_component(grid: &Array2<u8>) -> Array2<u8> {
    let (h, w) = grid.dim();
    let mut label = Array2::<u32>::zeros((h, w));
    let mut sizes: Vec<usize> = vec![0]; // label 0 = background
    for r in 0..h {
        for c in 0..w {
            if grid[[r, c]] == 1 && label[[r, c]] == 0 {
                let id = sizes.len() as u32;
                sizes.push(0);
                let mut stack = vec![(r, c)];
                label[[r, c]] = id;
                while let Some((pr, pc)) = stack.pop() {
                    sizes[id as usize] += 1;
                    let neighbors = [
                        (pr.wrapping_sub(1), pc),
                        (pr + 1, pc),
                        (pr, pc.wrapping_sub(1)),
                        (pr, pc + 1),
                    ];
                    for (nr, nc) in neighbors {
                        if nr < h && nc < w && grid[[nr, nc]] == 1 && label[[nr, nc]] == 0 {
                            label[[nr, nc]] = id;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
        }
    }
    let best = (1..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i));
    let best = best.unwrap_or(0) as u32;
    Array2::from_shape_fn((h, w), |(r, c)| u8::from(label[[r, c]] == best && best != 0))
}

/// Moore-neighbor boundary trace of a single connected component.
/// Returns the boundary pixels as an ordered cycle.
fn trace_boundary(component: &Array2<u8>) -> Vec<(usize, usize)> {
    // Clockwise ring starting west; consecutive ring entries are adjacent,
    // so the backtrack pixel is always in the new pixel's neighborhood.
    const DIRS: [(i64, i64); 8] = [
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
    ];
    let (h, w) = component.dim();
    let Some(start) = component
        .indexed_iter()
        .find(|(_, &v)| v == 1)
        .map(|(p, _)| p)
    else {
        return Vec::new();
    };

    let fg = |r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && component[[r as usize, c as usize]] == 1
    };

    let mut contour = vec![start];
    let mut cur = (start.0 as i64, start.1 as i64);
    // The start pixel is the first in row-major order, so its west neighbor
    // is background; begin the clockwise sweep from there.
    let mut back_dir = 0usize;
    let mut seen = std::collections::HashSet::new();
    seen.insert((cur, back_dir));

    loop {
        let mut found = None;
        for k in 1..=8 {
            let d = (back_dir + k) % 8;
            let (nr, nc) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if fg(nr, nc) {
                found = Some((d, k));
                break;
            }
        }
        let Some((d, k)) = found else {
            return contour; // isolated pixel
        };
        let prev = (back_dir + k - 1) % 8;
        let backtrack = (cur.0 + DIRS[prev].0, cur.1 + DIRS[prev].1);
        let next = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
        let rel = (backtrack.0 - next.0, backtrack.1 - next.1);
        back_dir = DIRS
            .iter()
            .position(|&p| p == rel)
            .expect("backtrack adjacency");
        cur = next;
        if !seen.insert((cur, back_dir)) {
            return contour;
        }
        contour.push((cur.0 as usize, cur.1 as usize));
    }
}

/// Iterative farthest-point simplification of a closed contour.
///
/// Starts from the trace origin and its farthest contour point, then keeps
/// inserting the point with the largest distance to the polygon until
/// `max_vertices` is reached or every remaining point lies on the polygon.
/// Returns `None` when the contour has no area (fewer than 3 distinct points
/// or fully collinear).
fn simplify_contour(contour: &[(usize, usize)], max_vertices: usize) -> Option<Vec<(i64, i64)>> {
    let pts: Vec<(i64, i64)> = {
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(contour.len());
        for &(r, c) in contour {
            let p = (r as i64, c as i64);
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        if out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        out
    };
    {
        let mut distinct = pts.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return None;
        }
    }

    let n = pts.len();
    let far = (0..n).max_by_key(|&i| dist2(pts[0], pts[i])).unwrap();
    if far == 0 {
        return None;
    }
    // Vertex indices into `pts`, kept in contour order.
    let mut verts = vec![0usize, far];

    while verts.len() < max_vertices {
        let mut best: Option<(f64, usize, usize)> = None; // (deviation, arc, point)
        for a in 0..verts.len() {
            let i0 = verts[a];
            let i1 = verts[(a + 1) % verts.len()];
            let mut i = (i0 + 1) % n;
            while i != i1 {
                let d = segment_distance(pts[i], pts[i0], pts[i1]);
                if best.map_or(true, |(bd, _, _)| d > bd) {
                    best = Some((d, a, i));
                }
                i = (i + 1) % n;
            }
        }
        match best {
            Some((d, arc, idx)) if d > 1e-9 => verts.insert(arc + 1, idx),
            _ => break,
        }
    }

    let polygon: Vec<(i64, i64)> = verts.into_iter().map(|i| pts[i]).collect();
    if polygon_area2(&polygon) == 0 {
        return None;
    }
    Some(polygon)
}

fn dist2(a: (i64, i64), b: (i64, i64)) -> i64 {
    let dr = a.0 - b.0;
    let dc = a.1 - b.1;
    dr * dr + dc * dc
}

/// Euclidean distance from `p` to segment `ab`.
fn segment_distance(p: (i64, i64), a: (i64, i64), b: (i64, i64)) -> f64 {
    let (pr, pc) = (p.0 as f64, p.1 as f64);
    let (ar, ac) = (a.0 as f64, a.1 as f64);
    let (br, bc) = (b.0 as f64, b.1 as f64);
    let (dr, dc) = (br - ar, bc - ac);
    let len2 = dr * dr + dc * dc;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((pr - ar) * dr + (pc - ac) * dc) / len2).clamp(0.0, 1.0)
    };
    let (qr, qc) = (ar + t * dr, ac + t * dc);
    ((pr - qr).powi(2) + (pc - qc).powi(2)).sqrt()
}

/// Twice the signed area (shoelace), exact in integers.
fn polygon_area2(polygon: &[(i64, i64)]) -> i64 {
    let n = polygon.len();
    let mut acc = 0i64;
    for i in 0..n {
        let (r0, c0) = polygon[i];
        let (r1, c1) = polygon[(i + 1) % n];
        acc += c0 * r1 - c1 * r0;
    }
    acc.abs()
}

/// Even-odd polygon fill over pixel centers, boundary pixels inclusive.
/// All tests are exact integer arithmetic.
fn fill_polygon(polygon: &[(i64, i64)], height: usize, width: usize) -> Array2<u8> {
    let mut out = Array2::<u8>::zeros((height, width));
    let r_lo = polygon.iter().map(|p| p.0).min().unwrap().max(0);
    let r_hi = polygon.iter().map(|p| p.0).max().unwrap().min(height as i64 - 1);
    let c_lo = polygon.iter().map(|p| p.1).min().unwrap().max(0);
    let c_hi = polygon.iter().map(|p| p.1).max().unwrap().min(width as i64 - 1);
    let n = polygon.len();

    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let mut inside = false;
            let mut on_edge = false;
            for i in 0..n {
                let a = polygon[i];
                let b = polygon[(i + 1) % n];
                let cross = (b.0 - a.0) * (c - a.1) - (b.1 - a.1) * (r - a.0);
                if cross == 0
                    && r >= a.0.min(b.0)
                    && r <= a.0.max(b.0)
                    && c >= a.1.min(b.1)
                    && c <= a.1.max(b.1)
                {
                    on_edge = true;
                    break;
                }
                // Half-open vertical rule: edge spans the scanline r.
                if (a.0 > r) != (b.0 > r) {
                    // Column where the edge crosses row r is
                    // a.1 + (r - a.0) * (b.1 - a.1) / (b.0 - a.0); compare to c
                    // exactly via sign of the numerator over the row span.
                    let dr = b.0 - a.0;
                    let num = (a.1 - c) * dr + (r - a.0) * (b.1 - a.1);
                    if (num > 0) == (dr > 0) && num != 0 {
                        inside = !inside;
                    }
                }
            }
            if inside || on_edge {
                out[[r as usize, c as usize]] = 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(h: usize, w: usize, b: &BoxLabel) -> DenseMask {
        rasterize_box(b, h, w).unwrap()
    }

    /// Brute-force bounding box for cross-checking.
    fn oracle_box(mask: &DenseMask) -> BoxLabel {
        let px = mask.fg_pixels();
        BoxLabel::new(
            px.iter().map(|p| p.0).min().unwrap(),
            px.iter().map(|p| p.1).min().unwrap(),
            px.iter().map(|p| p.0).max().unwrap(),
            px.iter().map(|p| p.1).max().unwrap(),
        )
        .unwrap()
    }

    fn mask_iou(a: &DenseMask, b: &DenseMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (x, y) in a.grid().iter().zip(b.grid().iter()) {
            if *x == 1 && *y == 1 {
                inter += 1;
            }
            if *x == 1 || *y == 1 {
                union += 1;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn box_of_single_pixel() {
        let m = DenseMask::from_fn(8, 8, |r, c| (r, c) == (3, 4));
        assert_eq!(
            mask_to_box(&m).unwrap(),
            BoxLabel::new(3, 4, 3, 4).unwrap()
        );
    }

    #[test]
    fn box_of_full_mask() {
        let m = DenseMask::from_fn(8, 8, |_, _| true);
        assert_eq!(
            mask_to_box(&m).unwrap(),
            BoxLabel::new(0, 0, 7, 7).unwrap()
        );
    }

    #[test]
    fn box_of_l_shape_matches_bruteforce() {
        // L occupying rows 2-5, cols 1-6.
        let m = DenseMask::from_fn(8, 8, |r, c| {
            ((2..=5).contains(&r) && c == 1) || (r == 5 && (1..=6).contains(&c))
        });
        let got = mask_to_box(&m).unwrap();
        assert_eq!(got, BoxLabel::new(2, 1, 5, 6).unwrap());
        assert_eq!(got, oracle_box(&m));
    }

    #[test]
    fn box_of_empty_mask_errors() {
        let m = DenseMask::from_fn(4, 4, |_, _| false);
        assert!(matches!(mask_to_box(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn rasterize_full_canvas() {
        let b = BoxLabel::new(0, 0, 4, 6).unwrap();
        let m = rasterize_box(&b, 5, 7).unwrap();
        assert_eq!(m.fg_count(), 35);
    }

    #[test]
    fn rasterize_center_pixel() {
        let b = BoxLabel::new(1, 1, 1, 1).unwrap();
        let m = rasterize_box(&b, 3, 3).unwrap();
        assert_eq!(m.fg_count(), 1);
        assert!(m.is_fg(1, 1));
    }

    #[test]
    fn rasterize_rejects_oversized_box() {
        let b = BoxLabel::new(0, 0, 5, 5).unwrap();
        assert!(matches!(
            rasterize_box(&b, 4, 8),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn box_roundtrip_on_rectangles() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(5);
        for _ in 0..50 {
            let r0 = rng.gen_range(0..10);
            let r1 = rng.gen_range(r0..12);
            let c0 = rng.gen_range(0..10);
            let c1 = rng.gen_range(c0..12);
            let b = BoxLabel::new(r0, c0, r1, c1).unwrap();
            let m = rect_mask(12, 12, &b);
            assert_eq!(mask_to_box(&m).unwrap(), b);
            assert_eq!(rasterize_box(&b, 12, 12).unwrap(), m);
        }
    }

    #[test]
    fn polygon_of_rectangle_is_exact() {
        let b = BoxLabel::new(3, 2, 10, 13).unwrap();
        let m = rect_mask(16, 16, &b);
        let poly = mask_to_polygon(&m, 4).unwrap();
        assert_eq!(poly, m);
        // A larger vertex budget must not change an already-exact polygon.
        let poly16 = mask_to_polygon(&m, 16).unwrap();
        assert_eq!(poly16, m);
    }

    #[test]
    fn polygon_of_disk_is_tight_16gon() {
        let (h, w, r) = (64usize, 64usize, 20.0f64);
        let disk = DenseMask::from_fn(h, w, |i, j| {
            let (di, dj) = (i as f64 - 32.0, j as f64 - 32.0);
            (di * di + dj * dj).sqrt() <= r
        });
        let poly = mask_to_polygon(&disk, 16).unwrap();
        let iou = mask_iou(&poly, &disk);
        assert!(iou >= 0.95, "disk vs 16-gon IoU {iou}");

        // Independent reference: an inscribed regular 16-gon rasterized the
        // same way scores in the same band.
        let ideal: Vec<(i64, i64)> = (0..16)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / 16.0;
                (
                    (32.0 + r * th.sin()).round() as i64,
                    (32.0 + r * th.cos()).round() as i64,
                )
            })
            .collect();
        let ideal_mask = DenseMask {
            grid: fill_polygon(&ideal, h, w),
        };
        let ideal_iou = mask_iou(&ideal_mask, &disk);
        assert!(ideal_iou >= 0.95, "reference 16-gon IoU {ideal_iou}");
        assert!((iou - ideal_iou).abs() < 0.05);
    }

    #[test]
    fn polygon_single_pixel_falls_back_to_box() {
        let m = DenseMask::from_fn(8, 8, |r, c| (r, c) == (2, 6));
        let poly = mask_to_polygon(&m, 16).unwrap();
        assert_eq!(poly, m);
    }

    #[test]
    fn polygon_line_falls_back_to_box() {
        let m = DenseMask::from_fn(8, 8, |r, c| r == 3 && (1..=6).contains(&c));
        let poly = mask_to_polygon(&m, 16).unwrap();
        assert_eq!(poly, m); // a 1-pixel-high box is the line itself
    }

    #[test]
    fn polygon_picks_largest_component() {
        // Big rectangle plus a far-away single pixel.
        let m = DenseMask::from_fn(32, 32, |r, c| {
            ((4..=20).contains(&r) && (4..=20).contains(&c)) || (r, c) == (30, 30)
        });
        let poly = mask_to_polygon(&m, 8).unwrap();
        assert!(!poly.is_fg(30, 30));
        assert!(poly.is_fg(10, 10));
    }

    #[test]
    fn scribble_marks_agree_with_mask() {
        let b = BoxLabel::new(10, 12, 40, 50).unwrap();
        let m = rect_mask(64, 64, &b);
        let s = mask_to_scribble(&m, 9).unwrap();
        for ((r, c), &mark) in s.grid().indexed_iter() {
            match mark {
                ScribbleMark::Foreground => assert!(m.is_fg(r, c)),
                ScribbleMark::Background => assert!(!m.is_fg(r, c)),
                ScribbleMark::Unlabeled => {}
            }
        }
    }

    #[test]
    fn scribble_deterministic_per_seed() {
        let disk = DenseMask::from_fn(48, 48, |r, c| {
            let (dr, dc) = (r as f64 - 24.0, c as f64 - 24.0);
            dr * dr + dc * dc <= 150.0
        });
        let a = mask_to_scribble(&disk, 123).unwrap();
        let b = mask_to_scribble(&disk, 123).unwrap();
        assert_eq!(a, b);
        let c = mask_to_scribble(&disk, 124).unwrap();
        assert_ne!(a, c, "different seeds should move the ring band");
    }

    #[test]
    fn scribble_on_disk_is_sparse() {
        let disk = DenseMask::from_fn(64, 64, |r, c| {
            let (dr, dc) = (r as f64 - 32.0, c as f64 - 32.0);
            (dr * dr + dc * dc).sqrt() <= 16.0
        });
        let s = mask_to_scribble(&disk, 7).unwrap();
        assert!(
            s.labeled_fraction() < 0.2,
            "fraction {}",
            s.labeled_fraction()
        );
    }

    #[test]
    fn scribble_needs_both_classes() {
        let full = DenseMask::from_fn(8, 8, |_, _| true);
        assert!(matches!(
            mask_to_scribble(&full, 0),
            Err(Error::EmptyBackground)
        ));
        let empty = DenseMask::from_fn(8, 8, |_, _| false);
        assert!(matches!(mask_to_scribble(&empty, 0), Err(Error::EmptyMask)));
    }

    #[test]
    fn points_forced_sample_takes_all() {
        let m = DenseMask::from_fn(8, 8, |r, c| r == 2 && (1..=5).contains(&c));
        let p = mask_to_points(&m, 5, 5, 3).unwrap();
        let mut fg = p.fg_points.clone();
        fg.sort_unstable();
        assert_eq!(fg, vec![(2, 1), (2, 2), (2, 3), (2, 4), (2, 5)]);
        assert_eq!(p.bg_points.len(), 5);
    }

    #[test]
    fn points_lie_on_their_class() {
        let disk = DenseMask::from_fn(32, 32, |r, c| {
            let (dr, dc) = (r as f64 - 16.0, c as f64 - 16.0);
            dr * dr + dc * dc <= 64.0
        });
        let p = mask_to_points(&disk, 5, 5, 11).unwrap();
        for &(r, c) in &p.fg_points {
            assert!(disk.is_fg(r, c));
        }
        for &(r, c) in &p.bg_points {
            assert!(!disk.is_fg(r, c));
        }
    }

    #[test]
    fn points_seeds_decorrelate() {
        let blob = DenseMask::from_fn(64, 64, |r, c| {
            let (dr, dc) = (r as f64 - 32.0, c as f64 - 32.0);
            dr * dr + dc * dc <= 330.0 // ~1000 px
        });
        assert!(blob.fg_count() > 900);
        let mut distinct = 0;
        for seed in 0..50u64 {
            let a = mask_to_points(&blob, 5, 5, 2 * seed).unwrap();
            let b = mask_to_points(&blob, 5, 5, 2 * seed + 1).unwrap();
            if a != b {
                distinct += 1;
            }
        }
        assert!(distinct >= 49, "only {distinct}/50 seed pairs differed");
    }

    #[test]
    fn thin_preserves_nonempty_subset() {
        let b = BoxLabel::new(5, 5, 25, 40).unwrap();
        let m = rect_mask(48, 48, &b);
        let skel = thin(m.grid().clone());
        let count: usize = skel.iter().map(|&v| v as usize).sum();
        assert!(count > 0);
        for ((r, c), &v) in skel.indexed_iter() {
            if v == 1 {
                assert!(m.is_fg(r, c));
            }
        }
        assert!(count < m.fg_count() / 4, "skeleton should be thin: {count}");
    }
}
