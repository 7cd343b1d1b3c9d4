//! Axis-aligned box unions: area, intersection, Jaccard, dilation and erosion.
//!
//! Areas are exact up to floating point: every operation works on the grid
//! induced by the box edges (coordinate compression), never on a raster.

use serde::{Deserialize, Serialize};

/// Absolute tolerance below which a length or area counts as zero.
pub const AREA_TOL: f64 = 1e-12;

/// Closed axis-aligned box `[x0,x1]×[y0,y1]`. Serializes as `[x0,y0,x1,y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub const fn unit() -> Self {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    /// Closed ℓ∞ ball of radius `r` around `c`.
    pub fn square(c: [f64; 2], r: f64) -> Self {
        Rect::new(c[0] - r, c[1] - r, c[0] + r, c[1] + r)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.width() * self.height()
        }
    }

    /// True when either side is shorter than [`AREA_TOL`].
    pub fn is_empty(&self) -> bool {
        !(self.width() > AREA_TOL && self.height() > AREA_TOL)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    /// Intersection; may be empty (check with [`Rect::is_empty`]).
    pub fn intersect(&self, o: &Rect) -> Rect {
        Rect::new(
            self.x0.max(o.x0),
            self.y0.max(o.y0),
            self.x1.min(o.x1),
            self.y1.min(o.y1),
        )
    }

    pub fn expand(&self, d: f64) -> Rect {
        Rect::new(self.x0 - d, self.y0 - d, self.x1 + d, self.y1 + d)
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    /// ℓ∞ distance from `p` to the box (0 inside).
    pub fn linf_distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.x0 - p[0]).max(p[0] - self.x1).max(0.0);
        let dy = (self.y0 - p[1]).max(p[1] - self.y1).max(0.0);
        dx.max(dy)
    }
}

/// Union of boxes minus a finite set of excluded points.
///
/// Excluded points have zero area; they only matter for point membership
/// ([`RegionUnion::contains`]), which is what counting-measure sums use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionUnion {
    pub boxes: Vec<Rect>,
    #[serde(default)]
    pub excluded: Vec<[f64; 2]>,
}

impl RegionUnion {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Clips every box to `bounds` and drops the degenerate ones. Excluded
    /// points outside `bounds` are dropped too.
    pub fn new(boxes: Vec<Rect>, excluded: Vec<[f64; 2]>, bounds: &Rect) -> Self {
        let boxes = boxes
            .into_iter()
            .map(|b| b.intersect(bounds))
            .filter(|b| !b.is_empty())
            .collect();
        let excluded = excluded.into_iter().filter(|p| bounds.contains(*p)).collect();
        RegionUnion { boxes, excluded }
    }

    pub fn from_boxes(boxes: Vec<Rect>, bounds: &Rect) -> Self {
        Self::new(boxes, Vec::new(), bounds)
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.iter().all(Rect::is_empty)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.boxes.iter().any(|b| b.contains(p)) && !self.excluded.contains(&p)
    }

    pub fn area(&self) -> f64 {
        region_area(self)
    }
}

/// Lebesgue area of the union of boxes (excluded points ignored).
pub fn region_area(r: &RegionUnion) -> f64 {
    union_area(&r.boxes)
}

/// Sorted, deduplicated box edge coordinates along one axis.
fn edges(boxes: &[Rect], lo: impl Fn(&Rect) -> f64, hi: impl Fn(&Rect) -> f64) -> Vec<f64> {
    let mut v: Vec<f64> = boxes.iter().flat_map(|b| [lo(b), hi(b)]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Merges `[a,b]` intervals in place and returns the merged list.
fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Covered y-intervals of the slab `[xa, xb]`.
fn slab_cover(boxes: &[Rect], xa: f64, xb: f64) -> Vec<(f64, f64)> {
    merge_intervals(
        boxes
            .iter()
            .filter(|b| b.x0 <= xa && b.x1 >= xb)
            .map(|b| (b.y0, b.y1))
            .collect(),
    )
}

/// Exact area of a union of boxes by coordinate-compression sweep.
pub fn union_area(boxes: &[Rect]) -> f64 {
    let boxes: Vec<Rect> = boxes.iter().copied().filter(|b| !b.is_empty()).collect();
    if boxes.is_empty() {
        return 0.0;
    }
    let xs = edges(&boxes, |b| b.x0, |b| b.x1);
    let mut total = 0.0;
    for w in xs.windows(2) {
        let dx = w[1] - w[0];
        if dx <= 0.0 {
            continue;
        }
        let cover: f64 = slab_cover(&boxes, w[0], w[1]).iter().map(|(a, b)| b - a).sum();
        total += dx * cover;
    }
    total
}

/// Pairwise box intersections of two regions (excluded points dropped).
pub fn intersection(a: &RegionUnion, b: &RegionUnion) -> RegionUnion {
    let boxes = a
        .boxes
        .iter()
        .flat_map(|p| b.boxes.iter().map(move |q| p.intersect(q)))
        .filter(|r| !r.is_empty())
        .collect();
    RegionUnion { boxes, excluded: Vec::new() }
}

/// Union of two regions' boxes (excluded points dropped).
pub fn union(a: &RegionUnion, b: &RegionUnion) -> RegionUnion {
    let boxes = a.boxes.iter().chain(&b.boxes).copied().collect();
    RegionUnion { boxes, excluded: Vec::new() }
}

/// Area of intersection over area of union; 1 when both are empty.
pub fn jaccard(a: &RegionUnion, b: &RegionUnion) -> f64 {
    let u = region_area(&union(a, b));
    if u <= AREA_TOL {
        return 1.0;
    }
    let i = region_area(&intersection(a, b));
    (i / u).clamp(0.0, 1.0)
}

/// Area of the symmetric difference.
pub fn symmetric_difference_area(a: &RegionUnion, b: &RegionUnion) -> f64 {
    let u = region_area(&union(a, b));
    let i = region_area(&intersection(a, b));
    (u - i).max(0.0)
}

/// Complement of a box union inside `bounds`, as disjoint boxes.
pub fn complement(boxes: &[Rect], bounds: &Rect) -> Vec<Rect> {
    let clipped: Vec<Rect> = boxes
        .iter()
        .map(|b| b.intersect(bounds))
        .filter(|b| !b.is_empty())
        .collect();
    let mut xs = edges(&clipped, |b| b.x0, |b| b.x1);
    xs.extend([bounds.x0, bounds.x1]);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut out = Vec::new();
    for w in xs.windows(2) {
        let (xa, xb) = (w[0], w[1]);
        if xb - xa <= AREA_TOL {
            continue;
        }
        let mut y = bounds.y0;
        for (a, b) in slab_cover(&clipped, xa, xb) {
            if a - y > AREA_TOL {
                out.push(Rect::new(xa, y, xb, a));
            }
            y = y.max(b);
        }
        if bounds.y1 - y > AREA_TOL {
            out.push(Rect::new(xa, y, xb, bounds.y1));
        }
    }
    coalesce_columns(out)
}

/// Joins horizontally adjacent boxes with identical y-extent.
fn coalesce_columns(mut boxes: Vec<Rect>) -> Vec<Rect> {
    boxes.sort_by(|a, b| {
        a.y0.total_cmp(&b.y0)
            .then(a.y1.total_cmp(&b.y1))
            .then(a.x0.total_cmp(&b.x0))
    });
    let mut out: Vec<Rect> = Vec::with_capacity(boxes.len());
    for b in boxes {
        match out.last_mut() {
            Some(last) if last.y0 == b.y0 && last.y1 == b.y1 && last.x1 == b.x0 => last.x1 = b.x1,
            _ => out.push(b),
        }
    }
    out
}

/// Minkowski sum with the ℓ∞ ball of radius `delta`, clipped to `bounds`.
/// Excluded points are filled in.
pub fn dilate(r: &RegionUnion, delta: f64, bounds: &Rect) -> RegionUnion {
    let boxes = r.boxes.iter().map(|b| b.expand(delta)).collect();
    RegionUnion::from_boxes(boxes, bounds)
}

/// Points whose (clipped) ℓ∞ ball of radius `delta` lies inside `r`.
/// Computed as the complement of the dilated complement within `bounds`.
pub fn erode(r: &RegionUnion, delta: f64, bounds: &Rect) -> RegionUnion {
    if delta <= 0.0 {
        return RegionUnion::from_boxes(r.boxes.clone(), bounds);
    }
    let outside = complement(&r.boxes, bounds);
    let grown: Vec<Rect> = outside
        .iter()
        .map(|b| b.expand(delta).intersect(bounds))
        .filter(|b| !b.is_empty())
        .collect();
    RegionUnion::from_boxes(complement(&grown, bounds), bounds)
}

/// Uniform-grid lookup for fast point membership in a fixed region.
#[derive(Debug, Clone)]
pub struct BoxIndex<'a> {
    region: &'a RegionUnion,
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    cells: Vec<Vec<u32>>,
    excluded: Vec<[f64; 2]>,
}

impl<'a> BoxIndex<'a> {
    /// Builds an index with square cells of side `cell` over `bounds`.
    pub fn new(region: &'a RegionUnion, bounds: &Rect, cell: f64) -> Self {
        let cell = cell.max(1e-9);
        let nx = ((bounds.width() / cell).ceil() as usize).clamp(1, 4096);
        let ny = ((bounds.height() / cell).ceil() as usize).clamp(1, 4096);
        let mut cells = vec![Vec::new(); nx * ny];
        let origin = [bounds.x0, bounds.y0];
        let clamp = |v: f64, n: usize| -> usize { (v.floor().max(0.0) as usize).min(n - 1) };
        for (k, b) in region.boxes.iter().enumerate() {
            let i0 = clamp((b.x0 - origin[0]) / cell, nx);
            let i1 = clamp((b.x1 - origin[0]) / cell, nx);
            let j0 = clamp((b.y0 - origin[1]) / cell, ny);
            let j1 = clamp((b.y1 - origin[1]) / cell, ny);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    cells[i * ny + j].push(k as u32);
                }
            }
        }
        let mut excluded = region.excluded.clone();
        excluded.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        BoxIndex { region, origin, cell, dims: [nx, ny], cells, excluded }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [nx, ny] = self.dims;
        let i = (((p[0] - self.origin[0]) / self.cell).floor().max(0.0) as usize).min(nx - 1);
        let j = (((p[1] - self.origin[1]) / self.cell).floor().max(0.0) as usize).min(ny - 1);
        let hit = self.cells[i * ny + j]
            .iter()
            .any(|&k| self.region.boxes[k as usize].contains(p));
        hit && self
            .excluded
            .binary_search_by(|q| q[0].total_cmp(&p[0]).then(q[1].total_cmp(&p[1])))
            .is_err()
    }
}
