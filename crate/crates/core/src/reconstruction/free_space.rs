use std::collections::VecDeque;

use super::grid::SemanticVoxelGrid;

/// Horizontal free-space map: a cell is blocked when any occupied voxel in
/// the height band sits above it. Cells outside the map count as blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeSpace {
    /// Global cell coordinates of the map's `(0, 0)` cell.
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub cell: f64,
    free: Vec<bool>,
}

impl FreeSpace {
    /// `free` is row-major, `width * height` long.
    pub fn new(origin: [i64; 2], width: usize, height: usize, cell: f64, free: Vec<bool>) -> Self {
        assert_eq!(free.len(), width * height, "free-space buffer size");
        Self {
            origin,
            width,
            height,
            cell,
            free,
        }
    }

    /// Parse an ASCII map: `.` free, anything else blocked. The first line is
    /// the top row (largest y).
    pub fn from_ascii(text: &str, cell: f64) -> Self {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut free = vec![false; width * height];
        for (r, line) in rows.iter().enumerate() {
            let y = height - 1 - r;
            for (x, ch) in line.chars().enumerate() {
                free[y * width + x] = ch == '.';
            }
        }
        Self::new([0, 0], width, height, cell, free)
    }

    /// Slab `[slab_min, slab_max]` over the horizontal bounds of the grid.
    pub fn from_grid(grid: &SemanticVoxelGrid, slab_min: f64, slab_max: f64) -> Option<Self> {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for (idx, _) in grid.iter() {
            for a in 0..2 {
                lo[a] = lo[a].min(idx[a]);
                hi[a] = hi[a].max(idx[a]);
            }
        }
        if lo[0] > hi[0] {
            return None;
        }
        let width = (hi[0] - lo[0] + 1) as usize;
        let height = (hi[1] - lo[1] + 1) as usize;
        let mut free = vec![true; width * height];
        for (idx, _) in grid.iter() {
            let z = grid.center(idx)[2];
            if z >= slab_min && z <= slab_max {
                let x = (idx[0] - lo[0]) as usize;
                let y = (idx[1] - lo[1]) as usize;
                free[y * width + x] = false;
            }
        }
        Some(Self::new(lo, width, height, grid.voxel_size(), free))
    }

    fn local(&self, c: [i64; 2]) -> Option<usize> {
        let x = c[0] - self.origin[0];
        let y = c[1] - self.origin[1];
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some(y as usize * self.width + x as usize)
    }

    pub fn cell_at(&self, i: usize) -> [i64; 2] {
        [
            self.origin[0] + (i % self.width) as i64,
            self.origin[1] + (i / self.width) as i64,
        ]
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn is_free(&self, c: [i64; 2]) -> bool {
        self.local(c).is_some_and(|i| self.free[i])
    }

    pub fn index(&self, c: [i64; 2]) -> Option<usize> {
        self.local(c)
    }

    pub fn is_free_at(&self, i: usize) -> bool {
        self.free[i]
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    pub fn center(&self, c: [i64; 2]) -> [f64; 2] {
        [(c[0] as f64 + 0.5) * self.cell, (c[1] as f64 + 0.5) * self.cell]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> [i64; 2] {
        [(p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64]
    }

    /// Whether the straight segment `a -> b` stays in free cells, sampled at
    /// a quarter cell.
    pub fn segment_free(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len / (self.cell / 4.0)).ceil() as usize + 1;
        (0..=steps).all(|s| {
            let t = s as f64 / steps as f64;
            let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
            self.is_free(self.cell_of(p))
        })
    }

    /// Squared distance, in cells, from every cell center to the nearest
    /// blocked cell center (outside the map counts as blocked).
    pub fn squared_distance_cells(&self) -> Vec<f64> {
        // pad by one blocked ring so the map border acts as an obstacle
        let (w, h) = (self.width + 2, self.height + 2);
        let mut f = vec![0.0f64; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.free[y * self.width + x] {
                    f[(y + 1) * w + x + 1] = f64::INFINITY;
                }
            }
        }
        let mut col = vec![0.0; h.max(w)];
        for x in 0..w {
            for y in 0..h {
                col[y] = f[y * w + x];
            }
            let d = edt_1d(&col[..h]);
            for y in 0..h {
                f[y * w + x] = d[y];
            }
        }
        for y in 0..h {
            let d = edt_1d(&f[y * w..(y + 1) * w]);
            f[y * w..(y + 1) * w].copy_from_slice(&d);
        }
        let mut out = vec![0.0; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                out[y * self.width + x] = f[(y + 1) * w + x + 1];
            }
        }
        out
    }

    /// Euclidean obstacle distance in meters per cell.
    pub fn distance_field(&self) -> Vec<f64> {
        self.squared_distance_cells()
            .into_iter()
            .map(|d| d.sqrt() * self.cell)
            .collect()
    }

    /// 4-connected components over cells where `keep` holds; `None` elsewhere.
    pub fn components(&self, keep: impl Fn(usize) -> bool) -> (Vec<Option<usize>>, usize) {
        let mut label = vec![None; self.free.len()];
        let mut n = 0;
        for start in 0..self.free.len() {
            if label[start].is_some() || !keep(start) {
                continue;
            }
            label[start] = Some(n);
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in self.neighbors4(i) {
                    if label[j].is_none() && keep(j) {
                        label[j] = Some(n);
                        queue.push_back(j);
                    }
                }
            }
            n += 1;
        }
        (label, n)
    }

    pub fn neighbors4(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = (i % self.width, i / self.width);
        let w = self.width;
        [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < self.height).then(|| i + w),
        ]
        .into_iter()
        .flatten()
    }
}

/// Felzenszwalb-Huttenlocher lower envelope for the 1D squared distance
/// transform of `f` (0 at sites, infinity elsewhere).
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|q| f[*q].is_finite()).collect();
    if sites.is_empty() {
        return d;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + (p * p) as f64;
                    let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                    if s <= *z.last().expect("one boundary per parabola") {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = (q as f64 - p as f64).powi(2) + f[p];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: squared distance to the nearest blocked cell, with the
    /// one-cell ring around the map blocked.
    fn brute(fs: &FreeSpace) -> Vec<f64> {
        let (w, h) = (fs.width as i64, fs.height as i64);
        let mut blocked = Vec::new();
        for y in -1..=h {
            for x in -1..=w {
                let inside = x >= 0 && y >= 0 && x < w && y < h;
                if !inside || !fs.is_free_at((y * w + x) as usize) {
                    blocked.push((x, y));
                }
            }
        }
        (0..fs.len())
            .map(|i| {
                let (x, y) = ((i % fs.width) as i64, (i / fs.width) as i64);
                blocked
                    .iter()
                    .map(|(bx, by)| ((bx - x).pow(2) + (by - y).pow(2)) as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn open_square_distance_peaks_at_center() {
        let fs = FreeSpace::from_ascii(".....\n.....\n.....\n.....\n.....", 1.0);
        let d = fs.squared_distance_cells();
        assert_eq!(d[2 * 5 + 2], 9.0);
        assert_eq!(d[0], 1.0);
        assert_eq!(d, brute(&fs));
    }

    #[test]
    fn segment_checks_respect_walls() {
        let fs = FreeSpace::from_ascii("..#..\n..#..\n.....", 1.0);
        assert!(!fs.segment_free([0.5, 2.5], [4.5, 2.5]));
        assert!(fs.segment_free([0.5, 0.5], [4.5, 0.5]));
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(w in 1usize..12, h in 1usize..12, bits in any::<u128>()) {
            let free: Vec<bool> = (0..w * h).map(|i| (bits >> (i % 128)) & 1 == 1 || i % 3 == 0).collect();
            let fs = FreeSpace::new([0, 0], w, h, 1.0, free);
            prop_assert_eq!(fs.squared_distance_cells(), brute(&fs));
        }
    }
}
