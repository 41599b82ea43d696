//! Screen-space triangle rasterization into weighted accumulation buffers.
//!
//! Samples are taken at pixel centers `(i + 0.5, j + 0.5)`; edges are
//! inclusive up to a small tolerance so that vertices landing exactly on
//! pixel centers (the identity warp) still cover them. Within one pass the
//! first face to cover a pixel wins, so shared edges are never counted
//! twice for the same source.

const EDGE_EPS: f64 = 1e-9;

pub(crate) struct Accumulator<const C: usize> {
    width: usize,
    height: usize,
    sum: Vec<[f64; C]>,
    wsum: Vec<f64>,
    count: Vec<u32>,
    stamp: Vec<u32>,
    pass: u32,
}

impl<const C: usize> Accumulator<C> {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            sum: vec![[0.0; C]; n],
            wsum: vec![0.0; n],
            count: vec![0; n],
            stamp: vec![0; n],
            pass: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    /// Starts contributions from a new source; coverage de-duplication is
    /// per pass.
    pub fn begin_pass(&mut self) {
        self.pass += 1;
    }

    /// Rasterizes one triangle given in continuous pixel coordinates.
    pub fn splat_triangle(&mut self, p: &[[f64; 2]; 3], attr: &[[f64; C]; 3], w: &[f64; 3]) {
        let pass = self.pass;
        let (width, height) = (self.width, self.height);
        let sum = &mut self.sum;
        let wsum = &mut self.wsum;
        let count = &mut self.count;
        let stamp = &mut self.stamp;
        for_each_covered(p, width, height, |idx, b| {
            if stamp[idx] == pass {
                return;
            }
            stamp[idx] = pass;
            let wi = b[0] * w[0] + b[1] * w[1] + b[2] * w[2];
            let s = &mut sum[idx];
            for c in 0..C {
                s[c] += wi * (b[0] * attr[0][c] + b[1] * attr[1][c] + b[2] * attr[2][c]);
            }
            wsum[idx] += wi;
            count[idx] += 1;
        });
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.wsum
    }
    pub fn coverage(&self) -> &[u32] {
        &self.count
    }

    /// Normalized value per pixel, or `None` where nothing contributed.
    pub fn resolve(&self, idx: usize) -> Option<[f64; C]> {
        let w = self.wsum[idx];
        if w > 0.0 {
            Some(self.sum[idx].map(|v| v / w))
        } else {
            None
        }
    }
}

/// Invokes `emit(pixel_index, barycentrics)` for each pixel center inside
/// the triangle.
pub(crate) fn for_each_covered(
    p: &[[f64; 2]; 3],
    width: usize,
    height: usize,
    mut emit: impl FnMut(usize, [f64; 3]),
) {
    let area = edge(&p[0], &p[1], &p[2]);
    if !(area.abs() > 1e-14) || !area.is_finite() {
        return;
    }
    let min_x = p[0][0].min(p[1][0]).min(p[2][0]);
    let max_x = p[0][0].max(p[1][0]).max(p[2][0]);
    let min_y = p[0][1].min(p[1][1]).min(p[2][1]);
    let max_y = p[0][1].max(p[1][1]).max(p[2][1]);
    let x0 = (min_x - 0.5 - 1e-7).ceil().max(0.0);
    let x1 = (max_x - 0.5 + 1e-7).floor().min(width as f64 - 1.0);
    let y0 = (min_y - 0.5 - 1e-7).ceil().max(0.0);
    let y1 = (max_y - 0.5 + 1e-7).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv = 1.0 / area;
    for py in y0 as usize..=y1 as usize {
        let cy = py as f64 + 0.5;
        for px in x0 as usize..=x1 as usize {
            let c = [px as f64 + 0.5, cy];
            let b0 = edge(&p[1], &p[2], &c) * inv;
            let b1 = edge(&p[2], &p[0], &c) * inv;
            let b2 = 1.0 - b0 - b1;
            if b0 >= -EDGE_EPS && b1 >= -EDGE_EPS && b2 >= -EDGE_EPS {
                let (c0, c1, c2) = (b0.max(0.0), b1.max(0.0), b2.max(0.0));
                let s = c0 + c1 + c2;
                emit(py * width + px, [c0 / s, c1 / s, c2 / s]);
            }
        }
    }
}

#[inline]
fn edge(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_centers_inclusively() {
        let mut hits = Vec::new();
        for_each_covered(&[[0.5, 0.5], [2.5, 0.5], [0.5, 2.5]], 4, 4, |i, _| hits.push(i));
        hits.sort();
        // (0,0) (1,0) (2,0) (0,1) (1,1) (0,2)
        assert_eq!(hits, vec![0, 1, 2, 4, 5, 8]);
    }

    #[test]
    fn barycentrics_interpolate_linearly() {
        let mut acc = Accumulator::<1>::new(8, 8);
        acc.begin_pass();
        acc.splat_triangle(
            &[[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]],
            &[[0.0], [8.0], [0.0]],
            &[1.0, 1.0, 1.0],
        );
        // attribute equals x along the triangle
        let v = acc.resolve(2 * 8 + 3).unwrap()[0];
        assert!((v - 3.5).abs() < 1e-12);
    }

    #[test]
    fn shared_edges_count_once_per_pass() {
        let mut acc = Accumulator::<1>::new(4, 4);
        acc.begin_pass();
        let a = [[0.5, 0.5], [3.5, 0.5], [0.5, 3.5]];
        let b = [[3.5, 0.5], [3.5, 3.5], [0.5, 3.5]];
        acc.splat_triangle(&a, &[[1.0]; 3], &[1.0; 3]);
        acc.splat_triangle(&b, &[[1.0]; 3], &[1.0; 3]);
        assert!(acc.coverage().iter().all(|&c| c == 1));
    }

    #[test]
    fn degenerate_triangle_is_skipped() {
        let mut n = 0;
        for_each_covered(&[[0.5, 0.5], [1.5, 0.5], [2.5, 0.5]], 4, 4, |_, _| n += 1);
        assert_eq!(n, 0);
    }
}
