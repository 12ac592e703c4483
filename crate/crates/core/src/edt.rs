//! Exact squared Euclidean distance transform on dense 3D grids
//! (separable lower-envelope algorithm of Felzenszwalb and Huttenlocher).

use rayon::prelude::*;

/// Squared distance assigned to cells when the feature set is empty.
pub const FAR: f64 = 1e20;

/// Dense grid dimensions; linear index is `(a * n1 + b) * n2 + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn cube(n: usize) -> Self {
        Dims([n; 3])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.0[1] + b) * self.0[2] + c
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let c = i % self.0[2];
        let b = (i / self.0[2]) % self.0[1];
        [i / (self.0[1] * self.0[2]), b, c]
    }
}

/// 1D squared distance transform of sampled function `f`, written to `d`.
fn envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let diff = q as f64 - v[k] as f64;
        *out = (diff * diff + f[v[k]]).min(FAR);
    }
}

fn pass(grid: &mut [f64], dims: Dims, axis: usize) {
    let n = dims.0;
    let len = n[axis];
    if len == 0 {
        return;
    }
    let stride = match axis {
        0 => n[1] * n[2],
        1 => n[2],
        _ => 1,
    };
    let line_starts: Vec<usize> = (0..dims.len())
        .filter(|&i| (i / stride) % len == 0)
        .collect();
    let src: &[f64] = grid;
    let lines: Vec<Vec<f64>> = line_starts
        .par_iter()
        .map_init(
            || (vec![0.0; len], vec![0usize; len], vec![0.0; len + 1]),
            |(f, v, z), &s| {
                for (q, x) in f.iter_mut().enumerate() {
                    *x = src[s + q * stride];
                }
                let mut d = vec![0.0; len];
                envelope(f, &mut d, v, z);
                d
            },
        )
        .collect();
    for (s, d) in line_starts.iter().zip(lines) {
        for (q, x) in d.into_iter().enumerate() {
            grid[s + q * stride] = x;
        }
    }
}

/// Squared distance from every cell center to the nearest cell where
/// `feature` is true, in cell units. Cells are [`FAR`] when no feature exists.
pub fn squared_edt(feature: &[bool], dims: Dims) -> Vec<f64> {
    assert_eq!(feature.len(), dims.len(), "feature grid size mismatch");
    let mut grid: Vec<f64> = feature.iter().map(|&f| if f { 0.0 } else { FAR }).collect();
    for axis in [2, 1, 0] {
        pass(&mut grid, dims, axis);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(feature: &[bool], dims: Dims) -> Vec<f64> {
        let pts: Vec<[usize; 3]> = (0..dims.len())
            .filter(|&i| feature[i])
            .map(|i| dims.coords(i))
            .collect();
        (0..dims.len())
            .map(|i| {
                let c = dims.coords(i);
                pts.iter()
                    .map(|p| (0..3).map(|a| (p[a] as f64 - c[a] as f64).powi(2)).sum::<f64>())
                    .fold(FAR, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_seed_gives_euclidean_distance() {
        let dims = Dims([5, 6, 7]);
        let mut f = vec![false; dims.len()];
        f[dims.index(1, 2, 3)] = true;
        let d = squared_edt(&f, dims);
        assert_eq!(d[dims.index(4, 5, 6)], 27.0);
        assert_eq!(d[dims.index(1, 2, 3)], 0.0);
    }

    #[test]
    fn empty_feature_set_is_far() {
        let dims = Dims::cube(4);
        assert!(squared_edt(&vec![false; 64], dims).iter().all(|&x| x == FAR));
    }

    proptest! {
        #[test]
        fn matches_brute_force(n0 in 1usize..7, n1 in 1usize..7, n2 in 1usize..7, seed in any::<u64>()) {
            let dims = Dims([n0, n1, n2]);
            let f: Vec<bool> = (0..dims.len())
                .map(|i| (seed.rotate_left(i as u32 % 64) ^ (i as u64 * 0x9e37)) % 5 == 0)
                .collect();
            prop_assert_eq!(squared_edt(&f, dims), brute(&f, dims));
        }
    }
}
