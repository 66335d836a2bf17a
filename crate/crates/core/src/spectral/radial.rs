use super::image::Plane;

/// Signed frequency index of bin `k` on an axis of length `n`.
#[inline]
pub fn signed_index(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Distance of every DFT bin from DC, using signed frequency indices.
pub fn radial_distance_grid(height: usize, width: usize) -> Plane {
    let mut out = Plane::zeros(height, width);
    for u in 0..height {
        let fu = signed_index(u, height);
        for v in 0..width {
            let fv = signed_index(v, width);
            out.set(u, v, (fu * fu + fv * fv).sqrt());
        }
    }
    out
}

/// Corner radius `sqrt((M/2)² + (N/2)²)`, the largest value in the grid.
pub fn max_radius(height: usize, width: usize) -> f64 {
    let (h, w) = ((height / 2) as f64, (width / 2) as f64);
    (h * h + w * w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_is_zero() {
        for (h, w) in [(1, 1), (4, 4), (8, 16)] {
            assert_eq!(radial_distance_grid(h, w).at(0, 0), 0.0);
        }
    }

    #[test]
    fn four_by_four_values() {
        let g = radial_distance_grid(4, 4);
        assert_eq!(g.at(1, 0), 1.0);
        assert_eq!(g.at(2, 2), 8f64.sqrt());
        assert_eq!(g.at(3, 3), 2f64.sqrt());
        let max = g.data.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, max_radius(4, 4));
    }
}
