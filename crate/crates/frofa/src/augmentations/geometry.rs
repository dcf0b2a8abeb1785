//! Spatial kernels on square channel planes.
//!
//! Planes are `side x side` row-major slices of one channel. Geometric
//! kernels resample bilinearly and fill out-of-bounds reads with 0, which is
//! the mapped-space minimum; resizing clamps to the edge instead.

/// Axis of a shear or translation, in grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along columns (the second grid index).
    X,
    /// Along rows (the first grid index).
    Y,
}

fn bilinear_zero(plane: &[f32], side: usize, r: f64, c: f64) -> f32 {
    let r0 = r.floor();
    let c0 = c.floor();
    let dr = r - r0;
    let dc = c - c0;
    let mut acc = 0.0f64;
    for (rr, wr) in [(r0 as i64, 1.0 - dr), (r0 as i64 + 1, dr)] {
        if wr == 0.0 || rr < 0 || rr >= side as i64 {
            continue;
        }
        for (cc, wc) in [(c0 as i64, 1.0 - dc), (c0 as i64 + 1, dc)] {
            if wc == 0.0 || cc < 0 || cc >= side as i64 {
                continue;
            }
            acc += wr * wc * plane[rr as usize * side + cc as usize] as f64;
        }
    }
    acc as f32
}

/// Rotates a plane by `angle_deg` about its center.
pub fn rotate_plane(plane: &[f32], side: usize, angle_deg: f64) -> Vec<f32> {
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for c in 0..side {
            let dr = r as f64 - center;
            let dc = c as f64 - center;
            let src_r = cos * dr + sin * dc + center;
            let src_c = -sin * dr + cos * dc + center;
            out[r * side + c] = bilinear_zero(plane, side, src_r, src_c);
        }
    }
    out
}

/// Shears a plane by factor `z` along `axis`, about the grid origin.
pub fn shear_plane(plane: &[f32], side: usize, axis: Axis, z: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for c in 0..side {
            let (src_r, src_c) = match axis {
                Axis::X => (r as f64, c as f64 - z * r as f64),
                Axis::Y => (r as f64 - z * c as f64, c as f64),
            };
            out[r * side + c] = bilinear_zero(plane, side, src_r, src_c);
        }
    }
    out
}

/// Shifts a plane by a signed whole number of cells along `axis`; vacated
/// cells become 0.
pub fn translate_plane(plane: &[f32], side: usize, axis: Axis, shift: i64) -> Vec<f32> {
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for c in 0..side {
            let (src_r, src_c) = match axis {
                Axis::X => (r as i64, c as i64 - shift),
                Axis::Y => (r as i64 - shift, c as i64),
            };
            if (0..side as i64).contains(&src_r) && (0..side as i64).contains(&src_c) {
                out[r * side + c] = plane[src_r as usize * side + src_c as usize];
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_plane(plane: &[f32], side_in: usize, side_out: usize) -> Vec<f32> {
    resize_rect(plane, side_in, side_in, side_out, side_out)
}

/// Rectangular bilinear resize with half-pixel centers and edge clamping.
pub fn resize_rect(
    plane: &[f32],
    rows_in: usize,
    cols_in: usize,
    rows_out: usize,
    cols_out: usize,
) -> Vec<f32> {
    debug_assert_eq!(plane.len(), rows_in * cols_in);
    if rows_in == rows_out && cols_in == cols_out {
        return plane.to_vec();
    }
    let scale_r = rows_in as f64 / rows_out as f64;
    let scale_c = cols_in as f64 / cols_out as f64;
    let sample = |r: f64, c: f64| -> f32 {
        let r = r.clamp(0.0, (rows_in - 1) as f64);
        let c = c.clamp(0.0, (cols_in - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(rows_in - 1);
        let c1 = (c0 + 1).min(cols_in - 1);
        let dr = r - r0 as f64;
        let dc = c - c0 as f64;
        let v00 = plane[r0 * cols_in + c0] as f64;
        let v01 = plane[r0 * cols_in + c1] as f64;
        let v10 = plane[r1 * cols_in + c0] as f64;
        let v11 = plane[r1 * cols_in + c1] as f64;
        (v00 * (1.0 - dr) * (1.0 - dc) + v01 * (1.0 - dr) * dc + v10 * dr * (1.0 - dc)
            + v11 * dr * dc) as f32
    };
    let mut out = vec![0.0f32; rows_out * cols_out];
    for r in 0..rows_out {
        let src_r = (r as f64 + 0.5) * scale_r - 0.5;
        for c in 0..cols_out {
            let src_c = (c as f64 + 0.5) * scale_c - 0.5;
            out[r * cols_out + c] = sample(src_r, src_c);
        }
    }
    out
}

/// Copies the `size x size` window at `(off_r, off_c)`.
pub fn crop_plane(plane: &[f32], side: usize, off_r: usize, off_c: usize, size_r: usize, size_c: usize) -> Vec<f32> {
    debug_assert!(off_r + size_r <= side && off_c + size_c <= side);
    let mut out = Vec::with_capacity(size_r * size_c);
    for r in 0..size_r {
        let base = (off_r + r) * side + off_c;
        out.extend_from_slice(&plane[base..base + size_c]);
    }
    out
}

/// 3x3 box filter with edge-replicate padding.
pub fn box3_plane(plane: &[f32], side: usize) -> Vec<f32> {
    let clamp = |x: i64| x.clamp(0, side as i64 - 1) as usize;
    let mut out = vec![0.0f32; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0f64;
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    acc += plane[clamp(r as i64 + dr) * side + clamp(c as i64 + dc)] as f64;
                }
            }
            out[r * side + c] = (acc / 9.0) as f32;
        }
    }
    out
}
