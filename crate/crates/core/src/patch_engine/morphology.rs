//! Binary closing of fluid masks, one B-scan at a time.

use crate::error::{arg, Result};
use crate::volume::{FluidClass, LabelVolume};

/// Square-element closing of a `width x height` mask.
///
/// Computed as if the mask sat in an unbounded background plane and the
/// result were cropped back, which keeps closing extensive and idempotent
/// at the image border.
pub fn binary_close(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    assert_eq!(mask.len(), width * height, "mask size mismatch");
    let r = radius;
    let pw = width + 2 * r;
    let ph = height + 2 * r;

    let mut padded = vec![false; pw * ph];
    for y in 0..height {
        padded[(y + r) * pw + r..(y + r) * pw + r + width].copy_from_slice(&mask[y * width..(y + 1) * width]);
    }

    // dilation, rows then columns
    let mut rows = vec![false; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(pw - 1);
            rows[y * pw + x] = padded[y * pw + lo..=y * pw + hi].iter().any(|&b| b);
        }
    }
    let mut dilated = vec![false; pw * ph];
    for y in 0..ph {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(ph - 1);
        for x in 0..pw {
            dilated[y * pw + x] = (lo..=hi).any(|yy| rows[yy * pw + x]);
        }
    }

    // erosion, evaluated only where the window stays inside the padded frame
    let mut eroded_rows = vec![true; pw * ph];
    for y in 0..ph {
        for x in r..r + width {
            eroded_rows[y * pw + x] = dilated[y * pw + x - r..=y * pw + x + r].iter().all(|&b| b);
        }
    }
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x + r, y + r);
            out[y * width + x] = (py - r..=py + r).all(|yy| eroded_rows[yy * pw + px]);
        }
    }
    out
}

/// Closes the mask of `cls` in every B-scan with a `(2 * radius + 1)` square.
/// Voxels added by the closing become `cls`; no `cls` voxel is removed.
pub fn close_mask(labels: &LabelVolume, cls: FluidClass, radius: usize) -> Result<LabelVolume> {
    if cls == FluidClass::Background {
        return arg("closing applies to fluid classes only");
    }
    if radius == 0 {
        return arg("closing radius must be >= 1");
    }
    let d = labels.dims();
    let value = cls.label();
    let mut out = labels.clone();
    for z in 0..d.depth {
        let plane = labels.plane(z);
        if !plane.contains(&value) {
            continue;
        }
        let mask: Vec<bool> = plane.iter().map(|&v| v == value).collect();
        let closed = binary_close(&mask, d.width, d.height, radius);
        for (dst, &c) in out.plane_mut(z).iter_mut().zip(&closed) {
            if c {
                *dst = value;
            }
        }
    }
    Ok(out)
}

/// Closing for IRF, SRF and PED in that order.
pub fn close_all(labels: &LabelVolume, radius: usize) -> Result<LabelVolume> {
    let mut out = labels.clone();
    for cls in FluidClass::FLUIDS {
        out = close_mask(&out, cls, radius)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims3, Volume};

    fn square_fixture(hole: bool) -> LabelVolume {
        let d = Dims3::new(12, 12, 1);
        let mut l = LabelVolume::zeros("sq", d);
        for y in 1..11 {
            for x in 1..11 {
                l.set(x, y, 0, FluidClass::Irf);
            }
        }
        if hole {
            l.set(5, 6, 0, FluidClass::Background);
        }
        l
    }

    /// Textbook definitions on an unbounded plane, evaluated by brute force.
    fn brute_close(mask: &[bool], w: usize, h: usize, r: isize) -> Vec<bool> {
        let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h;
        let m = |x: isize, y: isize| inside(x, y) && mask[y as usize * w + x as usize];
        let dil = |x: isize, y: isize| (-r..=r).any(|dy| (-r..=r).any(|dx| m(x + dx, y + dy)));
        (0..h as isize)
            .flat_map(|y| (0..w as isize).map(move |x| (x, y)))
            .map(|(x, y)| (-r..=r).all(|dy| (-r..=r).all(|dx| dil(x + dx, y + dy))))
            .collect()
    }

    #[test]
    fn solid_square_is_fixed_point() {
        let l = square_fixture(false);
        assert_eq!(close_mask(&l, FluidClass::Irf, 1).unwrap(), l);
    }

    #[test]
    fn single_hole_is_filled() {
        let l = square_fixture(true);
        let closed = close_mask(&l, FluidClass::Irf, 1).unwrap();
        assert_eq!(closed, square_fixture(false));
        let mask: Vec<bool> = l.data().iter().map(|&v| v == 1).collect();
        let brute = brute_close(&mask, 12, 12, 1);
        let got: Vec<bool> = closed.data().iter().map(|&v| v == 1).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let (w, h) = (rng.random_range(1..14), rng.random_range(1..14));
            let r = rng.random_range(1..3);
            let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.4)).collect();
            assert_eq!(binary_close(&mask, w, h, r), brute_close(&mask, w, h, r as isize));
        }
    }

    #[test]
    fn idempotent() {
        let l = square_fixture(true);
        let once = close_mask(&l, FluidClass::Irf, 1).unwrap();
        assert_eq!(close_mask(&once, FluidClass::Irf, 1).unwrap(), once);
    }

    #[test]
    fn bad_arguments() {
        let l = square_fixture(false);
        assert!(close_mask(&l, FluidClass::Background, 1).is_err());
        assert!(close_mask(&l, FluidClass::Irf, 0).is_err());
    }

    #[test]
    fn other_classes_only_overwritten_by_additions() {
        let d = Dims3::new(5, 3, 1);
        // SRF at x=0 and x=2 sandwiching a PED voxel
        let data = vec![2, 3, 2, 0, 0, 2, 3, 2, 0, 0, 2, 3, 2, 0, 0];
        let l = LabelVolume::new("m", Volume::new(d, data).unwrap()).unwrap();
        let c = close_mask(&l, FluidClass::Srf, 1).unwrap();
        assert_eq!(c.get(1, 1, 0), FluidClass::Srf);
        for i in 0..15 {
            if l.data()[i] == 2 {
                assert_eq!(c.data()[i], 2);
            }
        }
    }
}
