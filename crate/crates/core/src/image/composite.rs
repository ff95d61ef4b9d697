use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// `mask ⊙ fg + (1 − mask) ⊙ bg`, selecting whole pixels so the result is
/// bit-exact on both sides of the mask.
pub fn composite(fg: &RasterImage, bg: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
    if fg.shape() != bg.shape() {
        return Err(Error::invalid(format!(
            "composite fg {:?} and bg {:?} differ",
            fg.shape(),
            bg.shape()
        )));
    }
    if (fg.height(), fg.width()) != mask.shape() {
        return Err(Error::invalid(format!(
            "composite mask {:?} does not match image {}x{}",
            mask.shape(),
            fg.height(),
            fg.width()
        )));
    }
    let c = fg.channels();
    let data = fg
        .data()
        .iter()
        .zip(bg.data())
        .enumerate()
        .map(|(i, (&f, &b))| if mask.data()[i / c] { f } else { b })
        .collect();
    RasterImage::new(fg.height(), fg.width(), c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (RasterImage, RasterImage) {
        (
            RasterImage::filled(6, 6, 3, 0.2).unwrap(),
            RasterImage::filled(6, 6, 3, 0.9).unwrap(),
        )
    }

    #[test]
    fn full_and_empty_masks_select_one_side() {
        let (fg, bg) = pair();
        assert_eq!(composite(&fg, &bg, &BinaryMask::ones(6, 6).unwrap()).unwrap(), fg);
        assert_eq!(composite(&fg, &bg, &BinaryMask::zeros(6, 6).unwrap()).unwrap(), bg);
    }

    #[test]
    fn left_half_mask_splits_columns() {
        let (fg, bg) = pair();
        let mask = BinaryMask::from_fn(6, 6, |_, x| x < 3).unwrap();
        let out = composite(&fg, &bg, &mask).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let expect = if x < 3 { 0.2 } else { 0.9 };
                assert!(out.pixel(y, x).iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn idempotent_in_mask() {
        let fg = RasterImage::from_fn(5, 7, 3, |y, x, c| ((y + 2 * x + c) % 5) as f32 / 4.0).unwrap();
        let bg = RasterImage::from_fn(5, 7, 3, |y, x, _| ((y * x) % 3) as f32 / 2.0).unwrap();
        let mask = BinaryMask::from_fn(5, 7, |y, x| (y + x) % 3 == 0).unwrap();
        let once = composite(&fg, &bg, &mask).unwrap();
        assert_eq!(composite(&fg, &once, &mask).unwrap(), once);
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let (fg, _) = pair();
        let bg = RasterImage::filled(5, 6, 3, 0.0).unwrap();
        assert!(composite(&fg, &bg, &BinaryMask::ones(6, 6).unwrap()).is_err());
        assert!(composite(&fg, &fg, &BinaryMask::ones(6, 5).unwrap()).is_err());
    }
}
