//! Image crops fed to the embedders and the vision-language model.

use image::{Rgb, RgbImage};

use super::mask::{Box2, Mask};
use super::palette::Palette;
use super::IngestError;

/// Outline stroke width, in pixels, for pair crops.
pub const OUTLINE_STROKE: u32 = 3;

/// The mask's tight region of `rgb`, with everything outside the mask black.
pub fn crop_masked(rgb: &RgbImage, mask: &Mask) -> Result<RgbImage, IngestError> {
    if mask.width() != rgb.width() || mask.height() != rgb.height() {
        return Err(IngestError::DimensionMismatch {
            expected: (rgb.width(), rgb.height()),
            got: (mask.width(), mask.height()),
        });
    }
    let b = mask.tight_box().ok_or(IngestError::EmptyMask)?;
    Ok(RgbImage::from_fn(b.width(), b.height(), |x, y| {
        let (sx, sy) = (b.x0 + x, b.y0 + y);
        if mask.get(sx, sy) {
            *rgb.get_pixel(sx, sy)
        } else {
            Rgb([0, 0, 0])
        }
    }))
}

/// Exact sub-image under `b`.
pub fn crop_bbox(rgb: &RgbImage, b: &Box2) -> Result<RgbImage, IngestError> {
    if b.is_empty() {
        return Err(IngestError::DegenerateBox(*b));
    }
    if !b.within(rgb.width(), rgb.height()) {
        return Err(IngestError::BoxOutOfBounds {
            bbox: *b,
            width: rgb.width(),
            height: rgb.height(),
        });
    }
    Ok(image::imageops::crop_imm(rgb, b.x0, b.y0, b.width(), b.height()).to_image())
}

/// Paint the border band of `b` (`stroke` pixels wide, inward) in `color`.
pub fn draw_outline(img: &mut RgbImage, b: &Box2, color: [u8; 3], stroke: u32) {
    for y in b.y0..b.y1.min(img.height()) {
        for x in b.x0..b.x1.min(img.width()) {
            let on_band = x < b.x0 + stroke
                || x + stroke >= b.x1
                || y < b.y0 + stroke
                || y + stroke >= b.y1;
            if on_band {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

/// Union crop of two detections with each box outlined in its label color.
pub fn pair_crop_inpainted(
    rgb: &RgbImage,
    box_i: &Box2,
    box_j: &Box2,
    label_i: u32,
    label_j: u32,
    palette: &Palette,
) -> Result<RgbImage, IngestError> {
    let ci = palette.color(label_i)?;
    let cj = palette.color(label_j)?;
    for b in [box_i, box_j] {
        if b.is_empty() {
            return Err(IngestError::DegenerateBox(*b));
        }
        if !b.within(rgb.width(), rgb.height()) {
            return Err(IngestError::BoxOutOfBounds {
                bbox: *b,
                width: rgb.width(),
                height: rgb.height(),
            });
        }
    }
    let union = box_i.union(box_j);
    let mut region = crop_bbox(rgb, &union)?;
    let local = |b: &Box2| Box2::new(b.x0 - union.x0, b.y0 - union.y0, b.x1 - union.x0, b.y1 - union.y0);
    draw_outline(&mut region, &local(box_i), ci, OUTLINE_STROKE);
    draw_outline(&mut region, &local(box_j), cj, OUTLINE_STROKE);
    Ok(region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 10 % 256) as u8, (y * 10 % 256) as u8, 77]))
    }

    fn palette() -> Palette {
        Palette::new(BTreeMap::from([(0, [255, 0, 0]), (1, [0, 255, 0])])).unwrap()
    }

    #[test]
    fn full_mask_is_identity() {
        let img = gradient(5, 4);
        let m = Mask::from_fn(5, 4, |_, _| true);
        assert_eq!(crop_masked(&img, &m).unwrap(), img);
    }

    #[test]
    fn single_pixel_mask() {
        let img = gradient(5, 4);
        let m = Mask::from_fn(5, 4, |x, y| x == 3 && y == 2);
        let c = crop_masked(&img, &m).unwrap();
        assert_eq!(c.dimensions(), (1, 1));
        assert_eq!(c.get_pixel(0, 0), img.get_pixel(3, 2));
    }

    #[test]
    fn checkerboard_mask_blackens_half() {
        let img = RgbImage::from_pixel(6, 4, Rgb([9, 99, 199]));
        let m = Mask::from_fn(6, 4, |x, y| (x + y) % 2 == 0);
        let c = crop_masked(&img, &m).unwrap();
        // Tight box of a checkerboard on an even-sized image is the full image.
        assert_eq!(c.dimensions(), (6, 4));
        let black = c.pixels().filter(|p| p.0 == [0, 0, 0]).count();
        let kept = c.pixels().filter(|p| p.0 == [9, 99, 199]).count();
        assert_eq!((black, kept), (12, 12));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = gradient(3, 3);
        assert!(matches!(crop_masked(&img, &Mask::new(3, 3)), Err(IngestError::EmptyMask)));
        assert!(crop_masked(&img, &Mask::new(2, 3)).is_err());
    }

    #[test]
    fn bbox_crop_examples() {
        let img = gradient(5, 4);
        assert_eq!(crop_bbox(&img, &Box2::new(0, 0, 5, 4)).unwrap(), img);
        let c = crop_bbox(&img, &Box2::new(1, 2, 3, 4)).unwrap();
        assert_eq!(c.dimensions(), (2, 2));
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            assert_eq!(c.get_pixel(x, y), img.get_pixel(1 + x, 2 + y));
        }
        assert!(matches!(crop_bbox(&img, &Box2::new(2, 2, 2, 4)), Err(IngestError::DegenerateBox(_))));
        assert!(crop_bbox(&img, &Box2::new(0, 0, 6, 4)).is_err());
    }

    #[test]
    fn identical_boxes_give_single_outline() {
        let img = RgbImage::from_pixel(20, 20, Rgb([50, 50, 50]));
        let b = Box2::new(4, 4, 14, 12);
        let c = pair_crop_inpainted(&img, &b, &b, 0, 0, &palette()).unwrap();
        assert_eq!(c.dimensions(), (10, 8));
        let colors: BTreeSet<[u8; 3]> = c.pixels().map(|p| p.0).collect();
        assert_eq!(colors, BTreeSet::from([[255, 0, 0], [50, 50, 50]]));
    }

    #[test]
    fn disjoint_corner_boxes_span_the_image() {
        let img = RgbImage::from_pixel(40, 30, Rgb([50, 50, 50]));
        let a = Box2::new(1, 2, 8, 9);
        let b = Box2::new(30, 20, 39, 29);
        let c = pair_crop_inpainted(&img, &a, &b, 0, 1, &palette()).unwrap();
        // union = [1, 39) x [2, 29)
        assert_eq!(c.dimensions(), (38, 27));
        // sample each outline: top-left corner of a, bottom-right of b
        assert_eq!(c.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(c.get_pixel(37, 26).0, [0, 255, 0]);
        // interior of a box keeps the original pixel
        assert_eq!(c.get_pixel(3, 3).0, [50, 50, 50]);
        let colors: BTreeSet<[u8; 3]> = c.pixels().map(|p| p.0).collect();
        assert_eq!(colors, BTreeSet::from([[255, 0, 0], [0, 255, 0], [50, 50, 50]]));
    }

    #[test]
    fn unknown_label_is_rejected() {
        let img = gradient(10, 10);
        let b = Box2::new(0, 0, 5, 5);
        assert!(matches!(
            pair_crop_inpainted(&img, &b, &b, 0, 7, &palette()),
            Err(IngestError::UnknownLabel(7))
        ));
    }

    proptest! {
        #[test]
        fn pair_crop_has_union_dimensions(
            ax in 0u32..30, ay in 0u32..20, aw in 1u32..10, ah in 1u32..10,
            bx in 0u32..30, by in 0u32..20, bw in 1u32..10, bh in 1u32..10,
        ) {
            let img = gradient(40, 30);
            let a = Box2::new(ax, ay, ax + aw, ay + ah);
            let b = Box2::new(bx, by, bx + bw, by + bh);
            let c = pair_crop_inpainted(&img, &a, &b, 0, 1, &palette()).unwrap();
            let u = a.union(&b);
            prop_assert_eq!(c.dimensions(), (u.width(), u.height()));
        }

        #[test]
        fn masked_crop_commutes_with_box_crop(seed in any::<u64>()) {
            let img = gradient(8, 6);
            let m = Mask::from_fn(8, 6, |x, y| (seed >> ((x + 8 * y) % 64)) & 1 == 1);
            prop_assume!(!m.is_empty());
            let tight = m.tight_box().unwrap();
            let direct = crop_masked(&img, &m).unwrap();
            // crop the image first, then apply the cropped mask
            let boxed = crop_bbox(&img, &tight).unwrap();
            let applied = RgbImage::from_fn(tight.width(), tight.height(), |x, y| {
                if m.get(tight.x0 + x, tight.y0 + y) { *boxed.get_pixel(x, y) } else { Rgb([0, 0, 0]) }
            });
            prop_assert_eq!(direct, applied);
        }
    }
}
