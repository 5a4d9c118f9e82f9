//! Side-by-side visual check: image, image with the mask boundary drawn in
//! white, and the mask itself.

use bdrseg_core::distmap::boundary_pixels;
use bdrseg_core::{BinaryMask, Grid, Image, Result};

pub fn triptych(img: &Image, mask: &BinaryMask) -> Result<Image> {
    img.ensure_same_shape(mask, "overlay mask")?;
    let (h, w) = img.shape();
    let mut drawn = img.clone();
    if mask.count_foreground() > 0 {
        for (y, x) in boundary_pixels(mask)? {
            *drawn.get_mut(y, x) = 1.0;
        }
    }
    Ok(Grid::from_fn(h, 3 * w, |y, x| match x / w {
        0 => *img.get(y, x),
        1 => *drawn.get(y, x - w),
        _ => f32::from(*mask.get(y, x - 2 * w)),
    }))
}
