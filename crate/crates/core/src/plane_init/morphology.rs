//! Binary morphology on single-channel masks. Pixels outside the image
//! count as background.

use crate::scene::ImageBuffer;

/// Dilation radius of the glass boundary band, in pixels.
pub const BOUNDARY_DILATION_PX: usize = 20;

/// 3x3 binary erosion.
pub fn erode3x3(mask: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (mask.width, mask.height);
    let mut out = ImageBuffer::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let mut keep = mask.get(x, y, 0) != 0.0;
            'scan: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (xx, yy) = (x as i32 + dx, y as i32 + dy);
                    if xx < 0 || yy < 0 || xx >= w as i32 || yy >= h as i32 {
                        keep = false;
                        break 'scan;
                    }
                    if mask.get(xx as usize, yy as usize, 0) == 0.0 {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            if keep {
                out.set(x, y, 0, 1.0);
            }
        }
    }
    out
}

/// Binary dilation with a square structuring element of the given radius
/// (separable: horizontal then vertical running maximum).
pub fn dilate(mask: &ImageBuffer, radius: usize) -> ImageBuffer {
    let (w, h) = (mask.width, mask.height);
    let r = radius as i32;
    let mut tmp = ImageBuffer::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let lo = (x as i32 - r).max(0) as usize;
            let hi = ((x as i32 + r) as usize).min(w - 1);
            let any = (lo..=hi).any(|xx| mask.get(xx, y, 0) != 0.0);
            if any {
                tmp.set(x, y, 0, 1.0);
            }
        }
    }
    let mut out = ImageBuffer::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let lo = (y as i32 - r).max(0) as usize;
            let hi = ((y as i32 + r) as usize).min(h - 1);
            let any = (lo..=hi).any(|yy| tmp.get(x, yy, 0) != 0.0);
            if any {
                out.set(x, y, 0, 1.0);
            }
        }
    }
    out
}

/// Glass boundary band: the mask's morphological edge dilated by
/// [`BOUNDARY_DILATION_PX`].
pub fn extract_boundary(mask: &ImageBuffer) -> ImageBuffer {
    let eroded = erode3x3(mask);
    let mut edge = ImageBuffer::new(mask.width, mask.height, 1);
    for i in 0..edge.data.len() {
        if mask.data[i] != 0.0 && eroded.data[i] == 0.0 {
            edge.data[i] = 1.0;
        }
    }
    dilate(&edge, BOUNDARY_DILATION_PX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_frame_mask_yields_border_band() {
        let mask = ImageBuffer::from_vec(100, 100, 1, vec![1.0; 10000]);
        let band = extract_boundary(&mask);
        // Edge ring is the 1-px image border; dilated by 20 it reaches 21 px
        // inward.
        assert_eq!(band.get(0, 0, 0), 1.0);
        assert_eq!(band.get(20, 50, 0), 1.0);
        assert_eq!(band.get(21, 50, 0), 0.0);
        assert_eq!(band.get(50, 50, 0), 0.0);
    }

    #[test]
    fn centered_square_yields_ring_of_expected_thickness() {
        // 100x100 square centered in a 200x200 image: ring spans 41 px
        // across (1 px edge + 20 px dilation to each side).
        let mut mask = ImageBuffer::new(200, 200, 1);
        for y in 50..150 {
            for x in 50..150 {
                mask.set(x, y, 0, 1.0);
            }
        }
        let band = extract_boundary(&mask);
        let row = 100usize;
        let run: Vec<usize> = (0..200).filter(|&x| band.get(x, row, 0) != 0.0).collect();
        // Left edge of the square at x=50: band covers [30, 70].
        assert_eq!(*run.first().unwrap(), 30);
        let left_run: Vec<usize> = run.iter().copied().take_while(|&x| x <= 70).collect();
        assert_eq!(left_run.len(), 41);
        assert_eq!(band.get(100, 100, 0), 0.0);
    }

    #[test]
    fn empty_mask_yields_empty_band() {
        let mask = ImageBuffer::new(64, 64, 1);
        let band = extract_boundary(&mask);
        assert!(band.data.iter().all(|&v| v == 0.0));
    }
}
