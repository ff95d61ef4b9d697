use super::BrushStroke;
use crate::image::RasterImage;

#[inline]
pub(crate) fn blend(canvas: f32, color: f32, opacity: f32) -> f32 {
    (1.0 - opacity) * canvas + opacity * color
}

/// Colour a stroke paints into a canvas of `channels` channels.
pub(crate) fn paint_color(stroke: &BrushStroke, channels: usize) -> [f32; 3] {
    if channels == 1 {
        let c = stroke.color;
        let g = (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).clamp(0.0, 1.0);
        [g, g, g]
    } else {
        stroke.color
    }
}

/// Blends the stroke into the canvas in place: covered pixels become
/// `(1 − opacity)·canvas + opacity·color`, the rest are untouched.
pub fn render_stroke_in_place(canvas: &mut RasterImage, stroke: &BrushStroke) {
    let (h, w, c) = canvas.shape();
    let color = paint_color(stroke, c);
    let alpha = stroke.opacity;
    stroke.for_each_covered(h, w, |y, x| {
        for (ch, v) in canvas.pixel_mut(y, x).iter_mut().enumerate() {
            *v = blend(*v, color[ch], alpha).clamp(0.0, 1.0);
        }
    });
}

pub fn render_stroke(canvas: &RasterImage, stroke: &BrushStroke) -> RasterImage {
    let mut out = canvas.clone();
    render_stroke_in_place(&mut out, stroke);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(opacity: f32, color: f32) -> BrushStroke {
        BrushStroke {
            center: (4.0, 4.0),
            angle: 0.0,
            length: 40.0,
            width: 40.0,
            color: [color; 3],
            opacity,
        }
    }

    #[test]
    fn opaque_full_footprint_fills_canvas() {
        let canvas = RasterImage::filled(8, 8, 3, 0.3).unwrap();
        let out = render_stroke(&canvas, &big(1.0, 0.8));
        assert!(out.data().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn zero_opacity_leaves_canvas() {
        let canvas = RasterImage::from_fn(8, 8, 3, |y, x, c| ((y + x + c) % 4) as f32 / 3.0).unwrap();
        assert_eq!(render_stroke(&canvas, &big(0.0, 0.8)), canvas);
    }

    #[test]
    fn half_opacity_over_black_gives_half() {
        let canvas = RasterImage::filled(8, 8, 3, 0.0).unwrap();
        let s = BrushStroke { center: (4.0, 4.0), angle: 0.7, length: 5.0, width: 2.0, color: [1.0; 3], opacity: 0.5 };
        let out = render_stroke(&canvas, &s);
        let mut inside = vec![false; 64];
        s.for_each_covered(8, 8, |y, x| inside[y * 8 + x] = true);
        assert!(inside.iter().any(|&b| b));
        for y in 0..8 {
            for x in 0..8 {
                let expect = if inside[y * 8 + x] { 0.5 } else { 0.0 };
                assert!(out.pixel(y, x).iter().all(|&v| v == expect));
            }
        }
    }
}
