use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One brushstroke: an oriented capsule of constant colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrushStroke {
    /// Centre in pixel coordinates, `x` to the right and `y` down.
    pub center: (f64, f64),
    /// Direction of the long axis in radians.
    pub angle: f64,
    pub length: f64,
    pub width: f64,
    pub color: [f32; 3],
    pub opacity: f32,
}

impl BrushStroke {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.width >= 1.0 && self.length >= self.width) {
            return Err(Error::invalid(format!(
                "stroke needs length >= width >= 1, got length {} width {}",
                self.length, self.width
            )));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::invalid(format!("stroke opacity {} outside (0,1]", self.opacity)));
        }
        let (x, y) = self.center;
        if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
            return Err(Error::invalid(format!("stroke centre ({x},{y}) outside {height}x{width}")));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) || !self.angle.is_finite() {
            return Err(Error::invalid("stroke colour or angle out of range"));
        }
        Ok(())
    }

    /// Calls `f(y, x)` for every pixel whose centre lies inside the capsule.
    pub fn for_each_covered(&self, height: usize, width: usize, mut f: impl FnMut(usize, usize)) {
        let radius = self.width / 2.0;
        let half = (self.length - self.width).max(0.0) / 2.0;
        let (dx, dy) = (self.angle.cos(), self.angle.sin());
        let (cx, cy) = self.center;
        let reach = half + radius;
        let y0 = (cy - reach - 1.0).floor().max(0.0) as usize;
        let x0 = (cx - reach - 1.0).floor().max(0.0) as usize;
        let y1 = ((cy + reach + 1.0).ceil().max(0.0) as usize).min(height);
        let x1 = ((cx + reach + 1.0).ceil().max(0.0) as usize).min(width);
        let r2 = radius * radius;
        for y in y0..y1 {
            let py = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let px = x as f64 + 0.5 - cx;
                let t = (px * dx + py * dy).clamp(-half, half);
                let (ex, ey) = (px - t * dx, py - t * dy);
                if ex * ex + ey * ey <= r2 {
                    f(y, x);
                }
            }
        }
    }
}

/// An accepted stroke and the canvas MSE right after it was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedStroke {
    pub stroke: BrushStroke,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrokeLog {
    pub initial_residual: f64,
    pub strokes: Vec<LoggedStroke>,
}

impl StrokeLog {
    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn final_residual(&self) -> f64 {
        self.strokes.last().map_or(self.initial_residual, |s| s.residual)
    }

    pub fn residuals_non_increasing(&self) -> bool {
        let mut prev = self.initial_residual;
        self.strokes.iter().all(|s| {
            let ok = s.residual <= prev;
            prev = s.residual;
            ok
        })
    }

    /// One record per line: `cx cy angle length width r g b opacity err`.
    pub fn to_lines(&self) -> String {
        self.strokes.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn parse_lines(text: &str) -> Result<Vec<LoggedStroke>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for LoggedStroke {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.stroke;
        write!(
            f,
            "{} {} {} {} {} {} {} {} {} {}",
            s.center.0,
            s.center.1,
            s.angle,
            s.length,
            s.width,
            s.color[0],
            s.color[1],
            s.color[2],
            s.opacity,
            self.residual
        )
    }
}

impl FromStr for LoggedStroke {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::Format(format!("stroke record needs 10 fields, got {}", fields.len())));
        }
        let f64_at = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("field {i} `{}`: {e}", fields[i])))
        };
        let f32_at = |i: usize| {
            fields[i]
                .parse::<f32>()
                .map_err(|e| Error::Format(format!("field {i} `{}`: {e}", fields[i])))
        };
        Ok(LoggedStroke {
            stroke: BrushStroke {
                center: (f64_at(0)?, f64_at(1)?),
                angle: f64_at(2)?,
                length: f64_at(3)?,
                width: f64_at(4)?,
                color: [f32_at(5)?, f32_at(6)?, f32_at(7)?],
                opacity: f32_at(8)?,
            },
            residual: f64_at(9)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke() -> BrushStroke {
        BrushStroke {
            center: (10.25, 7.5),
            angle: 0.3,
            length: 9.0,
            width: 3.0,
            color: [0.1, 0.2, 0.3],
            opacity: 0.85,
        }
    }

    #[test]
    fn record_round_trips_exactly() {
        let s = LoggedStroke { stroke: stroke(), residual: 0.012345678901234 };
        let back: LoggedStroke = s.to_string().parse().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn malformed_record_rejected() {
        assert!("1 2 3".parse::<LoggedStroke>().is_err());
        assert!("a 2 3 4 5 6 7 8 9 10".parse::<LoggedStroke>().is_err());
    }

    #[test]
    fn validation_catches_bad_geometry() {
        let mut s = stroke();
        assert!(s.validate(20, 20).is_ok());
        s.length = 2.0;
        assert!(s.validate(20, 20).is_err());
        let mut s = stroke();
        s.center = (25.0, 1.0);
        assert!(s.validate(20, 20).is_err());
        let mut s = stroke();
        s.opacity = 0.0;
        assert!(s.validate(20, 20).is_err());
    }

    #[test]
    fn horizontal_capsule_covers_expected_span() {
        let s = BrushStroke { center: (10.0, 10.0), angle: 0.0, length: 8.0, width: 2.0, ..stroke() };
        let mut covered = Vec::new();
        s.for_each_covered(20, 20, |y, x| covered.push((y, x)));
        // Pixel centres x+0.5 in [6, 14] on rows 9 and 10.
        assert!(covered.contains(&(9, 6)) && covered.contains(&(10, 13)));
        assert!(!covered.contains(&(9, 14)) && !covered.contains(&(8, 10)));
    }
}
