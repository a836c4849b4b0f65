//! Built-in target patterns and the on-disk target formats: ASCII graymaps
//! for plane targets and a whitespace text format for volumes.
//!
//! Image row 0 is the top of the picture, i.e. the largest `y` index.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measurement::{contrast, TargetModel};

/// 3x5 glyphs for the letters of the built-in raster, top row first.
const GLYPH_S: [&str; 5] = ["###", "#..", "###", "..#", "###"];
const GLYPH_E: [&str; 5] = ["###", "#..", "###", "#..", "###"];
const GLYPH_U: [&str; 5] = ["#.#", "#.#", "#.#", "#.#", "###"];

/// 11x5 raster of three letters with one blank column between them,
/// top row first. Cell value is the letter index plus one, 0 for blank.
fn letter_raster() -> Vec<Vec<u8>> {
    (0..5)
        .map(|row| {
            let mut line = Vec::with_capacity(11);
            for (i, glyph) in [GLYPH_S, GLYPH_E, GLYPH_U].iter().enumerate() {
                if i > 0 {
                    line.push(0);
                }
                line.extend(glyph[row].bytes().map(|b| if b == b'#' { i as u8 + 1 } else { 0 }));
            }
            line
        })
        .collect()
}

/// Nearest-neighbor lookup of a `width x height` top-first raster onto an
/// `nx x ny` grid ordered x-fastest from the bottom row.
fn resample<T: Copy>(raster: &[Vec<T>], nx: usize, ny: usize) -> Vec<T> {
    let height = raster.len();
    let width = raster[0].len();
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let row = (ny - 1 - iy) * height / ny;
        for ix in 0..nx {
            let col = ix * width / nx;
            out.push(raster[row][col]);
        }
    }
    out
}

/// Letter raster padded by one blank cell on every side, so the letters
/// do not touch the grid edge.
fn padded_letters() -> Vec<Vec<u8>> {
    let inner = letter_raster();
    let width = inner[0].len() + 2;
    let mut out = vec![vec![0; width]];
    for row in inner {
        let mut line = vec![0];
        line.extend(row);
        line.push(0);
        out.push(line);
    }
    out.push(vec![0; width]);
    out
}

pub const BUILTIN_PLANES: &[&str] = &["block", "checkerboard", "letters-seu"];
pub const BUILTIN_VOLUMES: &[&str] = &["block", "columnar-seu"];

/// Built-in binary plane pattern on an `nx x ny` grid.
pub fn builtin_plane(name: &str, nx: usize, ny: usize) -> Result<TargetModel> {
    let density: Vec<f64> = match name {
        "block" => (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| {
                let inside = |i: usize, n: usize| 4 * i + 2 >= n && 4 * i + 2 < 3 * n;
                f64::from(u8::from(inside(ix, nx) && inside(iy, ny)))
            })
            .collect(),
        "checkerboard" => {
            let tile_x = (nx / 4).max(1);
            let tile_y = (ny / 4).max(1);
            (0..ny)
                .flat_map(|iy| (0..nx).map(move |ix| ((ix / tile_x) + (iy / tile_y)) % 2))
                .map(|v| v as f64)
                .collect()
        }
        "letters-seu" => resample(&padded_letters(), nx, ny)
            .into_iter()
            .map(|v| f64::from(u8::from(v > 0)))
            .collect(),
        other => return Err(Error::Config(format!("unknown plane target `{other}`"))),
    };
    TargetModel::plane([nx, ny], density)
}

/// Built-in volume on an `nx x ny x nz` grid. `columnar-seu` extrudes the
/// letter raster along z with a different material per letter.
pub fn builtin_volume(name: &str, shape: [usize; 3], angular_frequency: f64) -> Result<TargetModel> {
    let [nx, ny, nz] = shape;
    let slice: Vec<Complex64> = match name {
        "block" => builtin_plane("block", nx, ny)?.values(),
        "columnar-seu" => {
            let materials = [
                contrast(1.0, 0.0, angular_frequency),
                contrast(2.0, 0.0, angular_frequency),
                contrast(3.0, 0.01, angular_frequency),
                contrast(1.5, 0.005, angular_frequency),
            ];
            resample(&padded_letters(), nx, ny)
                .into_iter()
                .map(|v| materials[usize::from(v)])
                .collect()
        }
        other => return Err(Error::Config(format!("unknown volume target `{other}`"))),
    };
    let contrast: Vec<Complex64> = (0..nz).flat_map(|_| slice.iter().copied()).collect();
    TargetModel::volume(shape, contrast)
}

/// Parsed ASCII graymap.
#[derive(Debug, Clone, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Row-major, top row first.
    pub pixels: Vec<u32>,
}

pub fn parse_pgm(text: &str) -> Result<Graymap> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::MalformedImage("missing P2 magic".into()));
    }
    let mut number = |what: &str| -> Result<u32> {
        tokens
            .next()
            .ok_or_else(|| Error::MalformedImage(format!("missing {what}")))?
            .parse()
            .map_err(|_| Error::MalformedImage(format!("bad {what}")))
    };
    let width = number("width")? as usize;
    let height = number("height")? as usize;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedImage(format!("bad header {width}x{height} max {maxval}")));
    }
    let pixels = (0..width * height)
        .map(|_| number("pixel"))
        .collect::<Result<Vec<u32>>>()?;
    if pixels.iter().any(|&p| p > maxval) {
        return Err(Error::MalformedImage("pixel exceeds maxval".into()));
    }
    if tokens.next().is_some() {
        return Err(Error::MalformedImage("trailing data".into()));
    }
    Ok(Graymap {
        width,
        height,
        maxval,
        pixels,
    })
}

/// Binarizes at half of `maxval` and maps onto an `nx x ny` grid. Without
/// `resample` the image must already match the grid.
pub fn plane_from_pgm(image: &Graymap, nx: usize, ny: usize, allow_resample: bool) -> Result<TargetModel> {
    if !allow_resample && (image.width != nx || image.height != ny) {
        return Err(Error::SizeMismatch {
            expected_x: nx,
            expected_y: ny,
            found_x: image.width,
            found_y: image.height,
        });
    }
    let raster: Vec<Vec<f64>> = image
        .pixels
        .chunks(image.width)
        .map(|row| row.iter().map(|&p| f64::from(u8::from(2 * p >= image.maxval))).collect())
        .collect();
    TargetModel::plane([nx, ny], resample(&raster, nx, ny))
}

pub fn load_target_2d(path: &Path, nx: usize, ny: usize) -> Result<TargetModel> {
    let text = fs::read_to_string(path)?;
    plane_from_pgm(&parse_pgm(&text)?, nx, ny, true)
}

/// Writes an x-fastest, bottom-row-first grid as an 8-bit P2 image,
/// mapping `[lo, hi]` linearly onto `[0, 255]`.
pub fn write_pgm<W: Write>(mut w: W, nx: usize, ny: usize, values: &[f64], range: Option<(f64, f64)>) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::DimensionMismatch {
            expected: nx * ny,
            found: values.len(),
        });
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = hi - lo;
    writeln!(w, "P2")?;
    writeln!(w, "{nx} {ny}")?;
    writeln!(w, "255")?;
    for iy in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|ix| {
                let v = values[iy * nx + ix];
                let level = if span > 0.0 && v.is_finite() {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0)
                } else {
                    0.0
                };
                format!("{}", level as u8)
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Parses the volume format: `nx ny nz`, then `eps_r sigma` per voxel,
/// x-fastest. `#` starts a comment.
pub fn parse_volume(text: &str, angular_frequency: f64) -> Result<TargetModel> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let mut dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::MalformedVolume(format!("missing {what}")))?
            .parse()
            .map_err(|_| Error::MalformedVolume(format!("bad {what}")))
    };
    let shape = [dim("nx")?, dim("ny")?, dim("nz")?];
    if shape.contains(&0) {
        return Err(Error::MalformedVolume("zero dimension".into()));
    }
    let count: usize = shape.iter().product();
    let values: Vec<f64> = tokens
        .map(|t| t.parse().map_err(|_| Error::MalformedVolume(format!("bad value `{t}`"))))
        .collect::<Result<_>>()?;
    if values.len() != 2 * count {
        return Err(Error::MalformedVolume(format!(
            "expected {} values, found {}",
            2 * count,
            values.len()
        )));
    }
    let contrast = values
        .chunks(2)
        .map(|pair| {
            let (eps_r, sigma) = (pair[0], pair[1]);
            if !(eps_r >= 1.0 && sigma >= 0.0) {
                return Err(Error::MalformedVolume(format!("eps_r {eps_r}, sigma {sigma}")));
            }
            Ok(contrast(eps_r, sigma, angular_frequency))
        })
        .collect::<Result<Vec<_>>>()?;
    TargetModel::volume(shape, contrast)
}

pub fn load_target_3d(path: &Path, angular_frequency: f64) -> Result<TargetModel> {
    parse_volume(&fs::read_to_string(path)?, angular_frequency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density(t: &TargetModel) -> Vec<f64> {
        t.values().iter().map(|c| c.re).collect()
    }

    #[test]
    fn white_and_black_images() {
        let white = parse_pgm("P2\n3 2\n255\n255 255 255\n200 255 128\n").unwrap();
        assert_eq!(density(&plane_from_pgm(&white, 3, 2, false).unwrap()), vec![1.0; 6]);
        let black = parse_pgm("P2 # comment\n3 2 255\n0 0 0 0 0 127\n").unwrap();
        assert_eq!(density(&plane_from_pgm(&black, 3, 2, false).unwrap()), vec![0.0; 6]);
    }

    #[test]
    fn checkerboard_image_maps_exactly() {
        // top row: white black; bottom row: black white
        let img = parse_pgm("P2\n2 2\n1\n1 0\n0 1\n").unwrap();
        let t = plane_from_pgm(&img, 2, 2, false).unwrap();
        // x-fastest from the bottom row
        assert_eq!(density(&t), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(density(&builtin_plane("checkerboard", 2, 2).unwrap()), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn size_mismatch_and_resample() {
        let img = parse_pgm("P2\n2 2\n1\n1 1\n0 0\n").unwrap();
        assert!(matches!(plane_from_pgm(&img, 4, 4, false), Err(Error::SizeMismatch { .. })));
        let t = plane_from_pgm(&img, 4, 4, true).unwrap();
        assert_eq!(density(&t), [vec![0.0; 8], vec![1.0; 8]].concat());
    }

    #[test]
    fn malformed_images() {
        for bad in ["P5\n1 1\n1\n0\n", "P2\n2 2\n1\n0 0 0\n", "P2\n1 1\n1\n2\n", "P2\n1 1\n1\n1 1\n"] {
            assert!(matches!(parse_pgm(bad), Err(Error::MalformedImage(_))), "{bad}");
        }
    }

    #[test]
    fn pgm_round_trip() {
        let t = builtin_plane("letters-seu", 16, 16).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, 16, 16, &density(&t), Some((0.0, 1.0))).unwrap();
        let back = plane_from_pgm(&parse_pgm(&String::from_utf8(buf).unwrap()).unwrap(), 16, 16, false).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn builtins_are_nonempty_and_binary() {
        for name in BUILTIN_PLANES {
            let t = builtin_plane(name, 16, 16).unwrap();
            let d = density(&t);
            let ones = d.iter().filter(|&&v| v == 1.0).count();
            assert!(ones > 0 && ones < 256, "{name}");
        }
        assert!(builtin_plane("nope", 4, 4).is_err());
        let block = density(&builtin_plane("block", 4, 4).unwrap());
        assert_eq!(block, vec![0., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn volume_parsing() {
        let w = 2.0 * std::f64::consts::PI * 3e10;
        let air = parse_volume("1 1 2\n1 0\n1 0\n", w).unwrap();
        assert!(air.values().iter().all(|c| c.norm() == 0.0));
        let unit = parse_volume("# header\n1 1 1\n2 0\n", w).unwrap();
        assert_eq!(unit.values(), vec![Complex64::new(1.0, 0.0)]);
        let lossy = parse_volume("2 1 1\n3 0.1\n4 0.2\n", w).unwrap();
        assert!(lossy.values().iter().all(|c| c.im > 0.0));
        for bad in ["1 1\n", "1 1 1\n2\n", "1 1 1\n0.5 0\n", "1 1 1\n2 -1\n", "0 1 1\n"] {
            assert!(matches!(parse_volume(bad, w), Err(Error::MalformedVolume(_))), "{bad}");
        }
    }

    #[test]
    fn columnar_volume_repeats_slices() {
        let w = 2.0 * std::f64::consts::PI * 3e10;
        let t = builtin_volume("columnar-seu", [8, 8, 4], w).unwrap();
        let v = t.values();
        assert_eq!(v.len(), 256);
        assert_eq!(v[..64], v[64..128]);
        assert!(v.iter().any(|c| c.im > 0.0));
        assert!(v.iter().any(|c| c.norm() == 0.0));
    }
}
