//! Byte-image container and the fixed preprocessing chain:
//! normalize → equalize → resize.

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == height * width && height > 0 && width > 0).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Option<Self> {
        let height = rows.len();
        let width = rows.first()?.len();
        if rows.iter().any(|r| r.len() != width) {
            return None;
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Raw acquisition grid: arbitrary-range nonnegative intensities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    pub height: usize,
    pub width: usize,
    /// Row-major, length height·width.
    pub data: Vec<u32>,
}

impl PixelGrid {
    pub fn from_rows(rows: &[Vec<u32>]) -> Option<Self> {
        let height = rows.len();
        let width = rows.first()?.len();
        if rows.iter().any(|r| r.len() != width) {
            return None;
        }
        Some(Self {
            height,
            width,
            data: rows.concat(),
        })
    }
}

/// Min-shifts, scales the span to [0,1], multiplies by 255, and floors to a
/// byte. A constant image (zero span) maps to all zeros.
pub fn normalize_image(grid: &PixelGrid) -> GrayImage {
    let min = grid.data.iter().copied().min().unwrap_or(0);
    let max = grid.data.iter().copied().max().unwrap_or(0);
    let data = if max == min {
        vec![0u8; grid.data.len()]
    } else {
        let span = f64::from(max - min);
        grid.data
            .iter()
            .map(|&p| (f64::from(p - min) * 255.0 / span).floor() as u8)
            .collect()
    };
    GrayImage {
        height: grid.height,
        width: grid.width,
        data,
    }
}

/// Global histogram equalization: v ↦ round(255·CDF(v)), pulling the value
/// distribution toward uniform. Monotone by construction.
pub fn equalize_histogram(image: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &p in &image.data {
        hist[usize::from(p)] += 1;
    }
    let total = image.data.len() as f64;
    let mut map = [0u8; 256];
    let mut cum = 0u64;
    for v in 0..256 {
        cum += hist[v];
        map[v] = (255.0 * cum as f64 / total).round() as u8;
    }
    GrayImage {
        height: image.height,
        width: image.width,
        data: image.data.iter().map(|&p| map[usize::from(p)]).collect(),
    }
}

/// Kolmogorov–Smirnov distance between the image's value distribution and
/// the discrete uniform on 0..=255.
pub fn ks_to_uniform(image: &GrayImage) -> f64 {
    let mut hist = [0u64; 256];
    for &p in &image.data {
        hist[usize::from(p)] += 1;
    }
    let total = image.data.len() as f64;
    let mut cum = 0u64;
    let mut ks: f64 = 0.0;
    for v in 0..256 {
        cum += hist[v];
        let emp = cum as f64 / total;
        let uni = (v + 1) as f64 / 256.0;
        ks = ks.max((emp - uni).abs());
    }
    ks
}

/// Samples `image` at fractional (row, col) with bilinear weights; points
/// outside the frame contribute `pad`.
fn bilinear_at(image: &GrayImage, row: f64, col: f64, pad: f64) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let mut acc = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let w = wr * wc;
            if w == 0.0 {
                continue;
            }
            let r = r0 + dr;
            let c = c0 + dc;
            let v = if r < 0.0
                || c < 0.0
                || r >= image.height as f64
                || c >= image.width as f64
            {
                pad
            } else {
                f64::from(image.at(r as usize, c as usize))
            };
            acc += w * v;
        }
    }
    acc
}

/// Bilinear resize to a square `target`×`target` frame (half-pixel-aligned
/// sample grid, edge-clamped). Resizing to the input's own size is exact.
pub fn resize(image: &GrayImage, target: usize) -> GrayImage {
    assert!(target >= 1, "resize target must be ≥ 1");
    let scale_r = image.height as f64 / target as f64;
    let scale_c = image.width as f64 / target as f64;
    let mut data = Vec::with_capacity(target * target);
    for r in 0..target {
        let src_r = ((r as f64 + 0.5) * scale_r - 0.5)
            .clamp(0.0, (image.height - 1) as f64);
        for c in 0..target {
            let src_c = ((c as f64 + 0.5) * scale_c - 0.5)
                .clamp(0.0, (image.width - 1) as f64);
            let v = bilinear_at(image, src_r, src_c, 0.0);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        height: target,
        width: target,
        data,
    }
}

/// Rotates about the image center by `angle_deg`, bilinear resampling with
/// zero padding outside the frame. Angle 0 is an exact copy.
pub fn rotate_image(image: &GrayImage, angle_deg: f64) -> GrayImage {
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(image.data.len());
    for r in 0..image.height {
        let yc = r as f64 - cy;
        for c in 0..image.width {
            let xc = c as f64 - cx;
            // Inverse map: rotate the destination point by −θ.
            let src_c = cos * xc + sin * yc + cx;
            let src_r = -sin * xc + cos * yc + cy;
            let v = bilinear_at(image, src_r, src_c, 0.0);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        height: image.height,
        width: image.width,
        data,
    }
}

/// Mirrors left–right.
pub fn flip_horizontal(image: &GrayImage) -> GrayImage {
    let mut data = Vec::with_capacity(image.data.len());
    for r in 0..image.height {
        let row = &image.data[r * image.width..(r + 1) * image.width];
        data.extend(row.iter().rev());
    }
    GrayImage {
        height: image.height,
        width: image.width,
        data,
    }
}
